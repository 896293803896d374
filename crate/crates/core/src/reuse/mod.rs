//! Reusing a frozen decoder as the action space of a new high-level
//! controller on a sparse go-to-target task.

mod task;

pub use task::{GoToTargetTask, TaskState};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cloning::rollout_seed;
use crate::envs::clamp_actions;
use crate::error::{Error, Result};
use crate::eval::median;
use crate::nn::{Activation, AdamConfig, AdamState, MlpSpec, OutputActivation, Tape};
use crate::npmp::NpmpModel;

/// Bound on every latent the high-level policy emits.
pub const LATENT_BOUND: f64 = 3.0;

/// `z = 3 tanh(f(obs))` for an MLP `f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HighLevelPolicy {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
    pub scale: f64,
}

impl HighLevelPolicy {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, latent_dim: usize, hidden: Vec<usize>, rng: &mut R) -> Result<Self> {
        let spec = MlpSpec::new(obs_dim, hidden, latent_dim, Activation::Tanh, OutputActivation::Linear)?;
        let params = spec.init_params(rng);
        Ok(Self {
            spec,
            params,
            scale: LATENT_BOUND,
        })
    }

    pub fn squash(&self, pre: &[f64]) -> Vec<f64> {
        pre.iter().map(|u| self.scale * u.tanh()).collect()
    }

    pub fn latent(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.squash(&self.spec.forward(&self.params, obs)?))
    }
}

/// One deterministic task step: latent from the HL policy, action from the
/// decoder mean, then the environment.
pub fn reuse_step<R: Rng + ?Sized>(
    model: &NpmpModel,
    hl: &HighLevelPolicy,
    task: &GoToTargetTask,
    ts: &mut TaskState,
    rng: &mut R,
) -> Result<(Vec<f64>, f64)> {
    let z = hl.latent(&task.observe(&ts.state, ts.target))?;
    step_with_latent(model, task, ts, &z, rng)
}

fn step_with_latent<R: Rng + ?Sized>(
    model: &NpmpModel,
    task: &GoToTargetTask,
    ts: &mut TaskState,
    z: &[f64],
    rng: &mut R,
) -> Result<(Vec<f64>, f64)> {
    let mut action = model.decode_mean(z, &ts.state)?;
    clamp_actions(&mut action);
    let next = task.env.step(&ts.state, &action)?;
    let reward = ts.advance(task, next, rng);
    Ok((action, reward))
}

pub fn check_compatible(model: &NpmpModel, hl: &HighLevelPolicy, task: &GoToTargetTask) -> Result<()> {
    model.check_env(task.env.kind)?;
    if hl.spec.output_dim != model.latent_dim() || hl.spec.input_dim != task.observation_dim() {
        return Err(Error::Compatibility(format!(
            "high-level policy maps {} -> {}, task needs {} -> {}",
            hl.spec.input_dim,
            hl.spec.output_dim,
            task.observation_dim(),
            model.latent_dim()
        )));
    }
    Ok(())
}

/// Undiscounted return of one deterministic episode whose randomness
/// (start, targets) comes from `seed`.
pub fn episode_return(model: &NpmpModel, hl: &HighLevelPolicy, task: &GoToTargetTask, seed: u64) -> Result<f64> {
    check_compatible(model, hl, task)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ts = TaskState::reset(task, &mut rng);
    let mut total = 0.0;
    for _ in 0..task.episode_len {
        total += reuse_step(model, hl, task, &mut ts, &mut rng)?.1;
    }
    Ok(total)
}

/// SHA-256 of the decoder parameters' bit patterns.
pub fn decoder_checksum(model: &NpmpModel) -> String {
    let mut h = Sha256::new();
    for p in &model.decoder_params {
        h.update(p.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HlOptimizer {
    PolicyGradient,
    CrossEntropyMethod,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReuseConfig {
    pub optimizer: HlOptimizer,
    pub iterations: usize,
    pub episodes_per_iteration: usize,
    pub hidden_dims: Vec<usize>,
    pub learning_rate: f64,
    /// Std of the Gaussian exploration noise added before the tanh.
    pub exploration_std: f64,
    pub discount: f64,
    /// Weight of the newest batch in the per-step moving-average baseline.
    pub baseline_rate: f64,
    pub cem_population: usize,
    pub cem_elites: usize,
    pub cem_init_std: f64,
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
}

impl Default for ReuseConfig {
    fn default() -> Self {
        Self {
            optimizer: HlOptimizer::PolicyGradient,
            iterations: 150,
            episodes_per_iteration: 8,
            hidden_dims: vec![32, 32],
            learning_rate: 3e-3,
            exploration_std: 0.5,
            discount: 0.97,
            baseline_rate: 0.1,
            cem_population: 16,
            cem_elites: 4,
            cem_init_std: 0.3,
            seeds: (0..10).collect(),
            eval_episodes: 4,
        }
    }
}

impl ReuseConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.episodes_per_iteration == 0 {
            errs.push("episodes_per_iteration must be positive".to_string());
        }
        if !(self.exploration_std > 0.0) {
            errs.push("exploration_std must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.discount) {
            errs.push("discount must lie in [0, 1]".into());
        }
        if self.cem_elites == 0 || self.cem_elites > self.cem_population {
            errs.push("cem_elites must lie in 1..=cem_population".into());
        }
        if self.seeds.is_empty() {
            errs.push("at least one seed is required".into());
        }
        if self.eval_episodes == 0 {
            errs.push("eval_episodes must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// An untrained policy, as used for the random baseline.
pub fn init_hl(model: &NpmpModel, task: &GoToTargetTask, config: &ReuseConfig, seed: u64) -> Result<HighLevelPolicy> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    HighLevelPolicy::new(task.observation_dim(), model.latent_dim(), config.hidden_dims.clone(), &mut rng)
}

struct ExploredStep {
    tape: Tape,
    noise: Vec<f64>,
}

fn explore_episode(
    model: &NpmpModel,
    hl: &HighLevelPolicy,
    task: &GoToTargetTask,
    std: f64,
    seed: u64,
) -> Result<(Vec<ExploredStep>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ts = TaskState::reset(task, &mut rng);
    let mut steps = Vec::with_capacity(task.episode_len);
    let mut rewards = Vec::with_capacity(task.episode_len);
    for _ in 0..task.episode_len {
        let tape = hl.spec.forward_tape(&hl.params, &task.observe(&ts.state, ts.target))?;
        let noise: Vec<f64> = (0..hl.spec.output_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let pre: Vec<f64> = tape.output().iter().zip(&noise).map(|(h, e)| h + std * e).collect();
        let z = hl.squash(&pre);
        rewards.push(step_with_latent(model, task, &mut ts, &z, &mut rng)?.1);
        steps.push(ExploredStep { tape, noise });
    }
    Ok((steps, rewards))
}

/// Learning curve entry: mean undiscounted return of the iteration's
/// exploratory episodes.
pub type LearningCurve = Vec<f64>;

fn train_pg(model: &NpmpModel, task: &GoToTargetTask, config: &ReuseConfig, seed: u64) -> Result<(HighLevelPolicy, LearningCurve)> {
    let mut hl = init_hl(model, task, config, seed)?;
    let mut adam = AdamState::new(hl.params.len(), AdamConfig::with_learning_rate(config.learning_rate));
    let mut baseline = vec![0.0; task.episode_len];
    let mut curve = Vec::with_capacity(config.iterations);
    let std = config.exploration_std;
    for it in 0..config.iterations {
        let mut episodes = Vec::with_capacity(config.episodes_per_iteration);
        for e in 0..config.episodes_per_iteration {
            let ep_seed = rollout_seed(seed ^ 0x4E5E_u64, it * config.episodes_per_iteration + e);
            episodes.push(explore_episode(model, &hl, task, std, ep_seed)?);
        }
        let mut to_go: Vec<Vec<f64>> = Vec::with_capacity(episodes.len());
        for (_, rewards) in &episodes {
            let mut g = vec![0.0; rewards.len()];
            let mut acc = 0.0;
            for t in (0..rewards.len()).rev() {
                acc = rewards[t] + config.discount * acc;
                g[t] = acc;
            }
            to_go.push(g);
        }
        let mut adv: Vec<Vec<f64>> = to_go
            .iter()
            .map(|g| g.iter().zip(&baseline).map(|(a, b)| a - b).collect())
            .collect();
        let n = (adv.len() * task.episode_len) as f64;
        let mean_adv = adv.iter().flatten().sum::<f64>() / n;
        let sd = (adv.iter().flatten().map(|a| (a - mean_adv).powi(2)).sum::<f64>() / n).sqrt();
        if sd > 1e-8 {
            adv.iter_mut().flatten().for_each(|a| *a /= sd);
        }
        for t in 0..task.episode_len {
            let m = to_go.iter().map(|g| g[t]).sum::<f64>() / to_go.len() as f64;
            baseline[t] += config.baseline_rate * (m - baseline[t]);
        }
        let mut grad = vec![0.0; hl.params.len()];
        for ((steps, _), a) in episodes.iter().zip(&adv) {
            for (st, &at) in steps.iter().zip(a) {
                if at == 0.0 {
                    continue;
                }
                // Descent direction on -A log pi.
                let cot: Vec<f64> = st.noise.iter().map(|e| -at * e / std / n).collect();
                hl.spec.backward(&hl.params, &st.tape, &cot, &mut grad)?;
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training {
                step: it,
                term: "policy gradient".into(),
            });
        }
        adam.step(&mut hl.params, &grad)?;
        curve.push(episodes.iter().map(|(_, r)| r.iter().sum::<f64>()).sum::<f64>() / episodes.len() as f64);
    }
    Ok((hl, curve))
}

fn train_cem(model: &NpmpModel, task: &GoToTargetTask, config: &ReuseConfig, seed: u64) -> Result<(HighLevelPolicy, LearningCurve)> {
    let mut hl = init_hl(model, task, config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xCE11);
    let mut mean = hl.params.clone();
    let mut std = vec![config.cem_init_std; mean.len()];
    let mut curve = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let ep_seeds: Vec<u64> = (0..config.episodes_per_iteration)
            .map(|e| rollout_seed(seed ^ 0xCE, it * config.episodes_per_iteration + e))
            .collect();
        let mut scored = Vec::with_capacity(config.cem_population);
        for _ in 0..config.cem_population {
            let cand: Vec<f64> = mean
                .iter()
                .zip(&std)
                .map(|(m, s)| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    m + s * e
                })
                .collect();
            hl.params = cand;
            let mut score = 0.0;
            for &s in &ep_seeds {
                score += episode_return(model, &hl, task, s)?;
            }
            scored.push((score / ep_seeds.len() as f64, hl.params.clone()));
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        let elites = &scored[..config.cem_elites];
        let k = elites.len() as f64;
        for i in 0..mean.len() {
            let m = elites.iter().map(|(_, p)| p[i]).sum::<f64>() / k;
            let v = elites.iter().map(|(_, p)| (p[i] - m).powi(2)).sum::<f64>() / k;
            mean[i] = m;
            std[i] = v.sqrt() + 0.01;
        }
        curve.push(elites.iter().map(|(s, _)| s).sum::<f64>() / k);
    }
    hl.params = mean;
    Ok((hl, curve))
}

/// Trains one high-level policy. Zero iterations return the initial policy.
pub fn train_hl(model: &NpmpModel, task: &GoToTargetTask, config: &ReuseConfig, seed: u64) -> Result<(HighLevelPolicy, LearningCurve)> {
    config.validate()?;
    task.validate()?;
    model.check_env(task.env.kind)?;
    match config.optimizer {
        HlOptimizer::PolicyGradient => train_pg(model, task, config, seed),
        HlOptimizer::CrossEntropyMethod => train_cem(model, task, config, seed),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReuseStats {
    pub seeds: Vec<u64>,
    pub per_seed_returns: Vec<f64>,
    pub median: f64,
    pub lower_quartile: f64,
    pub upper_quartile: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean deterministic return over `episodes` episodes per seed. `policies`
/// holds one policy per seed, or a single policy shared by all seeds.
pub fn evaluate_reuse(
    model: &NpmpModel,
    policies: &[HighLevelPolicy],
    task: &GoToTargetTask,
    episodes: usize,
    seeds: &[u64],
) -> Result<ReuseStats> {
    if seeds.is_empty() || episodes == 0 {
        return Err(Error::Argument("need at least one seed and one episode".into()));
    }
    if policies.len() != 1 && policies.len() != seeds.len() {
        return Err(Error::Argument(format!(
            "{} policies for {} seeds",
            policies.len(),
            seeds.len()
        )));
    }
    let mut per_seed = Vec::with_capacity(seeds.len());
    for (i, &seed) in seeds.iter().enumerate() {
        let hl = &policies[if policies.len() == 1 { 0 } else { i }];
        let mut total = 0.0;
        for e in 0..episodes {
            total += episode_return(model, hl, task, rollout_seed(seed ^ 0xE7A1, e))?;
        }
        per_seed.push(total / episodes as f64);
    }
    let mut sorted = per_seed.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(ReuseStats {
        seeds: seeds.to_vec(),
        median: median(&per_seed),
        lower_quartile: quantile(&sorted, 0.25),
        upper_quartile: quantile(&sorted, 0.75),
        per_seed_returns: per_seed,
    })
}

/// Per-seed training plus the median learning curve across seeds.
pub fn train_hl_seeds(
    model: &NpmpModel,
    task: &GoToTargetTask,
    config: &ReuseConfig,
) -> Result<(Vec<HighLevelPolicy>, Vec<LearningCurve>, LearningCurve)> {
    let mut policies = Vec::with_capacity(config.seeds.len());
    let mut curves = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let (hl, curve) = train_hl(model, task, config, seed)?;
        policies.push(hl);
        curves.push(curve);
    }
    let median_curve = (0..config.iterations)
        .map(|i| median(&curves.iter().map(|c| c[i]).collect::<Vec<_>>()))
        .collect();
    Ok((policies, curves, median_curve))
}

/// Untrained policies for each seed.
pub fn random_policies(model: &NpmpModel, task: &GoToTargetTask, config: &ReuseConfig) -> Result<Vec<HighLevelPolicy>> {
    config.seeds.iter().map(|&s| init_hl(model, task, config, s)).collect()
}
