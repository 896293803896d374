use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::elbo::{elbo, sample_elbo_noise, ElboOptions, ElboSequence, GradientFlow, KlEstimator};
use super::model::{NpmpModel, DEFAULT_LOOKAHEAD};
use super::prior::PriorConfig;
use crate::cloning::{NominalTrace, PerturbationModel};
use crate::envs::{EnvKind, Trajectory};
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamConfig, AdamState, StateNormalizer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NpmpMode {
    NoisyRolloutCloning,
    Lfpc,
}

impl NpmpMode {
    pub fn name(self) -> &'static str {
        match self {
            NpmpMode::NoisyRolloutCloning => "bc-rollouts",
            NpmpMode::Lfpc => "lfpc",
        }
    }
}

impl std::str::FromStr for NpmpMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bc-rollouts" | "noisy_rollout_cloning" => Ok(NpmpMode::NoisyRolloutCloning),
            "lfpc" => Ok(NpmpMode::Lfpc),
            other => Err(Error::Argument(format!("unknown npmp mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NpmpTrainingConfig {
    pub mode: NpmpMode,
    pub beta: f64,
    pub alpha: f64,
    pub latent_dim: usize,
    pub lookahead: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub activation: Activation,
    pub batch_subsequences: usize,
    pub subsequence_len: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    pub kl_estimator: KlEstimator,
    pub gradient_flow: GradientFlow,
}

impl Default for NpmpTrainingConfig {
    fn default() -> Self {
        Self {
            mode: NpmpMode::NoisyRolloutCloning,
            beta: 0.1,
            alpha: 0.95,
            latent_dim: 8,
            lookahead: DEFAULT_LOOKAHEAD,
            encoder_hidden: vec![64, 64],
            decoder_hidden: vec![64, 64, 64],
            activation: Activation::Elu,
            batch_subsequences: 64,
            subsequence_len: 30,
            learning_rate: 1e-3,
            steps: 50_000,
            seed: 0,
            kl_estimator: KlEstimator::ClosedForm,
            gradient_flow: GradientFlow::Full,
        }
    }
}

impl NpmpTrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            errs.push(format!("beta must be positive, got {}", self.beta));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            errs.push(format!("alpha must lie in [0, 1), got {}", self.alpha));
        }
        if self.latent_dim == 0 {
            errs.push("latent_dim must be positive".into());
        }
        if self.subsequence_len < 2 {
            errs.push(format!("subsequence_len must be at least 2, got {}", self.subsequence_len));
        }
        if self.batch_subsequences == 0 {
            errs.push("batch_subsequences must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            errs.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn elbo_options(&self) -> ElboOptions {
        ElboOptions {
            beta: self.beta,
            kl: self.kl_estimator,
            flow: self.gradient_flow,
        }
    }
}

/// A noisy expert rollout: `T + 1` states and the `T` expert mean actions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutSequence {
    pub clip_id: String,
    pub states: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl RolloutSequence {
    pub fn from_trajectory(clip_id: &str, trajectory: Trajectory) -> Self {
        Self {
            clip_id: clip_id.to_string(),
            states: trajectory.states,
            targets: trajectory.logged_mean_actions,
        }
    }
}

/// What an NPMP is distilled from.
#[derive(Clone, Copy, Debug)]
pub enum NpmpData<'a> {
    Rollouts(&'a [RolloutSequence]),
    Traces {
        traces: &'a [NominalTrace],
        perturbation: &'a PerturbationModel,
    },
}

impl NpmpData<'_> {
    fn clip_ids(&self) -> Vec<&str> {
        match self {
            NpmpData::Rollouts(r) => r.iter().map(|s| s.clip_id.as_str()).collect(),
            NpmpData::Traces { traces, .. } => traces.iter().map(|t| t.clip_id.as_str()).collect(),
        }
    }

    fn states(&self) -> Box<dyn Iterator<Item = &Vec<f64>> + '_> {
        match self {
            NpmpData::Rollouts(r) => Box::new(r.iter().flat_map(|s| s.states.iter())),
            NpmpData::Traces { traces, .. } => Box::new(traces.iter().flat_map(|t| t.states.iter())),
        }
    }

    fn sequence(&self, index: usize) -> (&[Vec<f64>], &[Vec<f64>]) {
        match self {
            NpmpData::Rollouts(r) => (&r[index].states, &r[index].targets),
            NpmpData::Traces { traces, .. } => (&traces[index].states, &traces[index].actions),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NpmpTrainingLog {
    pub total: Vec<f64>,
    pub reconstruction: Vec<f64>,
    pub kl: Vec<f64>,
}

/// Draws one minibatch: a clip uniformly, then one of its sequences, then
/// a window start uniformly. LFPC mode perturbs every state in the window.
fn sample_batch<R: Rng + ?Sized>(
    data: NpmpData<'_>,
    by_clip: &[Vec<usize>],
    config: &NpmpTrainingConfig,
    rng: &mut R,
) -> Result<Vec<ElboSequence>> {
    (0..config.batch_subsequences)
        .map(|_| {
            let members = &by_clip[rng.gen_range(0..by_clip.len())];
            let index = members[rng.gen_range(0..members.len())];
            let (states, targets) = data.sequence(index);
            let len = config.subsequence_len.min(targets.len());
            let start = rng.gen_range(0..=targets.len() - len);
            match data {
                NpmpData::Rollouts(_) => ElboSequence::window(states, targets, start, len, config.lookahead),
                NpmpData::Traces { traces, perturbation } => {
                    let trace = &traces[index];
                    let n_states = (start + len - 1 + config.lookahead).min(trace.states.len() - 1) - start + 1;
                    let deltas: Vec<Vec<f64>> = (0..n_states).map(|_| perturbation.sample(rng)).collect();
                    ElboSequence::perturbed(trace, start, len, config.lookahead, &deltas)
                }
            }
        })
        .collect()
}

pub fn init_npmp(env: EnvKind, data: NpmpData<'_>, config: &NpmpTrainingConfig) -> Result<NpmpModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    NpmpModel::new(
        env,
        PriorConfig::new(config.alpha, config.latent_dim)?,
        config.lookahead,
        config.encoder_hidden.clone(),
        config.decoder_hidden.clone(),
        config.activation,
        StateNormalizer::fit(data.states())?,
        &mut rng,
    )
}

/// Trains an NPMP on a library of at least two clips. Deterministic for a
/// fixed seed.
pub fn train_npmp(env: EnvKind, data: NpmpData<'_>, config: &NpmpTrainingConfig) -> Result<(NpmpModel, NpmpTrainingLog)> {
    match (config.mode, data) {
        (NpmpMode::NoisyRolloutCloning, NpmpData::Rollouts(_)) | (NpmpMode::Lfpc, NpmpData::Traces { .. }) => {}
        _ => return Err(Error::Argument(format!("{:?} mode does not match the training data", config.mode))),
    }
    let mut by_clip: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, id) in data.clip_ids().into_iter().enumerate() {
        if data.sequence(i).1.is_empty() {
            return Err(Error::Argument(format!("clip {id} has an empty sequence")));
        }
        by_clip.entry(id).or_default().push(i);
    }
    if by_clip.len() < 2 {
        return Err(Error::Argument(format!("need at least 2 clips, got {}", by_clip.len())));
    }
    let by_clip: Vec<Vec<usize>> = by_clip.into_values().collect();

    let mut model = init_npmp(env, data, config)?;
    for (seq_states, _) in (0..data.clip_ids().len()).map(|i| data.sequence(i)) {
        if seq_states.first().map(Vec::len) != Some(model.state_dim) {
            return Err(Error::Compatibility(format!("training states do not match {}", env.name())));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x00A7_B0D1_E5);
    let adam_cfg = AdamConfig::with_learning_rate(config.learning_rate);
    let mut enc_adam = AdamState::new(model.encoder_params.len(), adam_cfg);
    let mut dec_adam = AdamState::new(model.decoder_params.len(), adam_cfg);
    let options = config.elbo_options();
    let mut log = NpmpTrainingLog::default();
    for step in 0..config.steps {
        let batch = sample_batch(data, &by_clip, config, &mut rng)?;
        let noise = sample_elbo_noise(&batch, model.latent_dim(), &mut rng);
        let out = elbo(&model, &batch, &noise, options).map_err(|e| match e {
            Error::Numeric(term) => Error::Training { step, term },
            other => other,
        })?;
        if out.encoder_grad.iter().chain(&out.decoder_grad).any(|g| !g.is_finite()) {
            return Err(Error::Training {
                step,
                term: "gradient".into(),
            });
        }
        let neg = |g: Vec<f64>| -> Vec<f64> { g.into_iter().map(|v| -v).collect() };
        enc_adam.step(&mut model.encoder_params, &neg(out.encoder_grad))?;
        dec_adam.step(&mut model.decoder_params, &neg(out.decoder_grad))?;
        if step % 1000 == 0 {
            log::debug!(
                "npmp step {step}: total {:.4} rec {:.4} kl {:.4}",
                out.total,
                out.reconstruction,
                out.kl
            );
        }
        log.total.push(out.total);
        log.reconstruction.push(out.reconstruction);
        log.kl.push(out.kl);
    }
    Ok((model, log))
}
