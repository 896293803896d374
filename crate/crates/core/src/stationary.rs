//! Stationary (phase-free) cloning from a few periods of a limit cycle.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloning::{
    perturbation_model_for, record_nominal_trace, rollout_seed, train_student, LossKind, NominalTrace, PerturbationModel, StudentPolicy,
    StudentTrainingConfig, TrainingData,
};
use crate::envs::{build_expert, rollout, EnvSpec, GeneratorParams, LqrCost, ReferenceTrajectory, RolloutNoiseConfig};
use crate::error::{Error, Result};
use crate::eval::{pca_fit, pca_project, write_points, PcaProjection};
use crate::io::write_json;

/// Tolerance on the state mismatch between consecutive period boundaries.
pub const PERIODICITY_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitCycleClip {
    pub trace: NominalTrace,
    pub period: usize,
}

impl LimitCycleClip {
    pub fn new(trace: NominalTrace, period: usize) -> Result<Self> {
        if period == 0 || trace.horizon() % period != 0 {
            return Err(Error::Argument(format!(
                "trace of {} steps is not a whole number of {period}-step periods",
                trace.horizon()
            )));
        }
        let clip = Self { trace, period };
        if clip.periods() < 3 {
            return Err(Error::Argument(format!("need at least 3 periods, got {}", clip.periods())));
        }
        for k in 0..clip.periods() {
            let a = &clip.trace.states[k * period];
            let b = &clip.trace.states[(k + 1) * period];
            let gap = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            if gap > PERIODICITY_TOL {
                return Err(Error::Domain(format!("period {k} does not close: gap {gap:.3e}")));
            }
        }
        Ok(clip)
    }

    pub fn periods(&self) -> usize {
        self.trace.horizon() / self.period
    }

    /// States of one period, `period` points of a closed loop.
    pub fn cycle(&self) -> &[Vec<f64>] {
        &self.trace.states[..self.period]
    }

    /// The cycle unrolled from phase `phase` for `steps` steps (`steps + 1` states).
    pub fn periodic_reference(&self, phase: usize, steps: usize) -> Vec<Vec<f64>> {
        (0..=steps)
            .map(|t| self.cycle()[(phase + t) % self.period].clone())
            .collect()
    }
}

/// Records `periods` periods of a pendulum oscillation expert. The expert
/// is built on a longer horizon so its gains are periodic over the kept
/// window.
pub fn pendulum_limit_cycle(
    env: &EnvSpec,
    amplitude: f64,
    period_steps: usize,
    periods: usize,
) -> Result<(LimitCycleClip, crate::envs::ExpertPolicy, ReferenceTrajectory)> {
    let params = GeneratorParams::Oscillation {
        amplitude,
        period_steps,
        phase: 0.0,
        center: std::f64::consts::PI,
    };
    let reference = ReferenceTrajectory::generate(env, "limit-cycle", params, (periods + 2) * period_steps)?;
    let expert = build_expert(env, &reference, LqrCost::default())?;
    let full = record_nominal_trace(env, &expert, &reference.clip_id, reference.start(), reference.horizon())?;
    let clip = LimitCycleClip::new(full.slice(0, periods * period_steps)?, period_steps)?;
    Ok((clip, expert, reference))
}

/// Perturbation model from noisy expert rollouts over the expert's full horizon.
pub fn limit_cycle_perturbation(
    env: &EnvSpec,
    expert: &crate::envs::ExpertPolicy,
    reference: &ReferenceTrajectory,
    seed: u64,
) -> Result<PerturbationModel> {
    let full = record_nominal_trace(env, expert, &reference.clip_id, reference.start(), reference.horizon())?;
    perturbation_model_for(env, expert, reference, &full, seed)
}

/// LFPC with a phase-free student.
pub fn clone_stationary(
    clip: &LimitCycleClip,
    perturbation: &PerturbationModel,
    config: &StudentTrainingConfig,
) -> Result<StudentPolicy> {
    let config = StudentTrainingConfig {
        time_indexed: false,
        ..config.clone()
    };
    let data = TrainingData::Trace {
        trace: &clip.trace,
        perturbation,
    };
    Ok(train_student(LossKind::Lfpc, data, &config)?.0)
}

/// A stationary student together with the cycle and perturbation model it
/// was cloned from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryModel {
    pub env: EnvSpec,
    pub clip: LimitCycleClip,
    pub perturbation: PerturbationModel,
    pub student: StudentPolicy,
}

/// `3 x` the root-mean-square of the perturbation stds.
pub fn tube_radius(perturbation: &PerturbationModel) -> f64 {
    let n = perturbation.std.len() as f64;
    3.0 * (perturbation.std.iter().map(|s| s * s).sum::<f64>() / n).sqrt()
}

fn point_segment_distance(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let ap: Vec<f64> = a.iter().zip(p).map(|(x, y)| y - x).collect();
    let len2: f64 = ab.iter().map(|v| v * v).sum();
    let u = if len2 > 0.0 {
        (ab.iter().zip(&ap).map(|(x, y)| x * y).sum::<f64>() / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ap.iter().zip(&ab).map(|(x, y)| (x - u * y).powi(2)).sum::<f64>().sqrt()
}

/// Euclidean distance from `state` to the closed polyline through `cycle`.
pub fn distance_to_cycle(cycle: &[Vec<f64>], state: &[f64]) -> f64 {
    let n = cycle.len();
    (0..n)
        .map(|i| point_segment_distance(state, &cycle[i], &cycle[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

/// Runs `student` from `start` for `steps` steps and returns the states and
/// the distance-to-cycle series (one entry per state).
pub fn cycle_rollout(
    env: &EnvSpec,
    student: &StudentPolicy,
    clip: &LimitCycleClip,
    start: &[f64],
    phase: usize,
    steps: usize,
    noise: &RolloutNoiseConfig,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let reference = clip.periodic_reference(phase, steps);
    let traj = rollout(env, student, noise, start, &reference)?;
    let dist = traj.states.iter().map(|s| distance_to_cycle(clip.cycle(), s)).collect();
    Ok((traj.states, dist))
}

/// Random on-cycle phase and a start perturbed by `scale` times a draw
/// from `perturbation`.
pub fn perturbed_start<R: Rng + ?Sized>(
    clip: &LimitCycleClip,
    perturbation: &PerturbationModel,
    scale: f64,
    rng: &mut R,
) -> (usize, Vec<f64>) {
    let phase = rng.gen_range(0..clip.period);
    let delta = perturbation.sample(rng);
    let start = clip.cycle()[phase].iter().zip(&delta).map(|(s, d)| s + scale * d).collect();
    (phase, start)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitCycleReport {
    pub tube_radius: f64,
    pub projection: PcaProjection,
    pub reference_points: Vec<Vec<f64>>,
    pub noiseless_points: Vec<Vec<f64>>,
    pub noisy_points: Vec<Vec<Vec<f64>>>,
    pub noiseless_distance: Vec<f64>,
    pub noisy_distance: Vec<Vec<f64>>,
}

impl LimitCycleReport {
    pub fn noisy_mean_distance(&self) -> f64 {
        let all: Vec<f64> = self.noisy_distance.iter().flatten().copied().collect();
        all.iter().sum::<f64>() / all.len() as f64
    }

    pub fn noiseless_mean_distance(&self) -> f64 {
        self.noiseless_distance.iter().sum::<f64>() / self.noiseless_distance.len() as f64
    }

    pub fn max_noisy_distance(&self) -> f64 {
        self.noisy_distance.iter().flatten().copied().fold(0.0, f64::max)
    }

    /// Writes `report.json` and the projected point files into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("report.json"), self)?;
        write_points(&dir.join("reference.points.csv"), &self.reference_points)?;
        write_points(&dir.join("noiseless.points.csv"), &self.noiseless_points)?;
        let noisy: Vec<Vec<f64>> = self
            .noisy_points
            .iter()
            .enumerate()
            .flat_map(|(i, pts)| {
                pts.iter().map(move |p| {
                    let mut row = vec![i as f64];
                    row.extend_from_slice(p);
                    row
                })
            })
            .collect();
        write_points(&dir.join("noisy.points.csv"), &noisy)
    }
}

/// Rolls the student out on-cycle without noise and with action noise
/// `action_noise_std` for each seed, fits PCA on the noisy states and
/// projects everything into it.
pub fn limit_cycle_report(
    env: &EnvSpec,
    student: &StudentPolicy,
    clip: &LimitCycleClip,
    perturbation: &PerturbationModel,
    seeds: &[u64],
    periods: usize,
    action_noise_std: f64,
) -> Result<LimitCycleReport> {
    if seeds.is_empty() {
        return Err(Error::Argument("no seeds".into()));
    }
    let steps = periods * clip.period;
    let start = clip.cycle()[0].clone();
    let (clean_states, noiseless_distance) =
        cycle_rollout(env, student, clip, &start, 0, steps, &RolloutNoiseConfig::noiseless())?;
    let mut noisy_states = Vec::with_capacity(seeds.len());
    let mut noisy_distance = Vec::with_capacity(seeds.len());
    for (i, &seed) in seeds.iter().enumerate() {
        let noise = RolloutNoiseConfig::new(action_noise_std, rollout_seed(seed, i))?;
        let (s, d) = cycle_rollout(env, student, clip, &start, 0, steps, &noise)?;
        noisy_states.push(s);
        noisy_distance.push(d);
    }
    let pooled: Vec<Vec<f64>> = noisy_states.iter().flatten().cloned().collect();
    let k = env.state_dim().min(3);
    let projection = pca_fit(&pooled, k)?;
    let project_all = |states: &[Vec<f64>]| -> Result<Vec<Vec<f64>>> {
        states.iter().map(|s| pca_project(&projection, s)).collect()
    };
    Ok(LimitCycleReport {
        tube_radius: tube_radius(perturbation),
        reference_points: project_all(clip.cycle())?,
        noiseless_points: project_all(&clean_states)?,
        noisy_points: noisy_states.iter().map(|s| project_all(s)).collect::<Result<_>>()?,
        noiseless_distance,
        noisy_distance,
        projection,
    })
}

/// Per-seed distance to the cycle after `after_periods`
/// periods, from starts perturbed by `scale` times the perturbation model.
pub fn return_to_cycle_distance(
    env: &EnvSpec,
    student: &StudentPolicy,
    clip: &LimitCycleClip,
    perturbation: &PerturbationModel,
    scale: f64,
    after_periods: usize,
    seeds: &[u64],
) -> Result<Vec<f64>> {
    seeds
        .iter()
        .map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (phase, start) = perturbed_start(clip, perturbation, scale, &mut rng);
            let steps = after_periods * clip.period;
            let (_, dist) = cycle_rollout(env, student, clip, &start, phase, steps, &RolloutNoiseConfig::noiseless())?;
            Ok(dist[steps])
        })
        .collect()
}
