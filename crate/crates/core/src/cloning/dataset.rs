use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{rollout, EnvSpec, Policy, ReferenceTrajectory, RolloutNoiseConfig, Trajectory};
use crate::error::{Error, Result};

/// One supervised pair. `target` is always the expert's mean action at
/// `state`, never the noisy executed action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloningRecord {
    pub t: usize,
    pub state: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSource {
    pub clip_id: String,
    pub action_noise_std: f64,
    pub n_rollouts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloningDataset {
    pub records: Vec<CloningRecord>,
    pub horizon: usize,
    pub source: DatasetSource,
}

impl CloningDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn from_trajectories(clip_id: &str, action_noise_std: f64, trajectories: &[Trajectory]) -> Result<Self> {
        let horizon = trajectories
            .first()
            .ok_or_else(|| Error::Argument("no trajectories".into()))?
            .horizon();
        let records = trajectories
            .iter()
            .flat_map(|traj| {
                (0..traj.horizon()).map(move |t| CloningRecord {
                    t,
                    state: traj.states[t].clone(),
                    target: traj.logged_mean_actions[t].clone(),
                })
            })
            .collect();
        Ok(Self {
            records,
            horizon,
            source: DatasetSource {
                clip_id: clip_id.to_string(),
                action_noise_std,
                n_rollouts: trajectories.len(),
            },
        })
    }
}

/// Seed of rollout `index` in a collection seeded with `seed`.
pub fn rollout_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `n_rollouts` noisy expert rollouts, in seed order.
pub fn collect_rollouts<P: Policy + Sync + ?Sized>(
    env: &EnvSpec,
    expert: &P,
    reference: &ReferenceTrajectory,
    action_noise_std: f64,
    n_rollouts: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if n_rollouts == 0 {
        return Err(Error::Argument("n_rollouts must be at least 1".into()));
    }
    if !(action_noise_std >= 0.0 && action_noise_std.is_finite()) {
        return Err(Error::Argument(format!("invalid noise std {action_noise_std}")));
    }
    (0..n_rollouts)
        .into_par_iter()
        .map(|i| {
            let noise = RolloutNoiseConfig::new(action_noise_std, rollout_seed(seed, i))?;
            rollout(env, expert, &noise, reference.start(), &reference.states)
        })
        .collect()
}

/// DART-style dataset: noisy states paired with the expert's mean action.
pub fn collect_bc_dataset<P: Policy + Sync + ?Sized>(
    env: &EnvSpec,
    expert: &P,
    reference: &ReferenceTrajectory,
    action_noise_std: f64,
    n_rollouts: usize,
    seed: u64,
) -> Result<CloningDataset> {
    let trajectories = collect_rollouts(env, expert, reference, action_noise_std, n_rollouts, seed)?;
    CloningDataset::from_trajectories(&reference.clip_id, action_noise_std, &trajectories)
}
