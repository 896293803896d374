use crate::envs::{relative_performance, rollout, EnvSpec, Policy, ReferenceTrajectory, RolloutNoiseConfig};
use crate::error::{Error, Result};

/// Relative performance of `policy` on `reference` for each noise seed. The
/// expert runs under the identical noise stream.
pub fn relative_performance_under_noise<P: Policy + ?Sized, E: Policy + ?Sized>(
    env: &EnvSpec,
    policy: &P,
    expert: &E,
    reference: &ReferenceTrajectory,
    action_noise_std: f64,
    seeds: &[u64],
) -> Result<Vec<f64>> {
    if seeds.is_empty() {
        return Err(Error::Argument("no evaluation seeds".into()));
    }
    seeds
        .iter()
        .map(|&seed| {
            let noise = RolloutNoiseConfig::new(action_noise_std, seed)?;
            let expert_return = rollout(env, expert, &noise, reference.start(), &reference.states)?.episode_return();
            let ret = rollout(env, policy, &noise, reference.start(), &reference.states)?.episode_return();
            relative_performance(ret, expert_return)
        })
        .collect()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
