use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dynamics::{clamp_action, EnvSpec};
use super::expert::Policy;
use crate::error::{check_len, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutNoiseConfig {
    /// Per-actuator i.i.d. Gaussian action noise std `eta`.
    pub action_noise_std: f64,
    pub seed: u64,
}

impl RolloutNoiseConfig {
    pub fn new(action_noise_std: f64, seed: u64) -> Result<Self> {
        if !(action_noise_std >= 0.0) {
            return Err(Error::Argument(format!(
                "action noise std must be nonnegative, got {action_noise_std}"
            )));
        }
        Ok(Self {
            action_noise_std,
            seed,
        })
    }

    pub fn noiseless() -> Self {
        Self {
            action_noise_std: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `T + 1` visited states.
    pub states: Vec<Vec<f64>>,
    /// Noisy, clamped actions actually applied.
    pub executed_actions: Vec<Vec<f64>>,
    /// The policy's mean actions at the visited states.
    pub logged_mean_actions: Vec<Vec<f64>>,
    pub per_step_rewards: Vec<f64>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.executed_actions.len()
    }

    pub fn episode_return(&self) -> f64 {
        mean(&self.per_step_rewards)
    }
}

/// `exp(-|s - s_ref|^2 / (2 w^2))`.
pub fn tracking_reward(state: &[f64], reference_state: &[f64], width: f64) -> f64 {
    let d2: f64 = state
        .iter()
        .zip(reference_state)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    (-d2 / (2.0 * width * width)).exp()
}

/// Mean per-step tracking reward of `trajectory` against `reference`
/// (`reference[t + 1]` scores the state reached after step `t`).
pub fn episode_return(trajectory: &Trajectory, reference: &[Vec<f64>], width: f64) -> Result<f64> {
    check_len("reference length", trajectory.states.len(), reference.len())?;
    let rewards: Vec<f64> = trajectory.states[1..]
        .iter()
        .zip(&reference[1..])
        .map(|(s, r)| tracking_reward(s, r, width))
        .collect();
    Ok(mean(&rewards))
}

pub fn relative_performance(candidate_return: f64, expert_return: f64) -> Result<f64> {
    if !(expert_return > 0.0) {
        return Err(Error::Domain(format!(
            "expert return must be positive, got {expert_return}"
        )));
    }
    Ok(candidate_return / expert_return)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Runs `policy` for `reference.len() - 1` steps from `start`, adding
/// `eta`-scaled standard normal noise to each mean action before clamping.
/// The noise stream depends only on the seed, so different policies under
/// the same config see the same perturbations.
pub fn rollout<P: Policy + ?Sized>(
    env: &EnvSpec,
    policy: &P,
    noise: &RolloutNoiseConfig,
    start: &[f64],
    reference: &[Vec<f64>],
) -> Result<Trajectory> {
    check_len("rollout start state", env.state_dim(), start.len())?;
    if reference.len() < 2 {
        return Err(Error::Argument("reference needs at least two states".into()));
    }
    let horizon = reference.len() - 1;
    let m = env.action_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut states = Vec::with_capacity(horizon + 1);
    let mut executed = Vec::with_capacity(horizon);
    let mut logged = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut s = start.to_vec();
    states.push(s.clone());
    for t in 0..horizon {
        let mean_action = policy.act(t, &s)?;
        check_len("policy output", m, mean_action.len())?;
        let a: Vec<f64> = mean_action
            .iter()
            .map(|mu| {
                let eps: f64 = StandardNormal.sample(&mut rng);
                clamp_action(mu + noise.action_noise_std * eps)
            })
            .collect();
        s = env.step(&s, &a)?;
        rewards.push(tracking_reward(&s, &reference[t + 1], env.reward_width));
        states.push(s.clone());
        executed.push(a);
        logged.push(mean_action);
    }
    Ok(Trajectory {
        states,
        executed_actions: executed,
        logged_mean_actions: logged,
        per_step_rewards: rewards,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_values() {
        assert_eq!(tracking_reward(&[1.0, 2.0], &[1.0, 2.0], 0.5), 1.0);
        let r = tracking_reward(&[0.5, 0.0], &[0.0, 0.0], 0.5);
        assert!((r - (-0.5f64).exp()).abs() < 1e-15);
        assert!((r - 0.6065).abs() < 1e-4);
        let mut last = 1.0;
        for k in 1..50 {
            let r = tracking_reward(&[0.05 * k as f64], &[0.0], 0.5);
            assert!(r < last);
            last = r;
        }
    }

    #[test]
    fn relative_performance_contract() {
        assert_eq!(relative_performance(0.7, 0.7).unwrap(), 1.0);
        assert_eq!(relative_performance(0.0, 0.7).unwrap(), 0.0);
        assert!(relative_performance(0.8, 0.75).unwrap() > 1.0);
        assert!(matches!(relative_performance(0.5, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn episode_return_is_mean_reward() {
        let traj = Trajectory {
            states: vec![vec![0.0]; 3],
            executed_actions: vec![vec![0.0]; 2],
            logged_mean_actions: vec![vec![0.0]; 2],
            per_step_rewards: vec![0.5, 0.5],
        };
        assert_eq!(traj.episode_return(), 0.5);
        assert_eq!(episode_return(&traj, &vec![vec![0.0]; 3], 0.5).unwrap(), 1.0);
        assert!(episode_return(&traj, &vec![vec![0.0]; 2], 0.5).is_err());
    }

    #[test]
    fn negative_noise_rejected() {
        assert!(RolloutNoiseConfig::new(-0.1, 0).is_err());
    }
}
