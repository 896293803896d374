use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::trace::NominalTrace;
use crate::envs::Trajectory;
use crate::error::{check_len, Error, Result};

pub const PERTURBATION_STD_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    DiagonalGaussian,
}

/// Zero-mean diagonal Gaussian over state deviations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationModel {
    pub std: Vec<f64>,
    pub kind: PerturbationKind,
}

impl PerturbationModel {
    pub fn new(std: Vec<f64>) -> Result<Self> {
        if std.is_empty() || std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Domain(format!("perturbation stds must be positive, got {std:?}")));
        }
        Ok(Self {
            std,
            kind: PerturbationKind::DiagonalGaussian,
        })
    }

    pub fn dim(&self) -> usize {
        self.std.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.std
            .iter()
            .map(|s| {
                let e: f64 = StandardNormal.sample(rng);
                s * e
            })
            .collect()
    }

    /// Per-dimension root-mean-square of `deviations`, floored.
    pub fn from_deviations(deviations: &[Vec<f64>]) -> Result<Self> {
        let first = deviations
            .first()
            .ok_or_else(|| Error::Argument("no deviations to estimate from".into()))?;
        let n = first.len();
        let mut sq = vec![0.0; n];
        for d in deviations {
            check_len("perturbation deviation", n, d.len())?;
            for (acc, v) in sq.iter_mut().zip(d) {
                *acc += v * v;
            }
        }
        let count = deviations.len() as f64;
        Self::new(
            sq.into_iter()
                .map(|s| (s / count).sqrt().max(PERTURBATION_STD_FLOOR))
                .collect(),
        )
    }
}

/// Pools `s_t - s*_t` over `t = 1..=T` and all rollouts. Step 0 is excluded
/// because every rollout starts exactly on the nominal state.
pub fn estimate_perturbation_model(trajectories: &[Trajectory], nominal: &NominalTrace) -> Result<PerturbationModel> {
    if trajectories.is_empty() {
        return Err(Error::Argument("at least one rollout is required".into()));
    }
    let mut deviations = Vec::new();
    for traj in trajectories {
        check_len("rollout length", nominal.states.len(), traj.states.len())?;
        for (s, s_ref) in traj.states.iter().zip(&nominal.states).skip(1) {
            deviations.push(s.iter().zip(s_ref).map(|(a, b)| a - b).collect());
        }
    }
    PerturbationModel::from_deviations(&deviations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_nonpositive() {
        assert!(PerturbationModel::new(vec![0.1, 0.0]).is_err());
        assert!(PerturbationModel::new(vec![]).is_err());
    }

    #[test]
    fn zero_deviations_hit_floor() {
        let m = PerturbationModel::from_deviations(&vec![vec![0.0, 0.0]; 10]).unwrap();
        assert_eq!(m.std, vec![PERTURBATION_STD_FLOOR; 2]);
    }

    #[test]
    fn recovers_known_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = PerturbationModel::new(vec![0.2, 0.2, 0.2]).unwrap();
        let devs: Vec<_> = (0..1000).map(|_| truth.sample(&mut rng)).collect();
        let est = PerturbationModel::from_deviations(&devs).unwrap();
        for s in est.std {
            assert!((s - 0.2).abs() < 0.02, "{s}");
        }
    }
}
