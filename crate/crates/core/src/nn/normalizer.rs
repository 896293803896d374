use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Affine state standardization applied to network inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StateNormalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Per-dimension mean and std of `states`, std floored at `1e-2`.
    pub fn fit<'a>(states: impl IntoIterator<Item = &'a Vec<f64>>) -> Result<Self> {
        let mut count = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        for s in states {
            if sum.is_empty() {
                sum = vec![0.0; s.len()];
                sq = vec![0.0; s.len()];
            }
            check_len("normalizer state", sum.len(), s.len())?;
            for ((a, b), v) in sum.iter_mut().zip(sq.iter_mut()).zip(s) {
                *a += v;
                *b += v * v;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::Argument("no states to fit a normalizer".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(1e-2))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply_into(&self, state: &[f64], out: &mut Vec<f64>) {
        out.extend(state.iter().zip(&self.mean).zip(&self.std).map(|((s, m), d)| (s - m) / d));
    }
}
