//! Diagonal Gaussian heads: densities, closed-form KL and reparameterized
//! sampling, plus the partial derivatives the training losses need.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalGaussian {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        check_len("gaussian std", mean.len(), std.len())?;
        if let Some(s) = std.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::Domain(format!("standard deviation must be positive, got {s}")));
        }
        Ok(Self { mean, std })
    }

    /// Builds the distribution from an unconstrained log-std, clamped to
    /// `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub fn from_raw_log_std(mean: Vec<f64>, raw_log_std: &[f64]) -> Result<Self> {
        let std = raw_log_std
            .iter()
            .map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX).exp())
            .collect();
        Self::new(mean, std)
    }

    pub fn isotropic(mean: Vec<f64>, std: f64) -> Result<Self> {
        let n = mean.len();
        Self::new(mean, vec![std; n])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        check_len("gaussian sample", self.dim(), x.len())?;
        Ok(self
            .mean
            .iter()
            .zip(&self.std)
            .zip(x)
            .map(|((m, s), xi)| {
                let u = (xi - m) / s;
                -0.5 * u * u - s.ln() - HALF_LOG_2PI
            })
            .sum())
    }

    /// `KL(self || other)` in closed form.
    pub fn kl(&self, other: &DiagonalGaussian) -> Result<f64> {
        check_len("gaussian kl", self.dim(), other.dim())?;
        Ok(self
            .mean
            .iter()
            .zip(&self.std)
            .zip(other.mean.iter().zip(&other.std))
            .map(|((mq, sq), (mp, sp))| kl_term(*mq, *sq, *mp, *sp))
            .sum())
    }

    /// `mean + std * noise`.
    pub fn sample(&self, noise: &[f64]) -> Result<Vec<f64>> {
        check_len("gaussian noise", self.dim(), noise.len())?;
        Ok(self
            .mean
            .iter()
            .zip(&self.std)
            .zip(noise)
            .map(|((m, s), e)| m + s * e)
            .collect())
    }
}

#[inline]
pub(crate) fn kl_term(mq: f64, sq: f64, mp: f64, sp: f64) -> f64 {
    let d = mq - mp;
    (sp / sq).ln() + (sq * sq + d * d) / (2.0 * sp * sp) - 0.5
}

/// Partial derivatives of one coordinate of the closed-form KL:
/// `(d/d mean_q, d/d log_std_q, d/d mean_p)`.
#[inline]
pub(crate) fn kl_term_grad(mq: f64, sq: f64, mp: f64, sp: f64) -> (f64, f64, f64) {
    let vp = sp * sp;
    let d = (mq - mp) / vp;
    (d, sq * sq / vp - 1.0, -d)
}

/// Log-density of a fixed-std Gaussian summed over coordinates, and its
/// derivative with respect to the mean.
#[inline]
pub(crate) fn fixed_std_log_prob(mean: &[f64], std: f64, x: &[f64]) -> (f64, Vec<f64>) {
    let inv_var = 1.0 / (std * std);
    let mut lp = 0.0;
    let grad = mean
        .iter()
        .zip(x)
        .map(|(m, xi)| {
            let d = xi - m;
            lp += -0.5 * d * d * inv_var - std.ln() - HALF_LOG_2PI;
            d * inv_var
        })
        .collect();
    (lp, grad)
}

pub(crate) fn half_log_2pi() -> f64 {
    HALF_LOG_2PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn log_prob_at_mode() {
        let d = DiagonalGaussian::new(vec![0.3], vec![0.1]).unwrap();
        assert!((d.log_prob(&[0.3]).unwrap() - 1.383_646_559_789_372_7).abs() < 1e-12);
        let unit = DiagonalGaussian::new(vec![0.0], vec![1.0]).unwrap();
        let lp1 = unit.log_prob(&[0.0]).unwrap();
        assert!((lp1 + 0.918_938_533_204_672_8).abs() < 1e-15);
        let two = DiagonalGaussian::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(two.log_prob(&[0.0, 0.0]).unwrap(), 2.0 * lp1);
    }

    #[test]
    fn kl_values() {
        let p = DiagonalGaussian::new(vec![0.0], vec![1.0]).unwrap();
        assert_eq!(p.kl(&p).unwrap(), 0.0);
        let q = DiagonalGaussian::new(vec![1.0], vec![1.0]).unwrap();
        assert!((q.kl(&p).unwrap() - 0.5).abs() < 1e-15);
        let q = DiagonalGaussian::new(vec![0.0], vec![0.25]).unwrap();
        let expected = 0.5 * (0.0625 - 1.0 - 2.0 * 0.25f64.ln());
        assert!((q.kl(&p).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.917).abs() < 1e-3);
    }

    #[test]
    fn rejects_nonpositive_std() {
        assert!(matches!(
            DiagonalGaussian::new(vec![0.0], vec![0.0]),
            Err(Error::Domain(_))
        ));
        assert!(DiagonalGaussian::new(vec![0.0], vec![-1.0]).is_err());
        assert!(DiagonalGaussian::new(vec![0.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn sampling() {
        let d = DiagonalGaussian::new(vec![0.5, -1.0], vec![0.1, 0.1]).unwrap();
        assert_eq!(d.sample(&[0.0, 0.0]).unwrap(), d.mean);
        let s = d.sample(&[1.0, 1.0]).unwrap();
        assert!((s[0] - 0.6).abs() < 1e-15 && (s[1] + 0.9).abs() < 1e-15);
        assert!(d.sample(&[1.0]).is_err());
    }

    #[test]
    fn clamped_log_std() {
        let d = DiagonalGaussian::from_raw_log_std(vec![0.0, 0.0], &[-40.0, 40.0]).unwrap();
        assert_eq!(d.std, vec![LOG_STD_MIN.exp(), LOG_STD_MAX.exp()]);
    }

    proptest! {
        #[test]
        fn kl_nonnegative(
            mq in prop::collection::vec(-3.0..3.0f64, 3),
            mp in prop::collection::vec(-3.0..3.0f64, 3),
            sq in prop::collection::vec(0.05..3.0f64, 3),
            sp in prop::collection::vec(0.05..3.0f64, 3),
        ) {
            let q = DiagonalGaussian::new(mq, sq).unwrap();
            let p = DiagonalGaussian::new(mp, sp).unwrap();
            prop_assert!(q.kl(&p).unwrap() >= -1e-12);
            prop_assert!(q.kl(&q).unwrap().abs() < 1e-12);
        }

        #[test]
        fn mode_maximizes_log_prob(
            m in prop::collection::vec(-3.0..3.0f64, 2),
            s in prop::collection::vec(0.05..3.0f64, 2),
            off in prop::collection::vec(-1.0..1.0f64, 2),
        ) {
            let d = DiagonalGaussian::new(m.clone(), s).unwrap();
            let x: Vec<f64> = m.iter().zip(&off).map(|(a, b)| a + b).collect();
            prop_assert!(d.log_prob(&x).unwrap() <= d.log_prob(&m).unwrap());
        }
    }
}
