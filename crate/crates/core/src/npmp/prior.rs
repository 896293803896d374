use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::nn::{half_log_2pi, DiagonalGaussian};

/// AR(1) latent prior `z_t = alpha z_{t-1} + sigma eps`. `sigma` is always
/// derived as `sqrt(1 - alpha^2)` so the chain's marginal stays `N(0, I)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub alpha: f64,
    pub latent_dim: usize,
}

impl PriorConfig {
    pub fn new(alpha: f64, latent_dim: usize) -> Result<Self> {
        let cfg = Self { alpha, latent_dim };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Domain(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        if self.latent_dim == 0 {
            return Err(Error::Domain("latent_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        (1.0 - self.alpha * self.alpha).sqrt()
    }

    /// `p(z_t | z_{t-1})`.
    pub fn conditional(&self, z_prev: &[f64]) -> Result<DiagonalGaussian> {
        check_len("prior z_prev", self.latent_dim, z_prev.len())?;
        DiagonalGaussian::new(
            z_prev.iter().map(|z| self.alpha * z).collect(),
            vec![self.sigma(); self.latent_dim],
        )
    }

    pub fn step(&self, z_prev: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
        check_len("prior z_prev", self.latent_dim, z_prev.len())?;
        check_len("prior noise", self.latent_dim, noise.len())?;
        let sigma = self.sigma();
        Ok(z_prev.iter().zip(noise).map(|(z, e)| self.alpha * z + sigma * e).collect())
    }

    pub fn log_prob(&self, z_prev: &[f64], z: &[f64]) -> Result<f64> {
        check_len("prior z_prev", self.latent_dim, z_prev.len())?;
        check_len("prior z", self.latent_dim, z.len())?;
        let sigma = self.sigma();
        Ok(z_prev
            .iter()
            .zip(z)
            .map(|(zp, zi)| {
                let d = (zi - self.alpha * zp) / sigma;
                -0.5 * d * d - sigma.ln() - half_log_2pi()
            })
            .sum())
    }
}
