//! Offline policy transfer and neural probabilistic motor primitives on toy
//! control environments.
//!
//! * [`nn`]: MLPs with reverse-mode gradients and input Jacobians, diagonal
//!   Gaussian heads, Adam.
//! * [`envs`]: analytic dynamics, reference clip generators, LQR tracking
//!   experts, noisy rollouts and the tracking reward.
//! * [`cloning`]: behavioral cloning from noisy rollouts, linear feedback
//!   policy cloning (LFPC) and the blind-perturbation baseline.
//! * [`npmp`]: the latent-variable motor primitive model and its ELBO.
//! * [`eval`]: one-shot imitation, latent optimization, concatenation, PCA.
//! * [`reuse`]: training a high-level controller in the frozen latent space.
//! * [`stationary`]: non-time-indexed cloning from limit-cycle clips.
//! * [`pipeline`]: experiment configuration, staged runs and manifests.

pub mod cloning;
pub mod envs;
pub mod error;
pub mod eval;
pub mod io;
pub mod nn;
pub mod npmp;
pub mod pipeline;
pub mod reuse;
pub mod stationary;

pub use error::{Error, Result};
