//! Minimal differentiable substrate: MLPs with reverse-mode parameter
//! gradients and input Jacobians, diagonal Gaussian heads, and Adam.

mod adam;
mod gaussian;
mod mlp;
mod normalizer;

pub use adam::{AdamConfig, AdamState};
pub use gaussian::{DiagonalGaussian, LOG_STD_MAX, LOG_STD_MIN};
pub(crate) use gaussian::{fixed_std_log_prob, half_log_2pi, kl_term, kl_term_grad};
pub use mlp::{Activation, Mlp, MlpSpec, OutputActivation, Tape};
pub use normalizer::StateNormalizer;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json};

pub const MODEL_FILE_FORMAT: &str = "npmp-mlp";
pub const MODEL_FILE_VERSION: u32 = 1;

/// On-disk layout of a single network (JSON):
///
/// ```text
/// { "format": "npmp-mlp", "version": 1,
///   "spec": { "input_dim", "hidden_dims", "output_dim", "activation", "output_activation" },
///   "params": [ ...flat parameters, shortest round-trip decimal... ] }
/// ```
#[derive(Serialize, Deserialize)]
struct MlpFile {
    format: String,
    version: u32,
    spec: MlpSpec,
    params: Vec<f64>,
}

pub fn save_mlp(path: &Path, mlp: &Mlp) -> Result<()> {
    write_json(
        path,
        &MlpFile {
            format: MODEL_FILE_FORMAT.into(),
            version: MODEL_FILE_VERSION,
            spec: mlp.spec.clone(),
            params: mlp.params.clone(),
        },
    )
}

pub fn load_mlp(path: &Path) -> Result<Mlp> {
    let file: MlpFile = read_json(path)?;
    if file.format != MODEL_FILE_FORMAT || file.version != MODEL_FILE_VERSION {
        return Err(Error::Format {
            path: path.display().to_string(),
            message: format!("unsupported model file {} v{}", file.format, file.version),
        });
    }
    Mlp::new(file.spec, file.params)
}
