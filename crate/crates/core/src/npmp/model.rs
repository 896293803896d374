use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::prior::PriorConfig;
use super::train::NpmpTrainingConfig;
use crate::envs::EnvKind;
use crate::error::{check_len, Error, Result};
use crate::io::{read_json, write_json};
use crate::nn::{Activation, DiagonalGaussian, StateNormalizer, MlpSpec, OutputActivation, LOG_STD_MAX, LOG_STD_MIN};

/// Fixed standard deviation of the action decoder.
pub const DECODER_STD: f64 = 0.1;
pub const DEFAULT_LOOKAHEAD: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentProvenance {
    Encoded,
    PriorSampled,
    Optimized,
    Concatenated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentSequence {
    pub latents: Vec<Vec<f64>>,
    pub provenance: LatentProvenance,
}

impl LatentSequence {
    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NpmpModel {
    pub env: EnvKind,
    pub state_dim: usize,
    pub action_dim: usize,
    pub lookahead: usize,
    pub prior: PriorConfig,
    pub encoder: MlpSpec,
    pub encoder_params: Vec<f64>,
    pub decoder: MlpSpec,
    pub decoder_params: Vec<f64>,
    pub normalizer: StateNormalizer,
}

impl NpmpModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        env: EnvKind,
        prior: PriorConfig,
        lookahead: usize,
        encoder_hidden: Vec<usize>,
        decoder_hidden: Vec<usize>,
        activation: Activation,
        normalizer: StateNormalizer,
        rng: &mut R,
    ) -> Result<Self> {
        prior.validate()?;
        let state_dim = env.state_dim();
        let action_dim = env.action_dim();
        check_len("normalizer", state_dim, normalizer.mean.len())?;
        let latent = prior.latent_dim;
        let encoder = MlpSpec::new(
            latent + (lookahead + 1) * state_dim,
            encoder_hidden,
            2 * latent,
            activation,
            OutputActivation::Linear,
        )?;
        let decoder = MlpSpec::new(
            latent + state_dim,
            decoder_hidden,
            action_dim,
            activation,
            OutputActivation::Tanh,
        )?;
        let encoder_params = encoder.init_params(rng);
        let decoder_params = decoder.init_params(rng);
        Ok(Self {
            env,
            state_dim,
            action_dim,
            lookahead,
            prior,
            encoder,
            encoder_params,
            decoder,
            decoder_params,
            normalizer,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.prior.latent_dim
    }

    /// Encoder input `z_prev ++ normalized [s_t, .., s_{t+K}]`, repeating
    /// the last available state past the end of `states`.
    pub fn encoder_input(&self, z_prev: &[f64], states: &[Vec<f64>], t: usize) -> Result<Vec<f64>> {
        check_len("encoder z_prev", self.latent_dim(), z_prev.len())?;
        if states.is_empty() {
            return Err(Error::Argument("empty state sequence".into()));
        }
        let mut x = Vec::with_capacity(self.encoder.input_dim);
        x.extend_from_slice(z_prev);
        for k in 0..=self.lookahead {
            let s = &states[(t + k).min(states.len() - 1)];
            check_len("encoder state", self.state_dim, s.len())?;
            self.normalizer.apply_into(s, &mut x);
        }
        Ok(x)
    }

    pub fn decoder_input(&self, z: &[f64], state: &[f64]) -> Result<Vec<f64>> {
        check_len("decoder latent", self.latent_dim(), z.len())?;
        check_len("decoder state", self.state_dim, state.len())?;
        let mut x = Vec::with_capacity(self.decoder.input_dim);
        x.extend_from_slice(z);
        self.normalizer.apply_into(state, &mut x);
        Ok(x)
    }

    /// Splits raw encoder output into mean and clamped log-std.
    pub fn split_encoder_output(&self, out: &[f64]) -> Result<DiagonalGaussian> {
        let l = self.latent_dim();
        DiagonalGaussian::from_raw_log_std(out[..l].to_vec(), &out[l..])
    }

    /// `q(z_t | z_{t-1}, x_t)` for the window starting at `states[t]`.
    pub fn encode_step(&self, z_prev: &[f64], states: &[Vec<f64>], t: usize) -> Result<DiagonalGaussian> {
        let out = self
            .encoder
            .forward(&self.encoder_params, &self.encoder_input(z_prev, states, t)?)?;
        self.split_encoder_output(&out)
    }

    /// Posterior-mean encoding of a whole state sequence (`T + 1` states
    /// give `T` latents), starting from `z_0 = 0`.
    pub fn encode_sequence(&self, states: &[Vec<f64>]) -> Result<LatentSequence> {
        let horizon = states.len().saturating_sub(1);
        let mut z = vec![0.0; self.latent_dim()];
        let mut latents = Vec::with_capacity(horizon);
        for t in 0..horizon {
            z = self.encode_step(&z, states, t)?.mean;
            latents.push(z.clone());
        }
        Ok(LatentSequence {
            latents,
            provenance: LatentProvenance::Encoded,
        })
    }

    pub fn decode_mean(&self, z: &[f64], state: &[f64]) -> Result<Vec<f64>> {
        self.decoder.forward(&self.decoder_params, &self.decoder_input(z, state)?)
    }

    /// `pi(a_t | z_t, s_t)`.
    pub fn decode_action(&self, z: &[f64], state: &[f64]) -> Result<DiagonalGaussian> {
        DiagonalGaussian::isotropic(self.decode_mean(z, state)?, DECODER_STD)
    }

    pub fn check_env(&self, env: EnvKind) -> Result<()> {
        if env != self.env || env.state_dim() != self.state_dim || env.action_dim() != self.action_dim {
            return Err(Error::Compatibility(format!(
                "model trained on {} cannot drive {}",
                self.env.name(),
                env.name()
            )));
        }
        Ok(())
    }
}

/// Range of the encoder's log-std after clamping.
pub const ENCODER_LOG_STD_RANGE: (f64, f64) = (LOG_STD_MIN, LOG_STD_MAX);

pub const CHECKPOINT_FORMAT: &str = "npmp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk checkpoint (JSON): `format`, `version`, the full [`NpmpModel`]
/// (both network specs and flat parameters, prior, lookahead, normalizer)
/// and the training config that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: NpmpModel,
    pub training: Option<NpmpTrainingConfig>,
    /// Hash of the pipeline stage that wrote the file, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl Checkpoint {
    pub fn new(model: NpmpModel, training: Option<NpmpTrainingConfig>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model,
            training,
            config_hash: None,
        }
    }
}

pub fn save_checkpoint(path: &Path, model: &NpmpModel, training: Option<&NpmpTrainingConfig>) -> Result<()> {
    write_json(path, &Checkpoint::new(model.clone(), training.cloned()))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let ckpt: Checkpoint = read_json(path)?;
    if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            path: path.display().to_string(),
            message: format!("unsupported checkpoint {} v{}", ckpt.format, ckpt.version),
        });
    }
    ckpt.model.encoder.validate()?;
    ckpt.model.decoder.validate()?;
    check_len("encoder params", ckpt.model.encoder.param_count(), ckpt.model.encoder_params.len())?;
    check_len("decoder params", ckpt.model.decoder.param_count(), ckpt.model.decoder_params.len())?;
    Ok(ckpt)
}
