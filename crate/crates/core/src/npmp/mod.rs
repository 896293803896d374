//! Neural probabilistic motor primitives: an AR(1) latent prior, a
//! look-ahead encoder and a state-conditional action decoder trained with a
//! sequence ELBO.

mod elbo;
mod model;
mod prior;
mod train;

pub use elbo::{elbo, lfpc_elbo, sample_elbo_noise, ElboOptions, ElboOutput, ElboSequence, GradientFlow, KlEstimator};
pub use model::{
    load_checkpoint, save_checkpoint, Checkpoint, LatentProvenance, LatentSequence, NpmpModel,
    CHECKPOINT_FORMAT, DECODER_STD, DEFAULT_LOOKAHEAD, ENCODER_LOG_STD_RANGE,
};
pub use crate::nn::StateNormalizer;
pub use prior::PriorConfig;
pub use train::{init_npmp, train_npmp, NpmpData, NpmpMode, NpmpTrainingConfig, NpmpTrainingLog, RolloutSequence};
