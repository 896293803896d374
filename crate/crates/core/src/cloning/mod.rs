//! Offline transfer of a single expert into a neural student.

mod dataset;
mod losses;
mod perturbation;
mod student;
mod train;
mod trace;

pub use dataset::{
    collect_bc_dataset, collect_rollouts, rollout_seed, CloningDataset, CloningRecord, DatasetSource,
};
pub use losses::{
    bc_loss, blind_loss, lfpc_loss, sample_perturbations, LfpcBatchShape, LossOutput, PerturbedSample,
};
pub use perturbation::{
    estimate_perturbation_model, PerturbationKind, PerturbationModel, PERTURBATION_STD_FLOOR,
};
pub use student::StudentPolicy;
pub use train::{fit_student, init_student, train_student, LossKind, StudentTrainingConfig, TrainingData, TrainingLog};
pub use trace::{
    TRACE_FORMAT, TRACE_VERSION,
    feedback_action, feedback_target, finite_difference_action_jacobian, load_trace, record_nominal_trace,
    save_trace, FeedbackPolicy, NominalTrace, JACOBIAN_CHECK_TOL,
};

use serde::{Deserialize, Serialize};

use crate::envs::{EnvSpec, ExpertPolicy, ReferenceTrajectory};
use crate::error::Result;
use crate::nn::Activation;

/// Noise level used to estimate the per-environment perturbation model.
pub const PERTURBATION_ESTIMATE_NOISE: f64 = 0.1;
/// Rollouts used to estimate the per-environment perturbation model.
pub const PERTURBATION_ESTIMATE_ROLLOUTS: usize = 5;

/// Estimates `Delta` for one clip from a handful of noisy expert rollouts.
pub fn perturbation_model_for(
    env: &EnvSpec,
    expert: &ExpertPolicy,
    reference: &ReferenceTrajectory,
    trace: &NominalTrace,
    seed: u64,
) -> Result<PerturbationModel> {
    let rollouts = collect_rollouts(
        env,
        expert,
        reference,
        PERTURBATION_ESTIMATE_NOISE,
        PERTURBATION_ESTIMATE_ROLLOUTS,
        seed,
    )?;
    estimate_perturbation_model(&rollouts, trace)
}

/// Smooth (tanh) neural stand-in for an LQR expert, distilled by behavioral
/// cloning on its noisy rollouts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuralExpertConfig {
    pub action_noise_std: f64,
    pub n_rollouts: usize,
    pub training: StudentTrainingConfig,
}

impl Default for NeuralExpertConfig {
    fn default() -> Self {
        Self {
            action_noise_std: 0.1,
            n_rollouts: 50,
            training: StudentTrainingConfig {
                activation: Activation::Tanh,
                steps: 3_000,
                ..StudentTrainingConfig::default()
            },
        }
    }
}

pub fn distill_neural_expert(
    env: &EnvSpec,
    expert: &ExpertPolicy,
    reference: &ReferenceTrajectory,
    config: &NeuralExpertConfig,
) -> Result<StudentPolicy> {
    let dataset = collect_bc_dataset(
        env,
        expert,
        reference,
        config.action_noise_std,
        config.n_rollouts,
        config.training.seed,
    )?;
    Ok(train_student(LossKind::Bc, TrainingData::Dataset(&dataset), &config.training)?.0)
}
