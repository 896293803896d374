use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{CloningDataset, CloningRecord};
use super::losses::{bc_loss, blind_loss, lfpc_loss, sample_perturbations, LfpcBatchShape, LossOutput};
use super::perturbation::PerturbationModel;
use super::student::StudentPolicy;
use super::trace::NominalTrace;
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamConfig, AdamState, StateNormalizer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bc,
    Lfpc,
    Blind,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Bc => "bc",
            LossKind::Lfpc => "lfpc",
            LossKind::Blind => "blind",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bc" => Ok(LossKind::Bc),
            "lfpc" => Ok(LossKind::Lfpc),
            "blind" => Ok(LossKind::Blind),
            other => Err(Error::Argument(format!("unknown loss kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudentTrainingConfig {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub time_indexed: bool,
    pub steps: usize,
    /// State-target pairs per BC step.
    pub batch_size: usize,
    pub lfpc_shape: LfpcBatchShape,
    pub learning_rate: f64,
    /// Learning rate at the last step as a fraction of `learning_rate`;
    /// the rate decays linearly in between. `1.0` keeps it constant.
    pub final_lr_fraction: f64,
    pub seed: u64,
}

impl Default for StudentTrainingConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![64, 64],
            activation: Activation::Elu,
            time_indexed: true,
            steps: 20_000,
            batch_size: 256,
            lfpc_shape: LfpcBatchShape::default(),
            learning_rate: 1e-3,
            final_lr_fraction: 1.0,
            seed: 0,
        }
    }
}

/// What a student is fit to.
#[derive(Clone, Copy, Debug)]
pub enum TrainingData<'a> {
    Dataset(&'a CloningDataset),
    Trace {
        trace: &'a NominalTrace,
        perturbation: &'a PerturbationModel,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub losses: Vec<f64>,
}

/// Fresh student sized for `data`, seeded from `config.seed`.
pub fn init_student(data: TrainingData<'_>, config: &StudentTrainingConfig) -> Result<StudentPolicy> {
    let (state_dim, action_dim, horizon) = match data {
        TrainingData::Dataset(ds) => {
            let r = ds
                .records
                .first()
                .ok_or_else(|| Error::Argument("empty cloning dataset".into()))?;
            (r.state.len(), r.target.len(), ds.horizon)
        }
        TrainingData::Trace { trace, .. } => (trace.state_dim(), trace.action_dim(), trace.horizon()),
    };
    let normalizer = match data {
        TrainingData::Dataset(ds) => StateNormalizer::fit(ds.records.iter().map(|r| &r.state))?,
        TrainingData::Trace { trace, .. } => StateNormalizer::fit(&trace.states)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    StudentPolicy::new(
        state_dim,
        action_dim,
        config.hidden_dims.clone(),
        config.activation,
        config.time_indexed,
        horizon,
        &mut rng,
    )?
    .with_normalizer(normalizer)
}

pub fn train_student(
    kind: LossKind,
    data: TrainingData<'_>,
    config: &StudentTrainingConfig,
) -> Result<(StudentPolicy, TrainingLog)> {
    let mut student = init_student(data, config)?;
    let log = fit_student(&mut student, kind, data, config)?;
    Ok((student, log))
}

/// Runs `config.steps` Adam steps on an existing student.
pub fn fit_student(
    student: &mut StudentPolicy,
    kind: LossKind,
    data: TrainingData<'_>,
    config: &StudentTrainingConfig,
) -> Result<TrainingLog> {
    match (kind, data) {
        (LossKind::Bc, TrainingData::Dataset(ds)) if ds.is_empty() => {
            return Err(Error::Argument("empty cloning dataset".into()))
        }
        (LossKind::Bc, TrainingData::Dataset(_)) => {}
        (LossKind::Lfpc | LossKind::Blind, TrainingData::Trace { .. }) => {}
        _ => {
            return Err(Error::Argument(format!(
                "{} training needs {}",
                kind.name(),
                if kind == LossKind::Bc { "a dataset" } else { "a nominal trace" }
            )))
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_0F_57_0DE7);
    let mut adam = AdamState::new(student.params.len(), AdamConfig::with_learning_rate(config.learning_rate));
    let mut log = TrainingLog {
        losses: Vec::with_capacity(config.steps),
    };
    for step in 0..config.steps {
        adam.config.learning_rate = decayed_rate(config.learning_rate, config.final_lr_fraction, step, config.steps);
        let LossOutput { value, gradient } = match data {
            TrainingData::Dataset(ds) => {
                let batch: Vec<&CloningRecord> = (0..config.batch_size.max(1))
                    .map(|_| &ds.records[rng.gen_range(0..ds.len())])
                    .collect();
                bc_loss(student, &student.params, &batch)?
            }
            TrainingData::Trace { trace, perturbation } => {
                let samples = sample_perturbations(trace, perturbation, config.lfpc_shape, &mut rng)?;
                if kind == LossKind::Lfpc {
                    lfpc_loss(student, &student.params, trace, &samples)?
                } else {
                    blind_loss(student, &student.params, trace, &samples)?
                }
            }
        };
        if !value.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training {
                step,
                term: format!("{} loss is {value}", kind.name()),
            });
        }
        adam.step(&mut student.params, &gradient)?;
        log.losses.push(value);
    }
    Ok(log)
}

/// Linear decay from `base` at step 0 to `base * final_fraction` at the last step.
pub fn decayed_rate(base: f64, final_fraction: f64, step: usize, steps: usize) -> f64 {
    if steps <= 1 {
        return base;
    }
    let u = step as f64 / (steps - 1) as f64;
    base * (1.0 + (final_fraction - 1.0) * u)
}
