use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{DifferentiablePolicy, Policy};
use crate::error::{check_len, Result};
use crate::nn::{Activation, MlpSpec, OutputActivation, StateNormalizer};

/// Neural student `mu_theta`. When `time_indexed` is set the network sees
/// the normalized phase `t / horizon` appended to the standardized state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentPolicy {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
    pub time_indexed: bool,
    pub horizon: usize,
    pub state_dim: usize,
    pub normalizer: StateNormalizer,
}

impl StudentPolicy {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden_dims: Vec<usize>,
        activation: Activation,
        time_indexed: bool,
        horizon: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let input_dim = state_dim + usize::from(time_indexed);
        let spec = MlpSpec::new(input_dim, hidden_dims, action_dim, activation, OutputActivation::Tanh)?;
        let params = spec.init_params(rng);
        Ok(Self {
            spec,
            params,
            time_indexed,
            horizon: horizon.max(1),
            state_dim,
            normalizer: StateNormalizer::identity(state_dim),
        })
    }

    pub fn with_normalizer(mut self, normalizer: StateNormalizer) -> Result<Self> {
        check_len("student normalizer", self.state_dim, normalizer.mean.len())?;
        self.normalizer = normalizer;
        Ok(self)
    }

    pub fn features(&self, t: usize, state: &[f64]) -> Result<Vec<f64>> {
        check_len("student state", self.state_dim, state.len())?;
        let mut x = Vec::with_capacity(self.spec.input_dim);
        self.normalizer.apply_into(state, &mut x);
        if self.time_indexed {
            x.push(t as f64 / self.horizon as f64);
        }
        Ok(x)
    }
}

impl Policy for StudentPolicy {
    fn action_dim(&self) -> usize {
        self.spec.output_dim
    }

    fn act(&self, t: usize, state: &[f64]) -> Result<Vec<f64>> {
        self.spec.forward(&self.params, &self.features(t, state)?)
    }
}

impl DifferentiablePolicy for StudentPolicy {
    fn action_jacobian(&self, t: usize, state: &[f64]) -> Result<DMatrix<f64>> {
        let full = self.spec.input_jacobian(&self.params, &self.features(t, state)?)?;
        let mut j = full.columns(0, self.state_dim).into_owned();
        for (k, d) in self.normalizer.std.iter().enumerate() {
            j.column_mut(k).unscale_mut(*d);
        }
        Ok(j)
    }
}
