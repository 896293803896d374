//! Dense feed-forward networks over a flat parameter vector.
//!
//! Parameters are laid out layer by layer as a row-major weight matrix
//! `(fan_out, fan_in)` followed by the bias vector `(fan_out)`. Keeping the
//! parameters flat lets one Adam state drive any combination of networks.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Elu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Linear,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    a + 1.0
                }
            }
        }
    }
}

impl OutputActivation {
    fn as_hidden(self) -> Option<Activation> {
        match self {
            OutputActivation::Linear => None,
            OutputActivation::Tanh => Some(Activation::Tanh),
        }
    }
}

/// Network shape. `hidden_dims` may be empty, giving a single affine map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub output_activation: OutputActivation,
}

/// Intermediate values of one forward pass, consumed by [`MlpSpec::backward`].
#[derive(Clone, Debug)]
pub struct Tape {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("tape always holds the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.acts[0]
    }
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        output_dim: usize,
        activation: Activation,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_dims,
            output_dim,
            activation,
            output_activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Argument(
                "all network dimensions must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for each layer in order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut fan_in = self.input_dim;
        for &h in self.hidden_dims.iter().chain(std::iter::once(&self.output_dim)) {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Uniform weights in `±1/sqrt(fan_in)`, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut params = Vec::with_capacity(self.param_count());
        for (fan_in, fan_out) in self.layer_dims() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)));
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        params
    }

    fn layer_activation(&self, layer: usize) -> Option<Activation> {
        if layer == self.hidden_dims.len() {
            self.output_activation.as_hidden()
        } else {
            Some(self.activation)
        }
    }

    fn check(&self, params: &[f64], input: &[f64]) -> Result<()> {
        check_len("mlp parameters", self.param_count(), params.len())?;
        check_len("mlp input", self.input_dim, input.len())
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        self.check(params, input)?;
        let mut x = input.to_vec();
        let mut offset = 0;
        for (layer, (fan_in, fan_out)) in self.layer_dims().into_iter().enumerate() {
            let (w, rest) = params[offset..].split_at(fan_in * fan_out);
            let b = &rest[..fan_out];
            offset += fan_in * fan_out + fan_out;
            let act = self.layer_activation(layer);
            x = w
                .chunks_exact(fan_in)
                .zip(b)
                .map(|(row, bias)| {
                    let z = bias + dot(row, &x);
                    act.map_or(z, |a| a.apply(z))
                })
                .collect();
        }
        Ok(x)
    }

    pub fn forward_tape(&self, params: &[f64], input: &[f64]) -> Result<Tape> {
        self.check(params, input)?;
        let n_layers = self.hidden_dims.len() + 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        let mut pre = Vec::with_capacity(n_layers);
        acts.push(input.to_vec());
        let mut offset = 0;
        for (layer, (fan_in, fan_out)) in self.layer_dims().into_iter().enumerate() {
            let (w, rest) = params[offset..].split_at(fan_in * fan_out);
            let b = &rest[..fan_out];
            offset += fan_in * fan_out + fan_out;
            let x = &acts[layer];
            let z: Vec<f64> = w
                .chunks_exact(fan_in)
                .zip(b)
                .map(|(row, bias)| bias + dot(row, x))
                .collect();
            let a = match self.layer_activation(layer) {
                Some(act) => z.iter().map(|&v| act.apply(v)).collect(),
                None => z.clone(),
            };
            pre.push(z);
            acts.push(a);
        }
        Ok(Tape { acts, pre })
    }

    /// Reverse pass for `L = <cotangent, output>`. Parameter gradients are
    /// accumulated (`+=`) into `grad`; the input gradient is returned.
    pub fn backward(
        &self,
        params: &[f64],
        tape: &Tape,
        cotangent: &[f64],
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        check_len("mlp cotangent", self.output_dim, cotangent.len())?;
        check_len("mlp gradient buffer", self.param_count(), grad.len())?;
        let dims = self.layer_dims();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut offset = 0;
        for (fan_in, fan_out) in &dims {
            offsets.push(offset);
            offset += fan_in * fan_out + fan_out;
        }

        let mut delta: Vec<f64> = cotangent.to_vec();
        for layer in (0..dims.len()).rev() {
            let (fan_in, fan_out) = dims[layer];
            if let Some(act) = self.layer_activation(layer) {
                for ((d, &z), &a) in delta
                    .iter_mut()
                    .zip(&tape.pre[layer])
                    .zip(&tape.acts[layer + 1])
                {
                    *d *= act.derivative(z, a);
                }
            }
            let off = offsets[layer];
            let x = &tape.acts[layer];
            {
                let (gw, rest) = grad[off..].split_at_mut(fan_in * fan_out);
                for (row, &d) in gw.chunks_exact_mut(fan_in).zip(&delta) {
                    if d != 0.0 {
                        for (g, &xi) in row.iter_mut().zip(x) {
                            *g += d * xi;
                        }
                    }
                }
                for (g, &d) in rest[..fan_out].iter_mut().zip(&delta) {
                    *g += d;
                }
            }
            let w = &params[off..off + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for (row, &d) in w.chunks_exact(fan_in).zip(&delta) {
                if d != 0.0 {
                    for (p, &wi) in prev.iter_mut().zip(row) {
                        *p += d * wi;
                    }
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// Gradient of `<cotangent, forward(input)>` with respect to the parameters.
    pub fn param_gradient(
        &self,
        params: &[f64],
        input: &[f64],
        cotangent: &[f64],
    ) -> Result<Vec<f64>> {
        let tape = self.forward_tape(params, input)?;
        let mut grad = vec![0.0; params.len()];
        self.backward(params, &tape, cotangent, &mut grad)?;
        Ok(grad)
    }

    /// `J[i][j] = d output_i / d input_j`, propagated forward layer by layer.
    pub fn input_jacobian(&self, params: &[f64], input: &[f64]) -> Result<DMatrix<f64>> {
        let tape = self.forward_tape(params, input)?;
        let mut jac = DMatrix::<f64>::identity(self.input_dim, self.input_dim);
        let mut offset = 0;
        for (layer, (fan_in, fan_out)) in self.layer_dims().into_iter().enumerate() {
            let w = DMatrix::from_row_slice(fan_out, fan_in, &params[offset..offset + fan_in * fan_out]);
            offset += fan_in * fan_out + fan_out;
            let mut next = w * jac;
            if let Some(act) = self.layer_activation(layer) {
                for i in 0..fan_out {
                    let d = act.derivative(tape.pre[layer][i], tape.acts[layer + 1][i]);
                    next.row_mut(i).scale_mut(d);
                }
            }
            jac = next;
        }
        Ok(jac)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A network shape bundled with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn new(spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        check_len("mlp parameters", spec.param_count(), params.len())?;
        Ok(Self { spec, params })
    }

    pub fn random<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let params = spec.init_params(rng);
        Ok(Self { spec, params })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.spec.forward(&self.params, input)
    }

    pub fn input_jacobian(&self, input: &[f64]) -> Result<DMatrix<f64>> {
        self.spec.input_jacobian(&self.params, input)
    }
}
