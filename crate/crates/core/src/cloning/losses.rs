//! Supervised objectives for the student: plain behavioral cloning, linear
//! feedback policy cloning (LFPC) and the blind-perturbation control.
//!
//! All three are mean squared errors, averaged over samples and action
//! coordinates, and return the exact parameter gradient.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::CloningRecord;
use super::perturbation::PerturbationModel;
use super::student::StudentPolicy;
use super::trace::{feedback_target, NominalTrace};
use crate::error::{check_len, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// A trace index and the state perturbation applied there.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbedSample {
    pub t: usize,
    pub delta: Vec<f64>,
}

/// How an LFPC minibatch is drawn: `subsequences` random windows of
/// `length` consecutive trace steps, each perturbed `perturbations` times.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LfpcBatchShape {
    pub subsequences: usize,
    pub length: usize,
    pub perturbations: usize,
}

impl LfpcBatchShape {
    /// Full-size shape used for large humanoid runs.
    pub const PAPER: Self = Self {
        subsequences: 32,
        length: 30,
        perturbations: 5,
    };

    pub fn samples(&self) -> usize {
        self.subsequences * self.length * self.perturbations
    }
}

impl Default for LfpcBatchShape {
    fn default() -> Self {
        Self {
            subsequences: 4,
            length: 30,
            perturbations: 2,
        }
    }
}

/// Draws an LFPC batch. Perturbations are i.i.d. across steps.
pub fn sample_perturbations<R: Rng + ?Sized>(
    trace: &NominalTrace,
    model: &PerturbationModel,
    shape: LfpcBatchShape,
    rng: &mut R,
) -> Result<Vec<PerturbedSample>> {
    if shape.subsequences == 0 || shape.length == 0 || shape.perturbations == 0 {
        return Err(Error::Argument(format!("empty lfpc batch shape {shape:?}")));
    }
    check_len("perturbation model", trace.state_dim(), model.dim())?;
    let length = shape.length.min(trace.horizon());
    let mut out = Vec::with_capacity(shape.samples());
    for _ in 0..shape.subsequences {
        let start = rng.gen_range(0..=trace.horizon() - length);
        for _ in 0..shape.perturbations {
            for t in start..start + length {
                out.push(PerturbedSample {
                    t,
                    delta: model.sample(rng),
                });
            }
        }
    }
    Ok(out)
}

/// Mean squared error of the student against `targets` on `(t, state)` inputs.
fn regression_loss<'a>(
    student: &StudentPolicy,
    params: &[f64],
    pairs: impl ExactSizeIterator<Item = (usize, Vec<f64>, Vec<f64>)> + 'a,
) -> Result<LossOutput> {
    let n = pairs.len();
    if n == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    check_len("student params", student.spec.param_count(), params.len())?;
    let m = student.spec.output_dim;
    let scale = 1.0 / (n * m) as f64;
    let mut value = 0.0;
    let mut gradient = vec![0.0; params.len()];
    for (t, state, target) in pairs {
        check_len("loss target", m, target.len())?;
        let tape = student.spec.forward_tape(params, &student.features(t, &state)?)?;
        let cot: Vec<f64> = tape
            .output()
            .iter()
            .zip(&target)
            .map(|(y, a)| {
                let d = y - a;
                value += d * d;
                2.0 * d * scale
            })
            .collect();
        student.spec.backward(params, &tape, &cot, &mut gradient)?;
    }
    Ok(LossOutput {
        value: value * scale,
        gradient,
    })
}

pub fn bc_loss(student: &StudentPolicy, params: &[f64], batch: &[&CloningRecord]) -> Result<LossOutput> {
    regression_loss(
        student,
        params,
        batch.iter().map(|r| (r.t, r.state.clone(), r.target.clone())),
    )
}

fn perturbed_pairs<'a>(
    trace: &'a NominalTrace,
    samples: &'a [PerturbedSample],
    corrected: bool,
) -> Result<Vec<(usize, Vec<f64>, Vec<f64>)>> {
    samples
        .iter()
        .map(|smp| {
            if smp.t >= trace.horizon() {
                return Err(Error::Range {
                    index: smp.t,
                    len: trace.horizon(),
                });
            }
            check_len("perturbation", trace.state_dim(), smp.delta.len())?;
            let state: Vec<f64> = trace.states[smp.t].iter().zip(&smp.delta).map(|(s, d)| s + d).collect();
            let target = if corrected {
                feedback_target(trace, smp.t, &state)?
            } else {
                trace.actions[smp.t].clone()
            };
            Ok((smp.t, state, target))
        })
        .collect()
}

/// Student at `s*_t + delta` against the unclamped feedback target
/// `a*_t + J*_t delta`.
pub fn lfpc_loss(
    student: &StudentPolicy,
    params: &[f64],
    trace: &NominalTrace,
    samples: &[PerturbedSample],
) -> Result<LossOutput> {
    regression_loss(student, params, perturbed_pairs(trace, samples, true)?.into_iter())
}

/// Student at `s*_t + delta` against the uncorrected nominal action `a*_t`.
pub fn blind_loss(
    student: &StudentPolicy,
    params: &[f64],
    trace: &NominalTrace,
    samples: &[PerturbedSample],
) -> Result<LossOutput> {
    regression_loss(student, params, perturbed_pairs(trace, samples, false)?.into_iter())
}
