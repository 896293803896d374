//! Nominal traces: states, actions and action-state Jacobians logged along
//! one noiseless expert rollout, and the linear feedback policy they induce.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::dataset::{CloningDataset, CloningRecord, DatasetSource};
use crate::envs::{clamp_action, rollout, DifferentiablePolicy, EnvSpec, Policy, RolloutNoiseConfig};
use crate::error::{check_len, Error, Result};
use crate::io::{read_json, write_json};

/// Serialized as the `npmp-trace` JSON layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "TraceFile", try_from = "TraceFile")]
pub struct NominalTrace {
    pub clip_id: String,
    /// `T + 1` states `s*_0 ..= s*_T`.
    pub states: Vec<Vec<f64>>,
    /// `T` actions `a*_0 .. a*_{T-1}`.
    pub actions: Vec<Vec<f64>>,
    /// `T` Jacobians `J*_t = d mu_E / ds` at `s*_t`.
    pub jacobians: Vec<DMatrix<f64>>,
}

/// Relative tolerance for the finite-difference cross-check of logged Jacobians.
pub const JACOBIAN_CHECK_TOL: f64 = 1e-5;

impl NominalTrace {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn action_dim(&self) -> usize {
        self.actions[0].len()
    }

    /// The trace as a noiseless behavioral-cloning dataset.
    pub fn as_dataset(&self) -> CloningDataset {
        CloningDataset {
            records: (0..self.horizon())
                .map(|t| CloningRecord {
                    t,
                    state: self.states[t].clone(),
                    target: self.actions[t].clone(),
                })
                .collect(),
            horizon: self.horizon(),
            source: DatasetSource {
                clip_id: self.clip_id.clone(),
                action_noise_std: 0.0,
                n_rollouts: 1,
            },
        }
    }

    /// Restricts the trace to steps `start .. start + len`.
    pub fn slice(&self, start: usize, len: usize) -> Result<NominalTrace> {
        if start + len > self.horizon() || len == 0 {
            return Err(Error::Range {
                index: start + len,
                len: self.horizon(),
            });
        }
        Ok(NominalTrace {
            clip_id: self.clip_id.clone(),
            states: self.states[start..=start + len].to_vec(),
            actions: self.actions[start..start + len].to_vec(),
            jacobians: self.jacobians[start..start + len].to_vec(),
        })
    }
}

/// Runs `expert` without noise from `start` for `horizon` steps and logs the
/// analytic Jacobian at every nominal state, cross-checked by central
/// differences.
pub fn record_nominal_trace<E: DifferentiablePolicy + ?Sized>(
    env: &EnvSpec,
    expert: &E,
    clip_id: &str,
    start: &[f64],
    horizon: usize,
) -> Result<NominalTrace> {
    let placeholder = vec![start.to_vec(); horizon + 1];
    let traj = rollout(env, expert, &RolloutNoiseConfig::noiseless(), start, &placeholder)?;
    let mut jacobians = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let s = &traj.states[t];
        let jac = expert.action_jacobian(t, s)?;
        let fd = finite_difference_action_jacobian(expert, t, s, 1e-6)?;
        let scale = jac.amax().max(fd.amax()).max(1e-6);
        let rel_error = (&jac - &fd).amax() / scale;
        if rel_error > JACOBIAN_CHECK_TOL {
            return Err(Error::Validation { step: t, rel_error });
        }
        jacobians.push(jac);
    }
    Ok(NominalTrace {
        clip_id: clip_id.to_string(),
        states: traj.states,
        actions: traj.logged_mean_actions,
        jacobians,
    })
}

/// Central-difference Jacobian of any policy's action with respect to state.
pub fn finite_difference_action_jacobian<P: Policy + ?Sized>(
    policy: &P,
    t: usize,
    state: &[f64],
    eps: f64,
) -> Result<DMatrix<f64>> {
    let m = policy.action_dim();
    let n = state.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut s = state.to_vec();
    for j in 0..n {
        let orig = s[j];
        s[j] = orig + eps;
        let plus = policy.act(t, &s)?;
        s[j] = orig - eps;
        let minus = policy.act(t, &s)?;
        s[j] = orig;
        for i in 0..m {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * eps);
        }
    }
    Ok(jac)
}

/// `a*_t + J*_t (s - s*_t)` before clamping.
pub fn feedback_target(trace: &NominalTrace, t: usize, state: &[f64]) -> Result<Vec<f64>> {
    if t >= trace.horizon() {
        return Err(Error::Range {
            index: t,
            len: trace.horizon(),
        });
    }
    check_len("feedback state", trace.state_dim(), state.len())?;
    let j = &trace.jacobians[t];
    let s_ref = &trace.states[t];
    Ok(trace.actions[t]
        .iter()
        .enumerate()
        .map(|(i, a)| a + (0..state.len()).map(|k| j[(i, k)] * (state[k] - s_ref[k])).sum::<f64>())
        .collect())
}

/// `mu_FB(s) = clamp(a*_t + J*_t (s - s*_t))`.
pub fn feedback_action(trace: &NominalTrace, t: usize, state: &[f64]) -> Result<Vec<f64>> {
    let mut a = feedback_target(trace, t, state)?;
    a.iter_mut().for_each(|v| *v = clamp_action(*v));
    Ok(a)
}

/// The time-indexed linear feedback policy around a nominal trace.
#[derive(Clone, Copy, Debug)]
pub struct FeedbackPolicy<'a> {
    pub trace: &'a NominalTrace,
}

impl Policy for FeedbackPolicy<'_> {
    fn action_dim(&self) -> usize {
        self.trace.action_dim()
    }

    fn act(&self, t: usize, state: &[f64]) -> Result<Vec<f64>> {
        feedback_action(self.trace, t, state)
    }
}

pub const TRACE_FORMAT: &str = "npmp-trace";
pub const TRACE_VERSION: u32 = 1;

/// JSON layout of a trace file. `jacobians[t]` is row-major
/// (`action_dim` rows of `state_dim` entries).
#[derive(Clone, Serialize, Deserialize)]
struct TraceFile {
    format: String,
    version: u32,
    clip_id: String,
    state_dim: usize,
    action_dim: usize,
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    jacobians: Vec<Vec<f64>>,
}

impl From<NominalTrace> for TraceFile {
    fn from(trace: NominalTrace) -> Self {
        let (n, m) = (trace.state_dim(), trace.action_dim());
        let jacobians = trace
            .jacobians
            .iter()
            .map(|j| (0..m).flat_map(|i| (0..n).map(move |k| j[(i, k)])).collect())
            .collect();
        TraceFile {
            format: TRACE_FORMAT.into(),
            version: TRACE_VERSION,
            clip_id: trace.clip_id,
            state_dim: n,
            action_dim: m,
            states: trace.states,
            actions: trace.actions,
            jacobians,
        }
    }
}

impl TryFrom<TraceFile> for NominalTrace {
    type Error = String;

    fn try_from(file: TraceFile) -> std::result::Result<Self, String> {
        if file.format != TRACE_FORMAT || file.version != TRACE_VERSION {
            return Err(format!("unsupported trace {} v{}", file.format, file.version));
        }
        if file.actions.is_empty()
            || file.states.len() != file.actions.len() + 1
            || file.jacobians.len() != file.actions.len()
        {
            return Err("inconsistent trace lengths".into());
        }
        let mut jacobians = Vec::with_capacity(file.jacobians.len());
        for j in &file.jacobians {
            if j.len() != file.state_dim * file.action_dim {
                return Err("jacobian has wrong size".into());
            }
            jacobians.push(DMatrix::from_row_slice(file.action_dim, file.state_dim, j));
        }
        Ok(NominalTrace {
            clip_id: file.clip_id,
            states: file.states,
            actions: file.actions,
            jacobians,
        })
    }
}

pub fn save_trace(path: &Path, trace: &NominalTrace) -> Result<()> {
    write_json(path, trace)
}

pub fn load_trace(path: &Path) -> Result<NominalTrace> {
    read_json(path)
}
