//! Time-indexed feedback experts built analytically from a reference clip:
//! nominal actions by inverting the dynamics, gains by a finite-horizon LQR
//! backward Riccati recursion on the dynamics linearized along the clip.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::dynamics::{clamp_action, EnvSpec};
use super::reference::ReferenceTrajectory;
use crate::error::{check_len, Error, Result};

/// A (possibly time-indexed) map from state to mean action.
pub trait Policy {
    fn action_dim(&self) -> usize;
    fn act(&self, t: usize, state: &[f64]) -> Result<Vec<f64>>;
}

/// A policy whose action-state Jacobian is available in closed form.
pub trait DifferentiablePolicy: Policy {
    fn action_jacobian(&self, t: usize, state: &[f64]) -> Result<DMatrix<f64>>;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn action_dim(&self) -> usize {
        (**self).action_dim()
    }
    fn act(&self, t: usize, state: &[f64]) -> Result<Vec<f64>> {
        (**self).act(t, state)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqrCost {
    /// Diagonal state weight (`Q = state_weight * I`).
    pub state_weight: f64,
    /// Diagonal action weight (`R = action_weight * I`).
    pub action_weight: f64,
}

impl Default for LqrCost {
    fn default() -> Self {
        Self {
            state_weight: 1.0,
            action_weight: 0.1,
        }
    }
}

/// `mu_E(s, t) = clamp(a*_t + K_t (s - s*_t))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertPolicy {
    pub env: EnvSpec,
    pub reference: ReferenceTrajectory,
    pub nominal_actions: Vec<Vec<f64>>,
    /// Feedback matrices `K_t` (action_dim x state_dim), already sign-flipped
    /// so that the correction is `+K_t (s - s*_t)`.
    pub gains: Vec<DMatrix<f64>>,
    pub clamp: bool,
}

/// Builds the LQR tracking expert for `reference`.
pub fn build_expert(env: &EnvSpec, reference: &ReferenceTrajectory, cost: LqrCost) -> Result<ExpertPolicy> {
    let horizon = reference.horizon();
    let n = env.state_dim();
    for (t, s) in reference.states.iter().enumerate() {
        check_len("reference state", n, s.len())?;
        if !s.iter().all(|v| v.is_finite()) {
            return Err(Error::Infeasible {
                step: t,
                reason: "non-finite reference state".into(),
            });
        }
    }
    let mut nominal = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let (u, residual) = env.inverse_dynamics(&reference.states[t], &reference.states[t + 1])?;
        if residual > 1e-6 {
            return Err(Error::Infeasible {
                step: t,
                reason: format!("next state unreachable (residual {residual:.3e})"),
            });
        }
        if let Some(a) = u.iter().find(|a| a.abs() > 1.0) {
            return Err(Error::Infeasible {
                step: t,
                reason: format!("required action {a:.4} outside [-1, 1]"),
            });
        }
        nominal.push(u);
    }
    let linearized = (0..horizon)
        .map(|t| env.linearize(&reference.states[t], &nominal[t]))
        .collect::<Result<Vec<_>>>()?;
    let gains = riccati_gains(&linearized, cost)
        .into_iter()
        .map(|k| -k)
        .collect();
    Ok(ExpertPolicy {
        env: env.clone(),
        reference: reference.clone(),
        nominal_actions: nominal,
        gains,
        clamp: true,
    })
}

/// Backward Riccati recursion for `sum_t x'Qx + u'Ru + x_T'Q x_T` with
/// `x_{t+1} = A_t x_t + B_t u_t`. Returns `K_t` with `u_t = -K_t x_t`.
pub fn riccati_gains(linearized: &[(DMatrix<f64>, DMatrix<f64>)], cost: LqrCost) -> Vec<DMatrix<f64>> {
    let Some((a0, b0)) = linearized.first() else {
        return Vec::new();
    };
    let n = a0.nrows();
    let m = b0.ncols();
    let q = DMatrix::<f64>::identity(n, n) * cost.state_weight;
    let r = DMatrix::<f64>::identity(m, m) * cost.action_weight;
    let mut p = q.clone();
    let mut gains = vec![DMatrix::zeros(m, n); linearized.len()];
    for (t, (a, b)) in linearized.iter().enumerate().rev() {
        let bt_p = b.transpose() * &p;
        let lhs = &r + &bt_p * b;
        let rhs = &bt_p * a;
        let k = lhs
            .cholesky()
            .expect("R + B'PB is positive definite for R > 0")
            .solve(&rhs);
        let next = &q + a.transpose() * &p * (a - b * &k);
        // symmetrize against round-off drift
        p = (&next + next.transpose()) * 0.5;
        gains[t] = k;
    }
    gains
}

impl ExpertPolicy {
    pub fn horizon(&self) -> usize {
        self.nominal_actions.len()
    }

    /// Unclamped `a*_t + K_t (s - s*_t)`.
    pub fn feedback_raw(&self, t: usize, state: &[f64]) -> Result<Vec<f64>> {
        if t >= self.horizon() {
            return Err(Error::Range {
                index: t,
                len: self.horizon(),
            });
        }
        check_len("expert state", self.env.state_dim(), state.len())?;
        let k = &self.gains[t];
        let s_ref = &self.reference.states[t];
        Ok(self.nominal_actions[t]
            .iter()
            .enumerate()
            .map(|(i, a)| a + (0..state.len()).map(|j| k[(i, j)] * (state[j] - s_ref[j])).sum::<f64>())
            .collect())
    }
}

impl Policy for ExpertPolicy {
    fn action_dim(&self) -> usize {
        self.env.action_dim()
    }

    fn act(&self, t: usize, state: &[f64]) -> Result<Vec<f64>> {
        let mut a = self.feedback_raw(t, state)?;
        if self.clamp {
            a.iter_mut().for_each(|v| *v = clamp_action(*v));
        }
        Ok(a)
    }
}

impl DifferentiablePolicy for ExpertPolicy {
    /// `K_t` inside the action bounds; rows of saturated actions are zero.
    fn action_jacobian(&self, t: usize, state: &[f64]) -> Result<DMatrix<f64>> {
        let raw = self.feedback_raw(t, state)?;
        let mut j = self.gains[t].clone();
        if self.clamp {
            for (i, a) in raw.iter().enumerate() {
                if a.abs() > 1.0 {
                    j.row_mut(i).fill(0.0);
                }
            }
        }
        Ok(j)
    }
}

/// Replays a fixed action sequence regardless of state.
#[derive(Clone, Debug)]
pub struct OpenLoopPolicy {
    pub actions: Vec<Vec<f64>>,
}

impl Policy for OpenLoopPolicy {
    fn action_dim(&self) -> usize {
        self.actions.first().map_or(0, Vec::len)
    }

    fn act(&self, t: usize, _state: &[f64]) -> Result<Vec<f64>> {
        self.actions.get(t).cloned().ok_or(Error::Range {
            index: t,
            len: self.actions.len(),
        })
    }
}
