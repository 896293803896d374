//! Deterministic semi-implicit Euler dynamics for the toy environments.
//!
//! Actions are normalized to `[-1, 1]` per dimension and clamped on entry to
//! [`EnvSpec::step`]. Velocities are updated first and positions use the new
//! velocity.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};

pub const ACTION_LOW: f64 = -1.0;
pub const ACTION_HIGH: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    /// State `(px, py, vx, vy)`, action `(ax, ay)`.
    #[serde(rename = "double_integrator_2d")]
    DoubleIntegrator2d,
    /// State `(theta, omega)` with `theta = 0` hanging, action torque.
    Pendulum,
    /// State `(x, y, heading, speed)`, action `(acceleration, turn rate)`.
    UnicyclePlane,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::DoubleIntegrator2d => "double_integrator_2d",
            EnvKind::Pendulum => "pendulum",
            EnvKind::UnicyclePlane => "unicycle_plane",
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            EnvKind::DoubleIntegrator2d | EnvKind::UnicyclePlane => 4,
            EnvKind::Pendulum => 2,
        }
    }

    pub fn action_dim(self) -> usize {
        match self {
            EnvKind::DoubleIntegrator2d | EnvKind::UnicyclePlane => 2,
            EnvKind::Pendulum => 1,
        }
    }

    pub const ALL: [EnvKind; 3] = [EnvKind::DoubleIntegrator2d, EnvKind::Pendulum, EnvKind::UnicyclePlane];

    /// Indices of the planar position inside the state, if the body has one.
    pub fn position_indices(self) -> Option<(usize, usize)> {
        match self {
            EnvKind::DoubleIntegrator2d | EnvKind::UnicyclePlane => Some((0, 1)),
            EnvKind::Pendulum => None,
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown environment {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    /// Integration step in seconds.
    pub dt: f64,
    /// Default episode length in steps.
    pub horizon: usize,
    /// Width `w` of the Gaussian tracking reward.
    pub reward_width: f64,
    /// Acceleration (or torque, or turn rate) produced by a unit action.
    pub action_gain: f64,
    /// Pendulum `g / l`; unused elsewhere.
    pub gravity: f64,
    /// Pendulum viscous damping; unused elsewhere.
    pub damping: f64,
}

impl EnvSpec {
    pub fn new(kind: EnvKind) -> Self {
        let (action_gain, gravity, damping) = match kind {
            EnvKind::DoubleIntegrator2d => (12.0, 0.0, 0.0),
            EnvKind::Pendulum => (10.0, 6.0, 0.1),
            EnvKind::UnicyclePlane => (12.0, 0.0, 0.0),
        };
        Self {
            kind,
            dt: 0.05,
            horizon: 100,
            reward_width: 0.5,
            action_gain,
            gravity,
            damping,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.dt > 0.0) {
            errs.push(format!("dt must be positive, got {}", self.dt));
        }
        if self.horizon < 2 {
            errs.push(format!("horizon must be at least 2, got {}", self.horizon));
        }
        if !(self.reward_width > 0.0) {
            errs.push(format!("reward_width must be positive, got {}", self.reward_width));
        }
        if !(self.action_gain > 0.0) {
            errs.push(format!("action_gain must be positive, got {}", self.action_gain));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn state_dim(&self) -> usize {
        self.kind.state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.kind.action_dim()
    }

    pub fn step(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        check_len("env state", self.state_dim(), state.len())?;
        check_len("env action", self.action_dim(), action.len())?;
        check_finite("env state", state)?;
        check_finite("env action", action)?;
        let u: Vec<f64> = action.iter().map(|a| clamp_action(*a)).collect();
        Ok(self.step_unclamped(state, &u))
    }

    pub(crate) fn step_unclamped(&self, s: &[f64], u: &[f64]) -> Vec<f64> {
        let dt = self.dt;
        let g = self.action_gain;
        match self.kind {
            EnvKind::DoubleIntegrator2d => {
                let vx = s[2] + dt * g * u[0];
                let vy = s[3] + dt * g * u[1];
                vec![s[0] + dt * vx, s[1] + dt * vy, vx, vy]
            }
            EnvKind::Pendulum => {
                let w = s[1] + dt * (-self.gravity * s[0].sin() - self.damping * s[1] + g * u[0]);
                vec![s[0] + dt * w, w]
            }
            EnvKind::UnicyclePlane => {
                let v = s[3] + dt * g * u[0];
                let h = s[2] + dt * g * u[1];
                vec![s[0] + dt * v * h.cos(), s[1] + dt * v * h.sin(), h, v]
            }
        }
    }

    /// Analytic `(A, B)` of the step map at `(state, action)`, ignoring the clamp.
    pub fn linearize(&self, s: &[f64], u: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        check_len("env state", self.state_dim(), s.len())?;
        check_len("env action", self.action_dim(), u.len())?;
        let dt = self.dt;
        let g = self.action_gain;
        let (n, m) = (self.state_dim(), self.action_dim());
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, m);
        match self.kind {
            EnvKind::DoubleIntegrator2d => {
                for i in 0..2 {
                    a[(i, i)] = 1.0;
                    a[(i, i + 2)] = dt;
                    a[(i + 2, i + 2)] = 1.0;
                    b[(i, i)] = dt * dt * g;
                    b[(i + 2, i)] = dt * g;
                }
            }
            EnvKind::Pendulum => {
                let dw_dth = -dt * self.gravity * s[0].cos();
                let dw_dw = 1.0 - dt * self.damping;
                let dw_du = dt * g;
                a[(1, 0)] = dw_dth;
                a[(1, 1)] = dw_dw;
                b[(1, 0)] = dw_du;
                a[(0, 0)] = 1.0 + dt * dw_dth;
                a[(0, 1)] = dt * dw_dw;
                b[(0, 0)] = dt * dw_du;
            }
            EnvKind::UnicyclePlane => {
                let v = s[3] + dt * g * u[0];
                let h = s[2] + dt * g * u[1];
                let (sh, ch) = h.sin_cos();
                a[(2, 2)] = 1.0;
                a[(3, 3)] = 1.0;
                b[(2, 1)] = dt * g;
                b[(3, 0)] = dt * g;
                a[(0, 0)] = 1.0;
                a[(0, 2)] = -dt * v * sh;
                a[(0, 3)] = dt * ch;
                b[(0, 0)] = dt * ch * dt * g;
                b[(0, 1)] = -dt * v * sh * dt * g;
                a[(1, 1)] = 1.0;
                a[(1, 2)] = dt * v * ch;
                a[(1, 3)] = dt * sh;
                b[(1, 0)] = dt * sh * dt * g;
                b[(1, 1)] = dt * v * ch * dt * g;
            }
        }
        Ok((a, b))
    }

    /// Action that drives `state` to `next_state` through the velocity-level
    /// equations, plus the residual of the remaining (kinematic) equations
    /// under that action. A pair is reachable when the residual vanishes and
    /// the action lies inside the bounds.
    pub fn inverse_dynamics(&self, s: &[f64], next: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_len("env state", self.state_dim(), s.len())?;
        check_len("env next state", self.state_dim(), next.len())?;
        let dt = self.dt;
        let g = self.action_gain;
        let u = match self.kind {
            EnvKind::DoubleIntegrator2d => vec![(next[2] - s[2]) / (dt * g), (next[3] - s[3]) / (dt * g)],
            EnvKind::Pendulum => vec![
                ((next[1] - s[1]) / dt + self.gravity * s[0].sin() + self.damping * s[1]) / g,
            ],
            EnvKind::UnicyclePlane => vec![(next[3] - s[3]) / (dt * g), (next[2] - s[2]) / (dt * g)],
        };
        let replay = self.step_unclamped(s, &u);
        let residual = replay
            .iter()
            .zip(next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        Ok((u, residual))
    }

    /// An equilibrium `(state, action)` pair: zero velocity at the origin.
    pub fn equilibrium(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0; self.state_dim()], vec![0.0; self.action_dim()])
    }
}

#[inline]
pub fn clamp_action(a: f64) -> f64 {
    a.clamp(ACTION_LOW, ACTION_HIGH)
}

pub fn clamp_actions(a: &mut [f64]) {
    for v in a {
        *v = clamp_action(*v);
    }
}

/// Central-difference `(A, B)` of the clamped step map.
pub fn finite_difference_jacobians(
    env: &EnvSpec,
    s: &[f64],
    u: &[f64],
    eps: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, m) = (env.state_dim(), env.action_dim());
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, m);
    for j in 0..n {
        let mut sp = s.to_vec();
        let mut sm = s.to_vec();
        sp[j] += eps;
        sm[j] -= eps;
        let (fp, fm) = (env.step(&sp, u)?, env.step(&sm, u)?);
        for i in 0..n {
            a[(i, j)] = (fp[i] - fm[i]) / (2.0 * eps);
        }
    }
    for j in 0..m {
        let mut up = u.to_vec();
        let mut um = u.to_vec();
        up[j] += eps;
        um[j] -= eps;
        let (fp, fm) = (env.step(s, &up)?, env.step(s, &um)?);
        for i in 0..n {
            b[(i, j)] = (fp[i] - fm[i]) / (2.0 * eps);
        }
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_integrator_one_step() {
        let mut env = EnvSpec::new(EnvKind::DoubleIntegrator2d);
        env.action_gain = 1.0;
        env.dt = 0.1;
        let s = env.step(&[0.0, 0.0, 0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((s[2] - 0.1).abs() < 1e-15);
        assert!((s[0] - 0.01).abs() < 1e-15);
        assert_eq!(s[1], 0.0);
    }

    #[test]
    fn equilibria_are_fixed_points() {
        for kind in [EnvKind::DoubleIntegrator2d, EnvKind::Pendulum, EnvKind::UnicyclePlane] {
            let env = EnvSpec::new(kind);
            let (s, u) = env.equilibrium();
            assert_eq!(env.step(&s, &u).unwrap(), s);
        }
        let env = EnvSpec::new(EnvKind::Pendulum);
        let mut s = vec![0.0, 0.0];
        for _ in 0..100 {
            s = env.step(&s, &[0.0]).unwrap();
        }
        assert_eq!(s, vec![0.0, 0.0]);
    }

    #[test]
    fn actions_are_clamped() {
        let env = EnvSpec::new(EnvKind::DoubleIntegrator2d);
        let s0 = [0.0; 4];
        assert_eq!(env.step(&s0, &[5.0, -9.0]).unwrap(), env.step(&s0, &[1.0, -1.0]).unwrap());
    }

    #[test]
    fn rejects_non_finite() {
        let env = EnvSpec::new(EnvKind::Pendulum);
        assert!(matches!(env.step(&[f64::NAN, 0.0], &[0.0]), Err(Error::Numeric(_))));
        assert!(env.step(&[0.0, 0.0], &[f64::INFINITY]).is_err());
        assert!(matches!(env.step(&[0.0], &[0.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn analytic_linearization_matches_finite_differences() {
        let cases: [(EnvKind, Vec<f64>, Vec<f64>); 3] = [
            (EnvKind::DoubleIntegrator2d, vec![0.3, -0.2, 1.0, 0.5], vec![0.2, -0.4]),
            (EnvKind::Pendulum, vec![2.5, -0.7], vec![0.3]),
            (EnvKind::UnicyclePlane, vec![0.5, 1.0, 0.8, 1.3], vec![-0.2, 0.35]),
        ];
        for (kind, s, u) in cases {
            let env = EnvSpec::new(kind);
            let (a, b) = env.linearize(&s, &u).unwrap();
            let (fa, fb) = finite_difference_jacobians(&env, &s, &u, 1e-6).unwrap();
            for (x, y) in a.iter().zip(fa.iter()).chain(b.iter().zip(fb.iter())) {
                let rel = (x - y).abs() / x.abs().max(y.abs()).max(1e-3);
                assert!(rel < 1e-5, "{kind:?}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn inverse_dynamics_recovers_action() {
        for kind in [EnvKind::DoubleIntegrator2d, EnvKind::Pendulum, EnvKind::UnicyclePlane] {
            let env = EnvSpec::new(kind);
            let s: Vec<f64> = (0..env.state_dim()).map(|i| 0.3 + 0.1 * i as f64).collect();
            let u: Vec<f64> = (0..env.action_dim()).map(|i| 0.4 - 0.3 * i as f64).collect();
            let next = env.step(&s, &u).unwrap();
            let (inv, residual) = env.inverse_dynamics(&s, &next).unwrap();
            assert!(residual < 1e-12);
            for (a, b) in inv.iter().zip(&u) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
