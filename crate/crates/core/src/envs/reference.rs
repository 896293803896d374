//! Parameterized reference-clip generators.
//!
//! Each family describes a smooth "flat output" path (planar position or
//! pendulum angle) sampled at `k = -1..=T`; velocities, headings and speeds
//! are recovered by backward differences so that every consecutive state pair
//! is exactly reachable under the discrete dynamics.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::dynamics::{EnvKind, EnvSpec};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipFamily {
    FigureEight,
    WaypointDash,
    SwingUp,
    Oscillation,
}

impl ClipFamily {
    pub fn supported_by(self, kind: EnvKind) -> bool {
        match self {
            ClipFamily::FigureEight | ClipFamily::WaypointDash => kind != EnvKind::Pendulum,
            ClipFamily::SwingUp | ClipFamily::Oscillation => kind == EnvKind::Pendulum,
        }
    }

    pub fn families_for(kind: EnvKind) -> &'static [ClipFamily] {
        match kind {
            EnvKind::Pendulum => &[ClipFamily::SwingUp, ClipFamily::Oscillation],
            _ => &[ClipFamily::FigureEight, ClipFamily::WaypointDash],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GeneratorParams {
    /// Lissajous 1:2 curve, `center + R(rotation) (A sin(wt+phase), A/2 sin(2(wt+phase)))`.
    FigureEight {
        amplitude: f64,
        period: f64,
        phase: f64,
        rotation: f64,
        center: [f64; 2],
    },
    /// Natural cubic spline through waypoints visited at uniform times.
    WaypointDash { waypoints: Vec<[f64; 2]> },
    /// Quintic smoothstep from hanging to upright over `duration`, then hold.
    SwingUp { duration: f64 },
    /// `center + amplitude sin(2 pi k / period_steps + phase)`.
    Oscillation {
        amplitude: f64,
        period_steps: usize,
        phase: f64,
        center: f64,
    },
}

impl GeneratorParams {
    pub fn family(&self) -> ClipFamily {
        match self {
            GeneratorParams::FigureEight { .. } => ClipFamily::FigureEight,
            GeneratorParams::WaypointDash { .. } => ClipFamily::WaypointDash,
            GeneratorParams::SwingUp { .. } => ClipFamily::SwingUp,
            GeneratorParams::Oscillation { .. } => ClipFamily::Oscillation,
        }
    }

    /// Draws a parameter set for `family` from the default ranges.
    pub fn sample<R: Rng + ?Sized>(family: ClipFamily, rng: &mut R) -> Self {
        Self::sample_in(family, ParamRange::Standard, rng)
    }

    pub fn sample_in<R: Rng + ?Sized>(family: ClipFamily, range: ParamRange, rng: &mut R) -> Self {
        let wide = range == ParamRange::Stretched;
        match family {
            ClipFamily::FigureEight => GeneratorParams::FigureEight {
                amplitude: if wide { rng.gen_range(2.0..2.8) } else { rng.gen_range(1.0..1.8) },
                period: if wide { rng.gen_range(3.0..4.0) } else { rng.gen_range(4.0..6.0) },
                phase: rng.gen_range(0.0..2.0 * PI),
                rotation: rng.gen_range(0.0..2.0 * PI),
                center: [0.0, 0.0],
            },
            ClipFamily::WaypointDash => {
                let (turn, lens) = if wide { (2.0, 1.5..2.2) } else { (1.2, 0.8..1.4) };
                let mut heading: f64 = rng.gen_range(0.0..2.0 * PI);
                let mut pts = vec![[0.0, 0.0]];
                for _ in 0..4 {
                    heading += rng.gen_range(-turn..turn);
                    let len = rng.gen_range(lens.clone());
                    let last = pts[pts.len() - 1];
                    pts.push([last[0] + len * heading.cos(), last[1] + len * heading.sin()]);
                }
                let n = pts.len() as f64;
                let cx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
                let cy = pts.iter().map(|p| p[1]).sum::<f64>() / n;
                GeneratorParams::WaypointDash {
                    waypoints: pts.iter().map(|p| [p[0] - cx, p[1] - cy]).collect(),
                }
            }
            ClipFamily::SwingUp => GeneratorParams::SwingUp {
                duration: if wide { rng.gen_range(1.2..1.7) } else { rng.gen_range(1.8..2.6) },
            },
            ClipFamily::Oscillation => GeneratorParams::Oscillation {
                amplitude: if wide { rng.gen_range(0.7..1.0) } else { rng.gen_range(0.3..0.6) },
                period_steps: if wide { rng.gen_range(24..=32) } else { rng.gen_range(36..=50) },
                phase: rng.gen_range(0.0..2.0 * PI),
                center: PI,
            },
        }
    }
}

/// Parameter ranges for sampled clips. `Stretched` draws faster, larger
/// motions outside the standard ranges.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRange {
    #[default]
    Standard,
    Stretched,
}

impl std::str::FromStr for ParamRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(ParamRange::Standard),
            "stretched" => Ok(ParamRange::Stretched),
            other => Err(Error::Argument(format!("unknown parameter range {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub clip_id: String,
    pub family: ClipFamily,
    pub params: GeneratorParams,
    /// `T + 1` states `s*_0 ..= s*_T`.
    pub states: Vec<Vec<f64>>,
}

impl ReferenceTrajectory {
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }

    pub fn start(&self) -> &[f64] {
        &self.states[0]
    }

    /// Generates the clip for `params` over `horizon` steps of `env`.
    pub fn generate(
        env: &EnvSpec,
        clip_id: impl Into<String>,
        params: GeneratorParams,
        horizon: usize,
    ) -> Result<Self> {
        let family = params.family();
        if !family.supported_by(env.kind) {
            return Err(Error::Argument(format!(
                "family {family:?} is not available for {}",
                env.kind.name()
            )));
        }
        if horizon < 2 {
            return Err(Error::Argument("reference horizon must be at least 2".into()));
        }
        let dt = env.dt;
        let states = match env.kind {
            EnvKind::Pendulum => {
                let theta: Vec<f64> = (-1..=horizon as i64)
                    .map(|k| angle_path(&params, k, dt))
                    .collect();
                (1..theta.len())
                    .map(|k| vec![theta[k], (theta[k] - theta[k - 1]) / dt])
                    .collect()
            }
            EnvKind::DoubleIntegrator2d => {
                let p: Vec<[f64; 2]> = planar_path(&params, horizon, dt)?;
                (1..p.len())
                    .map(|k| {
                        vec![
                            p[k][0],
                            p[k][1],
                            (p[k][0] - p[k - 1][0]) / dt,
                            (p[k][1] - p[k - 1][1]) / dt,
                        ]
                    })
                    .collect()
            }
            EnvKind::UnicyclePlane => {
                let p: Vec<[f64; 2]> = planar_path(&params, horizon, dt)?;
                let mut out: Vec<Vec<f64>> = Vec::with_capacity(horizon + 1);
                let mut prev_heading: Option<f64> = None;
                for k in 1..p.len() {
                    let dx = p[k][0] - p[k - 1][0];
                    let dy = p[k][1] - p[k - 1][1];
                    let speed = dx.hypot(dy) / dt;
                    if speed < 1e-3 {
                        return Err(Error::Infeasible {
                            step: k - 1,
                            reason: "unicycle path stalls (speed ~ 0)".into(),
                        });
                    }
                    let mut h = dy.atan2(dx);
                    if let Some(ph) = prev_heading {
                        h = unwrap_angle(ph, h);
                    }
                    prev_heading = Some(h);
                    out.push(vec![p[k][0], p[k][1], h, speed]);
                }
                out
            }
        };
        Ok(Self {
            clip_id: clip_id.into(),
            family,
            params,
            states,
        })
    }
}

fn unwrap_angle(prev: f64, next: f64) -> f64 {
    let mut d = next - prev;
    while d > PI {
        d -= 2.0 * PI;
    }
    while d < -PI {
        d += 2.0 * PI;
    }
    prev + d
}

fn smoothstep5(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)
}

fn angle_path(params: &GeneratorParams, k: i64, dt: f64) -> f64 {
    match params {
        GeneratorParams::SwingUp { duration } => PI * smoothstep5(k as f64 * dt / duration),
        GeneratorParams::Oscillation {
            amplitude,
            period_steps,
            phase,
            center,
        } => center + amplitude * (2.0 * PI * k as f64 / *period_steps as f64 + phase).sin(),
        _ => unreachable!("family checked by caller"),
    }
}

/// Positions at `k = -1..=horizon`.
fn planar_path(params: &GeneratorParams, horizon: usize, dt: f64) -> Result<Vec<[f64; 2]>> {
    let times: Vec<f64> = (-1..=horizon as i64).map(|k| k as f64 * dt).collect();
    match params {
        GeneratorParams::FigureEight {
            amplitude,
            period,
            phase,
            rotation,
            center,
        } => {
            let w = 2.0 * PI / period;
            let (sr, cr) = rotation.sin_cos();
            Ok(times
                .iter()
                .map(|t| {
                    let a = w * t + phase;
                    let x = amplitude * a.sin();
                    let y = 0.5 * amplitude * (2.0 * a).sin();
                    [center[0] + cr * x - sr * y, center[1] + sr * x + cr * y]
                })
                .collect())
        }
        GeneratorParams::WaypointDash { waypoints } => {
            if waypoints.len() < 2 {
                return Err(Error::Argument("waypoint dash needs at least 2 waypoints".into()));
            }
            let total = horizon as f64 * dt;
            let knots: Vec<f64> = (0..waypoints.len())
                .map(|i| total * i as f64 / (waypoints.len() - 1) as f64)
                .collect();
            let xs = NaturalSpline::new(&knots, &waypoints.iter().map(|p| p[0]).collect::<Vec<_>>());
            let ys = NaturalSpline::new(&knots, &waypoints.iter().map(|p| p[1]).collect::<Vec<_>>());
            Ok(times.iter().map(|&t| [xs.eval(t), ys.eval(t)]).collect())
        }
        _ => unreachable!("family checked by caller"),
    }
}

/// Natural cubic spline; evaluation outside the knot range extends the end segments.
struct NaturalSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl NaturalSpline {
    fn new(knots: &[f64], values: &[f64]) -> Self {
        let n = knots.len();
        let mut second = vec![0.0; n];
        if n > 2 {
            // Tridiagonal solve for interior second derivatives (Thomas algorithm).
            let mut diag = vec![0.0; n];
            let mut rhs = vec![0.0; n];
            let mut upper = vec![0.0; n];
            for i in 1..n - 1 {
                let h0 = knots[i] - knots[i - 1];
                let h1 = knots[i + 1] - knots[i];
                let lower = h0 / 6.0;
                diag[i] = (h0 + h1) / 3.0;
                upper[i] = h1 / 6.0;
                rhs[i] = (values[i + 1] - values[i]) / h1 - (values[i] - values[i - 1]) / h0;
                if i > 1 {
                    let m = lower / diag[i - 1];
                    diag[i] -= m * upper[i - 1];
                    rhs[i] -= m * rhs[i - 1];
                }
            }
            for i in (1..n - 1).rev() {
                let next = if i + 1 < n - 1 { second[i + 1] } else { 0.0 };
                second[i] = (rhs[i] - upper[i] * next) / diag[i];
            }
        }
        Self {
            knots: knots.to_vec(),
            values: values.to_vec(),
            second,
        }
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.knots.len();
        let i = match self.knots.iter().position(|&k| k > t) {
            Some(0) => 0,
            Some(j) => (j - 1).min(n - 2),
            None => n - 2,
        };
        let (x0, x1) = (self.knots[i], self.knots[i + 1]);
        let h = x1 - x0;
        let a = (x1 - t) / h;
        let b = (t - x0) / h;
        a * self.values[i]
            + b * self.values[i + 1]
            + ((a * a * a - a) * self.second[i] + (b * b * b - b) * self.second[i + 1]) * h * h / 6.0
    }
}
