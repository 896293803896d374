use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{EnvKind, EnvSpec};
use crate::error::{Error, Result};

/// Sparse go-to-target task. The target stays put until the body has been
/// within `capture_radius` of it for `dwell_steps` consecutive steps, then
/// respawns uniformly in the spawn box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoToTargetTask {
    pub env: EnvSpec,
    /// Half-width of the square spawn box centered at the origin.
    pub spawn_half_width: f64,
    pub capture_radius: f64,
    pub dwell_steps: usize,
    pub episode_len: usize,
}

impl GoToTargetTask {
    pub fn new(env: EnvSpec) -> Result<Self> {
        let task = Self {
            env,
            spawn_half_width: 1.0,
            capture_radius: 0.2,
            dwell_steps: 3,
            episode_len: 200,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        if self.env.kind == EnvKind::Pendulum {
            return Err(Error::Argument("go-to-target needs a planar body".into()));
        }
        if !(self.capture_radius > 0.0) || !(self.spawn_half_width > 0.0) {
            return Err(Error::Domain("capture radius and spawn box must be positive".into()));
        }
        if self.episode_len == 0 || self.dwell_steps == 0 {
            return Err(Error::Domain("episode length and dwell must be positive".into()));
        }
        Ok(())
    }

    pub fn sample_target<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let h = self.spawn_half_width;
        [rng.gen_range(-h..=h), rng.gen_range(-h..=h)]
    }

    /// Body at rest at a random point of the spawn box.
    pub fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut s = self.env.equilibrium().0;
        let [x, y] = self.sample_target(rng);
        let (ix, iy) = self.position_indices();
        s[ix] = x;
        s[iy] = y;
        if self.env.kind == EnvKind::UnicyclePlane {
            s[2] = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        }
        s
    }

    pub fn position(&self, state: &[f64]) -> [f64; 2] {
        let (ix, iy) = self.position_indices();
        [state[ix], state[iy]]
    }

    fn position_indices(&self) -> (usize, usize) {
        self.env.kind.position_indices().unwrap_or((0, 1))
    }

    pub fn observation_dim(&self) -> usize {
        2 + self.env.state_dim() + usize::from(self.env.kind == EnvKind::UnicyclePlane)
    }

    /// Target offset in the body frame followed by the body state.
    pub fn observe(&self, state: &[f64], target: [f64; 2]) -> Vec<f64> {
        let [px, py] = self.position(state);
        let (dx, dy) = (target[0] - px, target[1] - py);
        let (ox, oy) = if self.env.kind == EnvKind::UnicyclePlane {
            let (s, c) = state[2].sin_cos();
            (c * dx + s * dy, -s * dx + c * dy)
        } else {
            (dx, dy)
        };
        let mut obs = vec![ox, oy];
        obs.extend_from_slice(state);
        if self.env.kind == EnvKind::UnicyclePlane {
            let (s, c) = state[2].sin_cos();
            obs[4] = s;
            obs.push(c);
        }
        obs
    }

    pub fn captured(&self, state: &[f64], target: [f64; 2]) -> bool {
        let [px, py] = self.position(state);
        (px - target[0]).hypot(py - target[1]) <= self.capture_radius
    }
}

/// Mutable episode state: body, target and dwell counter.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskState {
    pub state: Vec<f64>,
    pub target: [f64; 2],
    pub dwell: usize,
}

impl TaskState {
    pub fn reset<R: Rng + ?Sized>(task: &GoToTargetTask, rng: &mut R) -> Self {
        let state = task.sample_start(rng);
        let target = task.sample_target(rng);
        Self { state, target, dwell: 0 }
    }

    /// Applies the sparse reward and respawn rule after the body moved to
    /// `next`.
    pub fn advance<R: Rng + ?Sized>(&mut self, task: &GoToTargetTask, next: Vec<f64>, rng: &mut R) -> f64 {
        self.state = next;
        if task.captured(&self.state, self.target) {
            self.dwell += 1;
            if self.dwell >= task.dwell_steps {
                self.target = task.sample_target(rng);
                self.dwell = 0;
            }
            1.0
        } else {
            self.dwell = 0;
            0.0
        }
    }
}
