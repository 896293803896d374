//! Toy control environments, reference clips, analytic feedback experts,
//! noisy rollouts and the tracking reward.

mod dataset;
mod dynamics;
mod expert;
mod reference;
mod rollout;

pub use dataset::{
    load_dataset, save_dataset, ClipEntry, ClipRollouts, DatasetManifest, StepRecord, DATASET_FORMAT,
};
pub use dynamics::{
    clamp_action, clamp_actions, finite_difference_jacobians, EnvKind, EnvSpec, ACTION_HIGH, ACTION_LOW,
};
pub use expert::{
    build_expert, riccati_gains, DifferentiablePolicy, ExpertPolicy, LqrCost, OpenLoopPolicy, Policy,
};
pub use reference::{ClipFamily, GeneratorParams, ParamRange, ReferenceTrajectory};
pub use rollout::{
    episode_return, relative_performance, rollout, tracking_reward, RolloutNoiseConfig, Trajectory,
};

use std::f64::consts::PI;

use crate::error::Result;

/// The four fixed clips used for single-skill transfer experiments.
pub fn bundled_clips() -> Result<Vec<(EnvSpec, ReferenceTrajectory)>> {
    let pendulum = EnvSpec::new(EnvKind::Pendulum);
    let di = EnvSpec::new(EnvKind::DoubleIntegrator2d);
    let unicycle = EnvSpec::new(EnvKind::UnicyclePlane);
    let clips = vec![
        (
            pendulum.clone(),
            ReferenceTrajectory::generate(
                &pendulum,
                "pendulum-swing-up",
                GeneratorParams::SwingUp { duration: 2.0 },
                pendulum.horizon,
            )?,
        ),
        (
            pendulum.clone(),
            ReferenceTrajectory::generate(
                &pendulum,
                "pendulum-oscillation",
                GeneratorParams::Oscillation {
                    amplitude: 0.5,
                    period_steps: 40,
                    phase: 0.0,
                    center: PI,
                },
                pendulum.horizon,
            )?,
        ),
        (
            di.clone(),
            ReferenceTrajectory::generate(
                &di,
                "di-figure-eight",
                GeneratorParams::FigureEight {
                    amplitude: 1.2,
                    period: 4.0,
                    phase: 0.0,
                    rotation: 0.0,
                    center: [0.0, 0.0],
                },
                di.horizon,
            )?,
        ),
        (
            unicycle.clone(),
            ReferenceTrajectory::generate(
                &unicycle,
                "unicycle-dash",
                GeneratorParams::WaypointDash {
                    waypoints: vec![[-1.6, -0.9], [-0.5, -0.6], [0.2, 0.3], [1.2, 0.5], [1.6, -0.4]],
                },
                unicycle.horizon,
            )?,
        ),
    ];
    Ok(clips)
}

/// `n` clips for `env`, each drawn from a family chosen uniformly among those
/// the environment supports. Draws whose expert would be infeasible are
/// redrawn. Ids are `{prefix}-{index:03}`.
pub fn generate_clip_library(env: &EnvSpec, n: usize, seed: u64, prefix: &str) -> Result<Vec<ReferenceTrajectory>> {
    generate_clip_library_in(env, n, seed, prefix, ParamRange::Standard)
}

pub fn generate_clip_library_in(
    env: &EnvSpec,
    n: usize,
    seed: u64,
    prefix: &str,
    range: ParamRange,
) -> Result<Vec<ReferenceTrajectory>> {
    use rand::{Rng, SeedableRng};
    let families = ClipFamily::families_for(env.kind);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut clips = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("{prefix}-{i:03}");
        let mut attempts = 0;
        loop {
            let family = families[rng.gen_range(0..families.len())];
            let params = GeneratorParams::sample_in(family, range, &mut rng);
            let built = ReferenceTrajectory::generate(env, &id, params, env.horizon)
                .and_then(|r| build_expert(env, &r, LqrCost::default()).map(|_| r));
            match built {
                Ok(r) => {
                    clips.push(r);
                    break;
                }
                Err(e) if attempts >= 20 => return Err(e),
                Err(_) => attempts += 1,
            }
        }
    }
    Ok(clips)
}
