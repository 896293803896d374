use nalgebra::DMatrix;
use proptest::prelude::*;

use npmp_core::envs::{
    build_expert, bundled_clips, generate_clip_library, riccati_gains, rollout, EnvKind, EnvSpec, LqrCost,
    OpenLoopPolicy, RolloutNoiseConfig,
};
use npmp_core::eval::{mean, relative_performance_under_noise};

/// Finite-horizon LQR solved as one least-squares problem over the stacked
/// action sequence. Returns the first-step gain `K_0` with `u_0 = -K_0 x_0`.
fn batch_first_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, horizon: usize, cost: LqrCost) -> DMatrix<f64> {
    let n = a.nrows();
    let m = b.ncols();
    // x_t = Sx[t] x_0 + sum_{k<t} A^{t-1-k} B u_k for t = 1..=T.
    let mut powers = vec![DMatrix::<f64>::identity(n, n)];
    for _ in 0..horizon {
        let next = a * powers.last().unwrap();
        powers.push(next);
    }
    let mut sx = DMatrix::<f64>::zeros(n * horizon, n);
    let mut su = DMatrix::<f64>::zeros(n * horizon, m * horizon);
    for t in 1..=horizon {
        sx.view_mut(((t - 1) * n, 0), (n, n)).copy_from(&powers[t]);
        for k in 0..t {
            let blk = &powers[t - 1 - k] * b;
            su.view_mut(((t - 1) * n, k * m), (n, m)).copy_from(&blk);
        }
    }
    let q = cost.state_weight;
    let r = cost.action_weight;
    let h = su.transpose() * &su * q + DMatrix::<f64>::identity(m * horizon, m * horizon) * r;
    let f = su.transpose() * &sx * q;
    let u_of_x0 = h.cholesky().unwrap().solve(&f);
    u_of_x0.rows(0, m).into_owned()
}

#[test]
fn riccati_matches_batch_solution_on_double_integrator() {
    let env = EnvSpec::new(EnvKind::DoubleIntegrator2d);
    let (s, u) = (vec![0.0; env.state_dim()], vec![0.0; env.action_dim()]);
    let (a, b) = env.linearize(&s, &u).unwrap();
    let cost = LqrCost::default();
    for horizon in [1, 5, 20] {
        let k = riccati_gains(&vec![(a.clone(), b.clone()); horizon], cost);
        let oracle = batch_first_gain(&a, &b, horizon, cost);
        let diff = (&k[0] - &oracle).amax();
        assert!(diff < 1e-9, "horizon {horizon}: {diff:e}");
    }
}

#[test]
fn later_gains_match_shorter_horizons() {
    let env = EnvSpec::new(EnvKind::DoubleIntegrator2d);
    let (a, b) = env.linearize(&[0.0; 4], &[0.0; 2]).unwrap();
    let cost = LqrCost::default();
    let k = riccati_gains(&vec![(a.clone(), b.clone()); 12], cost);
    for t in [3, 7, 11] {
        let oracle = batch_first_gain(&a, &b, 12 - t, cost);
        assert!((&k[t] - &oracle).amax() < 1e-9);
    }
}

#[test]
fn experts_reproduce_their_references() {
    for kind in EnvKind::ALL {
        let env = EnvSpec::new(kind);
        for reference in generate_clip_library(&env, 4, 9, "r").unwrap() {
            let expert = build_expert(&env, &reference, LqrCost::default()).unwrap();
            let traj = rollout(&env, &expert, &RolloutNoiseConfig::noiseless(), reference.start(), &reference.states)
                .unwrap();
            let worst = traj
                .states
                .iter()
                .zip(&reference.states)
                .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
                .fold(0.0f64, f64::max);
            assert!(worst < 1e-8, "{} {}: {worst:e}", kind.name(), reference.clip_id);
            assert!((traj.episode_return() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn expert_beats_open_loop_under_noise() {
    let seeds: Vec<u64> = (0..20).collect();
    for (env, reference) in bundled_clips().unwrap() {
        let expert = build_expert(&env, &reference, LqrCost::default()).unwrap();
        let open_loop = OpenLoopPolicy {
            actions: expert.nominal_actions.clone(),
        };
        let rel = mean(&relative_performance_under_noise(&env, &open_loop, &expert, &reference, 0.1, &seeds).unwrap());
        assert!(rel <= 1.0, "{}: open loop {rel}", reference.clip_id);
    }
}

#[test]
fn clip_library_is_reproducible() {
    let env = EnvSpec::new(EnvKind::UnicyclePlane);
    let a = generate_clip_library(&env, 5, 3, "u").unwrap();
    let b = generate_clip_library(&env, 5, 3, "u").unwrap();
    assert_eq!(a, b);
    let c = generate_clip_library(&env, 5, 4, "u").unwrap();
    assert_ne!(a, c);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn steps_stay_finite(kind in 0usize..3, seed in 0u64..1000, a0 in -1.0f64..1.0, a1 in -1.0f64..1.0) {
        let env = EnvSpec::new(EnvKind::ALL[kind]);
        let mut s = generate_clip_library(&env, 1, seed, "p").unwrap().remove(0).states[0].clone();
        let action: Vec<f64> = [a0, a1][..env.action_dim()].to_vec();
        for _ in 0..50 {
            s = env.step(&s, &action).unwrap();
        }
        prop_assert!(s.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn noisy_rollouts_are_seed_deterministic(seed in 0u64..10_000) {
        let env = EnvSpec::new(EnvKind::DoubleIntegrator2d);
        let reference = generate_clip_library(&env, 1, 1, "d").unwrap().remove(0);
        let expert = build_expert(&env, &reference, LqrCost::default()).unwrap();
        let noise = RolloutNoiseConfig::new(0.1, seed).unwrap();
        let a = rollout(&env, &expert, &noise, reference.start(), &reference.states).unwrap();
        let b = rollout(&env, &expert, &noise, reference.start(), &reference.states).unwrap();
        prop_assert_eq!(a, b);
    }
}
