use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use npmp_core::cloning::{
    collect_bc_dataset, estimate_perturbation_model, feedback_action, feedback_target, lfpc_loss, load_trace,
    perturbation_model_for, record_nominal_trace, sample_perturbations, save_trace, train_student, LfpcBatchShape,
    LossKind, PerturbationModel, PerturbedSample, StudentTrainingConfig, TrainingData,
};
use npmp_core::envs::{build_expert, bundled_clips, generate_clip_library, EnvKind, EnvSpec, LqrCost, Policy};
use npmp_core::Error;

fn di_setup() -> (EnvSpec, npmp_core::envs::ExpertPolicy, npmp_core::cloning::NominalTrace) {
    let env = EnvSpec::new(EnvKind::DoubleIntegrator2d);
    let reference = generate_clip_library(&env, 1, 21, "c").unwrap().remove(0);
    let expert = build_expert(&env, &reference, LqrCost::default()).unwrap();
    let trace = record_nominal_trace(&env, &expert, &reference.clip_id, reference.start(), reference.horizon()).unwrap();
    (env, expert, trace)
}

#[test]
fn lqr_trace_jacobians_are_the_gains() {
    let (_, expert, trace) = di_setup();
    for t in 0..trace.horizon() {
        let raw = expert.feedback_raw(t, &trace.states[t]).unwrap();
        if raw.iter().all(|a| a.abs() < 1.0) {
            assert!((&trace.jacobians[t] - &expert.gains[t]).amax() < 1e-12);
        }
    }
}

#[test]
fn trace_file_roundtrip() {
    let (_, _, trace) = di_setup();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.json");
    save_trace(&path, &trace).unwrap();
    assert_eq!(load_trace(&path).unwrap(), trace);
}

#[test]
fn bc_dataset_shape_and_targets() {
    let (env, expert, _) = di_setup();
    let ds = collect_bc_dataset(&env, &expert, &expert.reference, 0.1, 3, 4).unwrap();
    assert_eq!(ds.len(), 3 * expert.horizon());
    for r in &ds.records {
        assert_eq!(expert.act(r.t, &r.state).unwrap(), r.target);
    }
}

#[test]
fn perturbation_estimate_is_positive_and_seeded() {
    let (env, expert, trace) = di_setup();
    let a = perturbation_model_for(&env, &expert, &expert.reference, &trace, 3).unwrap();
    let b = perturbation_model_for(&env, &expert, &expert.reference, &trace, 3).unwrap();
    assert_eq!(a, b);
    assert!(a.std.iter().all(|s| *s > 0.0));
    assert!(estimate_perturbation_model(&[], &trace).is_err());
}

#[test]
fn lfpc_training_needs_a_trace() {
    let (env, expert, _) = di_setup();
    let ds = collect_bc_dataset(&env, &expert, &expert.reference, 0.1, 1, 0).unwrap();
    let config = StudentTrainingConfig {
        steps: 1,
        ..StudentTrainingConfig::default()
    };
    assert!(matches!(
        train_student(LossKind::Lfpc, TrainingData::Dataset(&ds), &config),
        Err(Error::Argument(_))
    ));
}

#[test]
fn short_lfpc_training_reduces_the_loss() {
    let (_, _, trace) = di_setup();
    let perturbation = PerturbationModel::new(vec![0.05; 4]).unwrap();
    let config = StudentTrainingConfig {
        steps: 400,
        hidden_dims: vec![32, 32],
        ..StudentTrainingConfig::default()
    };
    let (_, log) = train_student(
        LossKind::Lfpc,
        TrainingData::Trace {
            trace: &trace,
            perturbation: &perturbation,
        },
        &config,
    )
    .unwrap();
    let head: f64 = log.losses[..20].iter().sum::<f64>() / 20.0;
    let tail: f64 = log.losses[log.losses.len() - 20..].iter().sum::<f64>() / 20.0;
    assert!(tail < 0.5 * head, "{head} -> {tail}");
}

#[test]
fn blind_student_loses_feedback() {
    // Blind targets ignore the perturbation, so the fitted local gain
    // should be far smaller than the expert's.
    let (env, reference) = bundled_clips().unwrap().remove(2);
    let expert = build_expert(&env, &reference, LqrCost::default()).unwrap();
    let trace = record_nominal_trace(&env, &expert, &reference.clip_id, reference.start(), reference.horizon()).unwrap();
    let perturbation = perturbation_model_for(&env, &expert, &reference, &trace, 1).unwrap();
    let config = StudentTrainingConfig {
        steps: 2000,
        ..StudentTrainingConfig::default()
    };
    let data = TrainingData::Trace {
        trace: &trace,
        perturbation: &perturbation,
    };
    let (blind, _) = train_student(LossKind::Blind, data, &config).unwrap();
    let (lfpc, _) = train_student(LossKind::Lfpc, data, &config).unwrap();
    use npmp_core::envs::DifferentiablePolicy;
    let norm = |p: &npmp_core::cloning::StudentPolicy| {
        (10..60)
            .map(|t| p.action_jacobian(t, &trace.states[t]).unwrap().norm())
            .sum::<f64>()
    };
    let expert_norm: f64 = (10..60).map(|t| trace.jacobians[t].norm()).sum();
    assert!(norm(&blind) < 0.5 * norm(&lfpc), "blind {} lfpc {}", norm(&blind), norm(&lfpc));
    assert!(norm(&lfpc) > 0.5 * expert_norm);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn feedback_target_is_nominal_at_zero_delta(t in 0usize..100) {
        let (_, _, trace) = di_setup();
        let target = feedback_target(&trace, t, &trace.states[t]).unwrap();
        prop_assert_eq!(&target, &trace.actions[t]);
        let clamped = feedback_action(&trace, t, &trace.states[t]).unwrap();
        prop_assert!(clamped.iter().all(|a| a.abs() <= 1.0));
    }

    #[test]
    fn batch_shape_is_respected(subs in 1usize..5, len in 1usize..40, pert in 1usize..4, seed in 0u64..100) {
        let (_, _, trace) = di_setup();
        let model = PerturbationModel::new(vec![0.1; 4]).unwrap();
        let shape = LfpcBatchShape { subsequences: subs, length: len, perturbations: pert };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = sample_perturbations(&trace, &model, shape, &mut rng).unwrap();
        prop_assert_eq!(samples.len(), shape.samples());
        prop_assert!(samples.iter().all(|s| s.t < trace.horizon()));
    }

    #[test]
    fn lfpc_loss_is_nonnegative(seed in 0u64..50) {
        let (_, _, trace) = di_setup();
        let config = StudentTrainingConfig { steps: 0, ..StudentTrainingConfig::default() };
        let model = PerturbationModel::new(vec![0.1; 4]).unwrap();
        let data = TrainingData::Trace { trace: &trace, perturbation: &model };
        let student = npmp_core::cloning::init_student(data, &StudentTrainingConfig { seed, ..config }).unwrap();
        let samples = vec![PerturbedSample { t: 3, delta: vec![0.1, -0.1, 0.0, 0.2] }];
        prop_assert!(lfpc_loss(&student, &student.params, &trace, &samples).unwrap().value >= 0.0);
    }
}
