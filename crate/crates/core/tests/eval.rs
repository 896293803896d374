use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use npmp_core::envs::{build_expert, generate_clip_library, EnvKind, EnvSpec, LqrCost, RolloutNoiseConfig};
use npmp_core::eval::{
    concat_latents, median, one_shot_imitate, optimize_latents, pca_fit, pca_project, pca_reconstruct,
    LatentOptimizationConfig, Split,
};
use npmp_core::nn::{Activation, StateNormalizer};
use npmp_core::npmp::{LatentProvenance, LatentSequence, NpmpModel, PriorConfig};

fn tiny_model() -> NpmpModel {
    NpmpModel::new(
        EnvKind::DoubleIntegrator2d,
        PriorConfig::new(0.9, 3).unwrap(),
        2,
        vec![8],
        vec![8],
        Activation::Elu,
        StateNormalizer::identity(4),
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap()
}

#[test]
fn median_of_even_and_odd() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    assert!(median(&[]).is_nan());
}

#[test]
fn latent_optimization_never_increases_the_objective() {
    let env = EnvSpec::new(EnvKind::DoubleIntegrator2d);
    let r = generate_clip_library(&env, 1, 4, "o").unwrap().remove(0);
    let e = build_expert(&env, &r, LqrCost::default()).unwrap();
    let model = tiny_model();
    let (res, z) = one_shot_imitate(&model, &env, &r, &e, &RolloutNoiseConfig::noiseless(), Split::Heldout).unwrap();
    assert_eq!(res.split, Split::Heldout);
    let config = LatentOptimizationConfig {
        steps: 30,
        ..LatentOptimizationConfig::default()
    };
    let opt = optimize_latents(&model, &r.states[..r.horizon()], &e.nominal_actions, &z, &config).unwrap();
    assert!(opt.losses.windows(2).all(|w| w[1] < w[0]));
    assert!(opt.losses.len() > 1);
    assert_eq!(opt.latents.provenance, LatentProvenance::Optimized);
}

#[test]
fn concatenation_preserves_order() {
    let a = LatentSequence {
        latents: vec![vec![1.0], vec![2.0]],
        provenance: LatentProvenance::Encoded,
    };
    let b = LatentSequence {
        latents: vec![vec![3.0]],
        provenance: LatentProvenance::Encoded,
    };
    let c = concat_latents(&[a, b]).unwrap();
    assert_eq!(c.latents, vec![vec![1.0], vec![2.0], vec![3.0]]);
    assert_eq!(c.provenance, LatentProvenance::Concatenated);
    assert!(concat_latents(&[]).is_err());
}

fn subspace_data(seed: u64, dim: usize, k: usize, n: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis: Vec<Vec<f64>> = (0..k).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let offset: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
    (0..n)
        .map(|_| {
            let c: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
            (0..dim)
                .map(|j| offset[j] + (0..k).map(|i| c[i] * basis[i][j]).sum::<f64>())
                .collect()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rank_k_data_reconstructs_exactly(seed in 0u64..1000, dim in 3usize..8, k in 1usize..3) {
        let data = subspace_data(seed, dim, k, 40);
        let p = pca_fit(&data, k).unwrap();
        for v in &data {
            let back = pca_reconstruct(&p, &pca_project(&p, v).unwrap()).unwrap();
            let err = back.iter().zip(v).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            prop_assert!(err < 1e-10, "{err:e}");
        }
        prop_assert!((p.explained_variance.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn axes_are_orthonormal_and_sorted(seed in 0u64..1000, dim in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..dim).map(|j| rng.gen_range(-1.0..1.0) * (j + 1) as f64).collect())
            .collect();
        let p = pca_fit(&data, dim).unwrap();
        for i in 0..dim {
            for j in 0..dim {
                let dot: f64 = p.axes[i].iter().zip(&p.axes[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot - want).abs() < 1e-9);
            }
        }
        prop_assert!(p.explained_variance.windows(2).all(|w| w[0] >= w[1]));
        let centred = pca_project(&p, &p.mean).unwrap();
        prop_assert!(centred.iter().all(|c| c.abs() < 1e-12));
    }
}
