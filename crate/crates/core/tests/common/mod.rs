use std::path::Path;

use npmp_core::pipeline::{ExperimentConfig, Preset};

/// A preset shrunk to seconds of compute, writing into `dir`.
pub fn tiny(preset: Preset, dir: &Path) -> ExperimentConfig {
    let mut c = preset.config();
    c.output_dir = dir.to_path_buf();
    c.clips.train = 3;
    c.clips.heldout = 2;
    c.cloning.noise_levels = vec![0.1];
    c.cloning.bc_rollouts = vec![2, 3];
    c.cloning.blind = true;
    c.cloning.eval_seeds = 2;
    c.cloning.student.steps = 30;
    c.cloning.student.batch_size = 16;
    c.npmp.base.steps = 15;
    c.npmp.base.batch_subsequences = 2;
    c.npmp.latent_dims.truncate(1);
    c.npmp.alphas.truncate(1);
    c.npmp.betas.truncate(2);
    c.npmp.rollouts_per_clip = 1;
    c.eval.optimize_all_heldout = true;
    c.eval.latent_optimization.steps = 3;
    c.reuse.iterations = 2;
    c.reuse.episodes_per_iteration = 2;
    c.reuse.seeds = vec![0, 1];
    c.reuse.eval_episodes = 1;
    c
}
