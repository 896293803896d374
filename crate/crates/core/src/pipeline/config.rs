use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Stage;
use crate::cloning::{LfpcBatchShape, StudentTrainingConfig};
use crate::envs::{EnvKind, ParamRange};
use crate::error::{Error, Result};
use crate::eval::LatentOptimizationConfig;
use crate::npmp::{NpmpMode, NpmpTrainingConfig};
use crate::reuse::ReuseConfig;

/// Environment variable holding the root that relative output directories
/// resolve against.
pub const OUTPUT_ROOT_ENV: &str = "NPMP_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClipsConfig {
    /// Use the four fixed single-skill clips instead of sampling a library.
    pub bundled: bool,
    pub train: usize,
    pub heldout: usize,
    pub train_seed: u64,
    pub heldout_seed: u64,
    pub train_prefix: String,
    pub heldout_prefix: String,
    pub heldout_range: ParamRange,
}

impl Default for ClipsConfig {
    fn default() -> Self {
        Self {
            bundled: false,
            train: 20,
            heldout: 5,
            train_seed: 123,
            heldout_seed: 456,
            train_prefix: "train".into(),
            heldout_prefix: "heldout".into(),
            heldout_range: ParamRange::Standard,
        }
    }
}

/// Single-skill transfer conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CloningConfig {
    /// Evaluation noise levels; BC students are trained at each of them.
    pub noise_levels: Vec<f64>,
    pub bc_rollouts: Vec<usize>,
    pub lfpc: bool,
    pub blind: bool,
    pub eval_seeds: usize,
    pub student: StudentTrainingConfig,
}

impl Default for CloningConfig {
    fn default() -> Self {
        Self {
            noise_levels: vec![0.0, 0.05, 0.1],
            bc_rollouts: vec![100, 200, 500, 1000],
            lfpc: true,
            blind: false,
            eval_seeds: 20,
            student: StudentTrainingConfig::default(),
        }
    }
}

/// A grid of NPMP models sharing `base`; every combination of the listed
/// values is trained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NpmpGridConfig {
    pub base: NpmpTrainingConfig,
    pub betas: Vec<f64>,
    pub latent_dims: Vec<usize>,
    pub alphas: Vec<f64>,
    pub modes: Vec<NpmpMode>,
    pub rollouts_per_clip: usize,
    pub rollout_noise: f64,
}

impl Default for NpmpGridConfig {
    fn default() -> Self {
        let base = NpmpTrainingConfig {
            batch_subsequences: 16,
            steps: 6000,
            ..NpmpTrainingConfig::default()
        };
        Self {
            betas: vec![base.beta],
            latent_dims: vec![base.latent_dim],
            alphas: vec![base.alpha],
            modes: vec![base.mode],
            base,
            rollouts_per_clip: 3,
            rollout_noise: 0.1,
        }
    }
}

impl NpmpGridConfig {
    /// `(tag, config)` for every grid point, in a fixed order.
    pub fn expand(&self, seed: u64) -> Vec<(String, NpmpTrainingConfig)> {
        let mut out = Vec::new();
        for &mode in &self.modes {
            for &beta in &self.betas {
                for &latent_dim in &self.latent_dims {
                    for &alpha in &self.alphas {
                        let tag = format!("{}_beta{beta}_z{latent_dim}_alpha{alpha}", mode.name());
                        out.push((
                            tag,
                            NpmpTrainingConfig {
                                mode,
                                beta,
                                latent_dim,
                                alpha,
                                seed: self.base.seed ^ seed,
                                ..self.base.clone()
                            },
                        ));
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub action_noise_std: f64,
    /// Latent optimization runs on held-out clips scoring below this.
    pub optimize_below: f64,
    pub optimize_all_heldout: bool,
    pub latent_optimization: LatentOptimizationConfig,
    pub pca_components: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            action_noise_std: 0.0,
            optimize_below: crate::eval::FAILURE_THRESHOLD,
            optimize_all_heldout: false,
            latent_optimization: LatentOptimizationConfig::default(),
            pca_components: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    /// Relative paths resolve against `$NPMP_OUTPUT_ROOT` (or the working
    /// directory when unset).
    pub output_dir: PathBuf,
    pub env: EnvKind,
    pub stages: Vec<Stage>,
    pub clips: ClipsConfig,
    pub cloning: CloningConfig,
    pub npmp: NpmpGridConfig,
    pub eval: EvalConfig,
    pub reuse: ReuseConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seed: 0,
            output_dir: PathBuf::from("runs/experiment"),
            env: EnvKind::DoubleIntegrator2d,
            stages: Vec::new(),
            clips: ClipsConfig::default(),
            cloning: CloningConfig::default(),
            npmp: NpmpGridConfig::default(),
            eval: EvalConfig::default(),
            reuse: ReuseConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Fig2,
    Fig3,
    Fig4,
    Fig5,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig2" => Ok(Preset::Fig2),
            "fig3" => Ok(Preset::Fig3),
            "fig4" => Ok(Preset::Fig4),
            "fig5" => Ok(Preset::Fig5),
            other => Err(Error::Argument(format!("unknown preset {other:?}"))),
        }
    }
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig2 => "fig2",
            Preset::Fig3 => "fig3",
            Preset::Fig4 => "fig4",
            Preset::Fig5 => "fig5",
        }
    }

    pub fn config(self) -> ExperimentConfig {
        let base = ExperimentConfig {
            name: self.name().into(),
            output_dir: PathBuf::from(format!("runs/{}", self.name())),
            ..ExperimentConfig::default()
        };
        match self {
            Preset::Fig2 => ExperimentConfig {
                stages: vec![Stage::GenerateClips, Stage::BuildExperts, Stage::Trace, Stage::Clone, Stage::Evaluate],
                clips: ClipsConfig {
                    bundled: true,
                    ..ClipsConfig::default()
                },
                ..base
            },
            Preset::Fig3 => ExperimentConfig {
                stages: vec![
                    Stage::GenerateClips,
                    Stage::BuildExperts,
                    Stage::Collect,
                    Stage::Trace,
                    Stage::TrainNpmp,
                    Stage::Evaluate,
                ],
                npmp: NpmpGridConfig {
                    betas: vec![0.001, 0.1, 1.0],
                    latent_dims: vec![8, 3],
                    alphas: vec![0.95, 0.0],
                    modes: vec![NpmpMode::NoisyRolloutCloning, NpmpMode::Lfpc],
                    ..NpmpGridConfig::default()
                },
                ..base
            },
            Preset::Fig4 => ExperimentConfig {
                stages: vec![
                    Stage::GenerateClips,
                    Stage::BuildExperts,
                    Stage::Collect,
                    Stage::TrainNpmp,
                    Stage::Evaluate,
                ],
                clips: ClipsConfig {
                    heldout: 16,
                    heldout_range: ParamRange::Stretched,
                    ..ClipsConfig::default()
                },
                ..base
            },
            Preset::Fig5 => ExperimentConfig {
                stages: vec![Stage::GenerateClips, Stage::BuildExperts, Stage::Collect, Stage::TrainNpmp, Stage::Reuse],
                npmp: NpmpGridConfig {
                    betas: vec![0.1, 0.001],
                    ..NpmpGridConfig::default()
                },
                ..base
            },
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    /// Output directory with relative paths resolved against the output root.
    pub fn resolved_output_dir(&self) -> PathBuf {
        if self.output_dir.is_absolute() {
            return self.output_dir.clone();
        }
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) => PathBuf::from(root).join(&self.output_dir),
            None => self.output_dir.clone(),
        }
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        content_hash(self)
    }

    pub fn train_ids(&self) -> Vec<String> {
        (0..self.clips.train).map(|i| format!("{}-{i:03}", self.clips.train_prefix)).collect()
    }

    pub fn heldout_ids(&self) -> Vec<String> {
        (0..self.clips.heldout).map(|i| format!("{}-{i:03}", self.clips.heldout_prefix)).collect()
    }

    /// Every range and consistency violation, each prefixed by its field path.
    pub fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                errs.push(msg);
            }
        };
        check(!self.name.is_empty(), "name: must not be empty".into());
        check(!self.stages.is_empty(), "stages: at least one stage is required".into());
        for w in self.stages.windows(2) {
            check(
                w[0].order() < w[1].order(),
                format!("stages: {} must come before {}", w[1].name(), w[0].name()),
            );
        }
        let c = &self.clips;
        if !c.bundled {
            check(c.train >= 2, format!("clips.train: need at least 2 clips, got {}", c.train));
            check(
                !c.train_prefix.is_empty() && !c.heldout_prefix.is_empty(),
                "clips: prefixes must not be empty".into(),
            );
            let train = self.train_ids();
            if let Some(id) = self.heldout_ids().iter().find(|id| train.contains(id)) {
                check(false, format!("clips.heldout_prefix: held-out id {id} overlaps the training ids"));
            }
        }
        let cl = &self.cloning;
        for (i, eta) in cl.noise_levels.iter().enumerate() {
            check(
                eta.is_finite() && *eta >= 0.0,
                format!("cloning.noise_levels[{i}]: must be finite and >= 0, got {eta}"),
            );
        }
        for (i, n) in cl.bc_rollouts.iter().enumerate() {
            check(*n > 0, format!("cloning.bc_rollouts[{i}]: must be positive"));
        }
        check(cl.eval_seeds > 0, "cloning.eval_seeds: must be positive".into());
        errs.extend(student_violations("cloning.student", &cl.student));

        let n = &self.npmp;
        for (field, empty) in [
            ("betas", n.betas.is_empty()),
            ("latent_dims", n.latent_dims.is_empty()),
            ("alphas", n.alphas.is_empty()),
            ("modes", n.modes.is_empty()),
        ] {
            if empty {
                errs.push(format!("npmp.{field}: must list at least one value"));
            }
        }
        if n.rollouts_per_clip == 0 {
            errs.push("npmp.rollouts_per_clip: must be positive".into());
        }
        if !(n.rollout_noise.is_finite() && n.rollout_noise >= 0.0) {
            errs.push(format!("npmp.rollout_noise: must be finite and >= 0, got {}", n.rollout_noise));
        }
        for (tag, cfg) in n.expand(self.seed) {
            if let Err(Error::Config(list)) = cfg.validate() {
                errs.extend(list.into_iter().map(|e| format!("npmp[{tag}]: {e}")));
            }
        }

        let e = &self.eval;
        if !(e.action_noise_std.is_finite() && e.action_noise_std >= 0.0) {
            errs.push("eval.action_noise_std: must be finite and >= 0".into());
        }
        if !(e.latent_optimization.step_size > 0.0) {
            errs.push("eval.latent_optimization.step_size: must be positive".into());
        }
        if e.pca_components == 0 {
            errs.push("eval.pca_components: must be positive".into());
        }
        if let Err(Error::Config(list)) = self.reuse.validate() {
            errs.extend(list.into_iter().map(|e| format!("reuse: {e}")));
        }
        if self.stages.contains(&Stage::Reuse) && self.env == EnvKind::Pendulum {
            errs.push("env: the reuse task needs a planar body".into());
        }
        if self.clips.bundled && self.stages.iter().any(|s| matches!(s, Stage::TrainNpmp | Stage::Reuse)) {
            errs.push("clips.bundled: bundled clips only support the cloning stages".into());
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.violations();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

fn student_violations(path: &str, s: &StudentTrainingConfig) -> Vec<String> {
    let mut errs = Vec::new();
    if s.steps == 0 {
        errs.push(format!("{path}.steps: must be positive"));
    }
    if s.batch_size == 0 {
        errs.push(format!("{path}.batch_size: must be positive"));
    }
    if !(s.learning_rate > 0.0 && s.learning_rate.is_finite()) {
        errs.push(format!("{path}.learning_rate: must be positive"));
    }
    if !(0.0..=1.0).contains(&s.final_lr_fraction) {
        errs.push(format!("{path}.final_lr_fraction: must lie in [0, 1]"));
    }
    if s.hidden_dims.iter().any(|&h| h == 0) {
        errs.push(format!("{path}.hidden_dims: widths must be positive"));
    }
    let LfpcBatchShape {
        subsequences,
        length,
        perturbations,
    } = s.lfpc_shape;
    if subsequences == 0 || length == 0 || perturbations == 0 {
        errs.push(format!("{path}.lfpc_shape: all dimensions must be positive"));
    }
    errs
}

/// Loads and validates `path` without side effects.
pub fn validate_config(path: &Path) -> Result<ExperimentConfig> {
    let config = ExperimentConfig::load(path)?;
    config.validate()?;
    Ok(config)
}

pub(crate) fn content_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config types always serialize");
    hex::encode(Sha256::digest(bytes))
}
