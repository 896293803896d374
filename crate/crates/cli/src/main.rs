//! `npmp`: command-line front end for the cloning and motor-primitive
//! experiments. Every subcommand reads and writes JSON (or CSV for tables);
//! failures print one JSON object per line on stderr and exit nonzero.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use npmp_core::cloning::{
    collect_bc_dataset, collect_rollouts, perturbation_model_for, record_nominal_trace, train_student, CloningDataset,
    LossKind, StudentPolicy, StudentTrainingConfig, TrainingData,
};
use npmp_core::envs::{
    build_expert, bundled_clips, generate_clip_library_in, EnvKind, EnvSpec, ExpertPolicy, LqrCost, ParamRange,
    RolloutNoiseConfig,
};
use npmp_core::eval::{
    concat_latents, execute_latents, one_shot_imitate, optimize_latents, pca_fit, pca_project,
    LatentOptimizationConfig, LatentOptimizationResult, Split,
};
use npmp_core::io::{read_json, write_json, write_text};
use npmp_core::npmp::{
    load_checkpoint, save_checkpoint, train_npmp, LatentSequence, NpmpData, NpmpMode, NpmpModel, NpmpTrainingConfig,
    RolloutSequence,
};
use npmp_core::pipeline::{
    run_pipeline, validate_config, ClipEntry, ClipSet, ExperimentConfig, Preset, RunOptions, Stage, TraceSet,
};
use npmp_core::reuse::{
    evaluate_reuse, random_policies, train_hl_seeds, GoToTargetTask, HighLevelPolicy, HlOptimizer, ReuseConfig,
};
use npmp_core::stationary::{
    clone_stationary, limit_cycle_perturbation, limit_cycle_report, pendulum_limit_cycle, return_to_cycle_distance,
    tube_radius, StationaryModel,
};

#[derive(Parser)]
#[command(name = "npmp", version, about = "Policy cloning and neural probabilistic motor primitives")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample train and held-out reference clips (or the bundled set).
    GenClips(GenClips),
    /// Build an LQR tracking expert for every clip.
    BuildExperts(BuildExperts),
    /// Noisy expert rollouts: a BC dataset for one clip, or NPMP rollouts for all training clips.
    Collect(Collect),
    /// Nominal traces with Jacobians and perturbation models.
    Trace(TraceCmd),
    /// Train a single-clip student with bc, lfpc or blind.
    Clone(CloneCmd),
    /// Train an NPMP on rollouts or traces.
    TrainNpmp(TrainNpmp),
    /// One-shot imitation of every clip in a split.
    Imitate(Imitate),
    /// Optimize the latent sequence of one clip against its expert actions.
    OptimizeLatents(OptimizeLatents),
    /// Encode several clips and concatenate their latent sequences.
    Concat(Concat),
    /// Project latent sequences onto their principal components.
    Pca(PcaCmd),
    /// Train high-level policies in the latent space on the go-to-target task.
    ReuseTrain(ReuseTrain),
    /// Evaluate trained (or untrained) high-level policies.
    ReuseEval(ReuseEval),
    /// Phase-free LFPC from a pendulum limit cycle.
    StationaryClone(StationaryClone),
    /// Rollout report of a stationary student around its cycle.
    StationaryReport(StationaryReport),
    /// Run a staged experiment from a preset or config file.
    Run(Run),
    /// Check a config file and list every violation.
    Validate(Validate),
}

#[derive(Args)]
struct GenClips {
    #[arg(long, default_value = "double_integrator_2d")]
    env: String,
    #[arg(long, default_value_t = 20)]
    train: usize,
    #[arg(long, default_value_t = 5)]
    heldout: usize,
    #[arg(long, default_value_t = 123)]
    train_seed: u64,
    #[arg(long, default_value_t = 456)]
    heldout_seed: u64,
    #[arg(long, default_value = "standard")]
    heldout_range: String,
    /// Ignore the sampling options and write the four bundled clips.
    #[arg(long)]
    bundled: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildExperts {
    #[arg(long)]
    clips: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClipInputs {
    #[arg(long)]
    clips: PathBuf,
    #[arg(long)]
    experts: PathBuf,
}

#[derive(Args)]
struct Collect {
    #[command(flatten)]
    inputs: ClipInputs,
    /// Collect a BC dataset for this clip; otherwise rollouts for every training clip.
    #[arg(long)]
    clip: Option<String>,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 100)]
    rollouts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TraceCmd {
    #[command(flatten)]
    inputs: ClipInputs,
    /// Only this clip; otherwise every training clip.
    #[arg(long)]
    clip: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StudentArgs {
    #[arg(long, default_value_t = 20_000)]
    steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl StudentArgs {
    fn config(&self) -> StudentTrainingConfig {
        StudentTrainingConfig {
            steps: self.steps,
            learning_rate: self.learning_rate,
            seed: self.seed,
            ..StudentTrainingConfig::default()
        }
    }
}

#[derive(Args)]
struct CloneCmd {
    #[arg(long)]
    method: String,
    /// BC dataset written by `collect --clip`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Trace set written by `trace`.
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Clip to clone from the trace set (defaults to the first).
    #[arg(long)]
    clip: Option<String>,
    #[command(flatten)]
    student: StudentArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainNpmp {
    #[arg(long, default_value = "double_integrator_2d")]
    env: String,
    /// Rollouts written by `collect` (bc-rollouts mode).
    #[arg(long)]
    rollouts: Option<PathBuf>,
    /// Trace set written by `trace` (lfpc mode).
    #[arg(long)]
    traces: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    #[arg(long, default_value_t = 0.95)]
    alpha: f64,
    #[arg(long, default_value_t = 8)]
    latent_dim: usize,
    #[arg(long, default_value_t = 6000)]
    steps: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Imitate {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    inputs: ClipInputs,
    #[arg(long, default_value = "heldout")]
    split: String,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV of per-clip relative performance.
    #[arg(long)]
    out: PathBuf,
    /// Also write the encoded latent sequences, one JSON file per clip.
    #[arg(long)]
    latents_dir: Option<PathBuf>,
}

#[derive(Args)]
struct OptimizeLatents {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    inputs: ClipInputs,
    #[arg(long)]
    clip: String,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 0.1)]
    step_size: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Concat {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    clips: PathBuf,
    /// Comma-separated clip ids, in order.
    #[arg(long, value_delimiter = ',')]
    clip_ids: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PcaCmd {
    /// Latent sequence files (`LatentSequence` JSON).
    #[arg(long, num_args = 1.., required = true)]
    latents: Vec<PathBuf>,
    #[arg(long, default_value_t = 3)]
    components: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReuseTrain {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 150)]
    iterations: usize,
    /// `pg` (REINFORCE) or `cem`.
    #[arg(long, default_value = "pg")]
    optimizer: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReuseEval {
    #[arg(long)]
    model: PathBuf,
    /// Policies from `reuse-train`; omit to evaluate untrained policies.
    #[arg(long)]
    policies: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 4)]
    episodes: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StationaryClone {
    #[arg(long, default_value_t = 0.5)]
    amplitude: f64,
    #[arg(long, default_value_t = 40)]
    period: usize,
    #[arg(long, default_value_t = 3)]
    periods: usize,
    #[command(flatten)]
    student: StudentArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StationaryReport {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 3)]
    periods: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct Run {
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated subset of the configured stages.
    #[arg(long, value_delimiter = ',')]
    stages: Vec<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Single-threaded execution; reruns give byte-identical metric files.
    #[arg(long)]
    deterministic: bool,
    /// Replace outputs written under a different config.
    #[arg(long)]
    force: bool,
    /// Print the resolved config as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct Validate {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    message: String,
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    use npmp_core::Error as E;
    match e.downcast_ref::<E>() {
        Some(E::Shape { .. }) => "shape",
        Some(E::Domain(_)) => "domain",
        Some(E::Numeric(_)) => "numeric",
        Some(E::Infeasible { .. }) => "infeasible",
        Some(E::Range { .. }) => "range",
        Some(E::Argument(_)) => "argument",
        Some(E::Validation { .. }) => "validation",
        Some(E::Training { .. }) => "training",
        Some(E::Compatibility(_)) => "compatibility",
        Some(E::Config(_)) => "config",
        Some(E::StaleOutput { .. }) => "stale_output",
        Some(E::Stage { .. }) => "stage",
        Some(E::Format { .. }) => "format",
        Some(E::Io(_)) => "io",
        Some(E::Json(_)) => "json",
        None if e.downcast_ref::<std::io::Error>().is_some() => "io",
        None => "error",
    }
}

fn report(e: &anyhow::Error) {
    let kind = error_kind(e);
    let lines: Vec<String> = match e.downcast_ref::<npmp_core::Error>() {
        Some(npmp_core::Error::Config(list)) => list.clone(),
        _ => vec![format!("{e:#}")],
    };
    for message in lines {
        let line = ErrorLine { error: kind, message };
        eprintln!("{}", serde_json::to_string(&line).unwrap_or_default());
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenClips(a) => gen_clips(a),
        Command::BuildExperts(a) => build_experts(a),
        Command::Collect(a) => collect(a),
        Command::Trace(a) => trace(a),
        Command::Clone(a) => clone(a),
        Command::TrainNpmp(a) => train(a),
        Command::Imitate(a) => imitate(a),
        Command::OptimizeLatents(a) => optimize(a),
        Command::Concat(a) => concat(a),
        Command::Pca(a) => pca(a),
        Command::ReuseTrain(a) => reuse_train(a),
        Command::ReuseEval(a) => reuse_eval(a),
        Command::StationaryClone(a) => stationary_clone(a),
        Command::StationaryReport(a) => stationary_report(a),
        Command::Run(a) => run(a),
        Command::Validate(a) => validate(a),
    }
}

fn gen_clips(a: GenClips) -> Result<()> {
    let clips = if a.bundled {
        bundled_clips()?
            .into_iter()
            .map(|(env, reference)| ClipEntry {
                env,
                split: Split::Train,
                reference,
            })
            .collect()
    } else {
        let env = EnvSpec::new(a.env.parse::<EnvKind>()?);
        let range: ParamRange = a.heldout_range.parse()?;
        let mut clips = Vec::new();
        for (split, n, seed, prefix, range) in [
            (Split::Train, a.train, a.train_seed, "train", ParamRange::Standard),
            (Split::Heldout, a.heldout, a.heldout_seed, "heldout", range),
        ] {
            for reference in generate_clip_library_in(&env, n, seed, prefix, range)? {
                clips.push(ClipEntry {
                    env: env.clone(),
                    split,
                    reference,
                });
            }
        }
        clips
    };
    log::info!("{} clips", clips.len());
    write_json(&a.out, &ClipSet { clips })?;
    Ok(())
}

fn load_clips(path: &Path) -> Result<ClipSet> {
    read_json(path).with_context(|| format!("reading clips from {}", path.display()))
}

fn load_inputs(inputs: &ClipInputs) -> Result<(ClipSet, Vec<ExpertPolicy>)> {
    let clips = load_clips(&inputs.clips)?;
    let experts: Vec<ExpertPolicy> = read_json(&inputs.experts)?;
    if experts.len() != clips.clips.len() {
        bail!("{} experts for {} clips", experts.len(), clips.clips.len());
    }
    Ok((clips, experts))
}

fn find_clip(clips: &ClipSet, id: &str) -> Result<usize> {
    clips
        .clips
        .iter()
        .position(|c| c.reference.clip_id == id)
        .ok_or_else(|| anyhow!("no clip with id {id:?}"))
}

fn build_experts(a: BuildExperts) -> Result<()> {
    let clips = load_clips(&a.clips)?;
    let experts = clips
        .clips
        .iter()
        .map(|c| build_expert(&c.env, &c.reference, LqrCost::default()))
        .collect::<npmp_core::Result<Vec<_>>>()?;
    write_json(&a.out, &experts)?;
    Ok(())
}

fn collect(a: Collect) -> Result<()> {
    let (clips, experts) = load_inputs(&a.inputs)?;
    if let Some(id) = &a.clip {
        let i = find_clip(&clips, id)?;
        let c = &clips.clips[i];
        let ds = collect_bc_dataset(&c.env, &experts[i], &c.reference, a.noise, a.rollouts, a.seed)?;
        write_json(&a.out, &ds)?;
    } else {
        let mut sequences = Vec::new();
        for (i, c) in clips.split(Split::Train) {
            let seed = a.seed.wrapping_add(i as u64);
            for traj in collect_rollouts(&c.env, &experts[i], &c.reference, a.noise, a.rollouts, seed)? {
                sequences.push(RolloutSequence::from_trajectory(&c.reference.clip_id, traj));
            }
        }
        write_json(&a.out, &sequences)?;
    }
    Ok(())
}

fn trace(a: TraceCmd) -> Result<()> {
    let (clips, experts) = load_inputs(&a.inputs)?;
    let indices: Vec<usize> = match &a.clip {
        Some(id) => vec![find_clip(&clips, id)?],
        None => clips.split(Split::Train).map(|(i, _)| i).collect(),
    };
    let mut traces = Vec::new();
    let mut perturbations = Vec::new();
    for i in indices {
        let c = &clips.clips[i];
        let r = &c.reference;
        let t = record_nominal_trace(&c.env, &experts[i], &r.clip_id, r.start(), r.horizon())?;
        perturbations.push(perturbation_model_for(&c.env, &experts[i], r, &t, a.seed.wrapping_add(i as u64))?);
        traces.push(t);
    }
    let pooled = pool(&perturbations)?;
    write_json(
        &a.out,
        &TraceSet {
            traces,
            perturbations,
            pooled,
        },
    )?;
    Ok(())
}

fn pool(models: &[npmp_core::cloning::PerturbationModel]) -> Result<npmp_core::cloning::PerturbationModel> {
    let first = models.first().ok_or_else(|| anyhow!("no clips to trace"))?;
    if models.iter().any(|m| m.dim() != first.dim()) {
        return Ok(first.clone());
    }
    let n = models.len() as f64;
    let std = (0..first.dim())
        .map(|k| (models.iter().map(|m| m.std[k].powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    Ok(npmp_core::cloning::PerturbationModel::new(std)?)
}

fn clone(a: CloneCmd) -> Result<()> {
    let kind: LossKind = a.method.parse()?;
    let config = a.student.config();
    let student = match kind {
        LossKind::Bc => {
            let path = a.dataset.as_ref().ok_or_else(|| anyhow!("bc needs --dataset"))?;
            let ds: CloningDataset = read_json(path)?;
            train_student(kind, TrainingData::Dataset(&ds), &config)?.0
        }
        LossKind::Lfpc | LossKind::Blind => {
            let path = a.traces.as_ref().ok_or_else(|| anyhow!("{} needs --traces", kind.name()))?;
            let set: TraceSet = read_json(path)?;
            let k = match &a.clip {
                Some(id) => set
                    .traces
                    .iter()
                    .position(|t| &t.clip_id == id)
                    .ok_or_else(|| anyhow!("no trace for clip {id:?}"))?,
                None => 0,
            };
            let data = TrainingData::Trace {
                trace: &set.traces[k],
                perturbation: &set.perturbations[k],
            };
            train_student(kind, data, &config)?.0
        }
    };
    write_json(&a.out, &student)?;
    Ok(())
}

fn train(a: TrainNpmp) -> Result<()> {
    let env: EnvKind = a.env.parse()?;
    let base = NpmpTrainingConfig {
        beta: a.beta,
        alpha: a.alpha,
        latent_dim: a.latent_dim,
        steps: a.steps,
        batch_subsequences: a.batch,
        seed: a.seed,
        ..NpmpTrainingConfig::default()
    };
    let (model, config) = match (&a.rollouts, &a.traces) {
        (Some(path), None) => {
            let rollouts: Vec<RolloutSequence> = read_json(path)?;
            let config = NpmpTrainingConfig {
                mode: NpmpMode::NoisyRolloutCloning,
                ..base
            };
            (train_npmp(env, NpmpData::Rollouts(&rollouts), &config)?.0, config)
        }
        (None, Some(path)) => {
            let set: TraceSet = read_json(path)?;
            let config = NpmpTrainingConfig {
                mode: NpmpMode::Lfpc,
                ..base
            };
            let data = NpmpData::Traces {
                traces: &set.traces,
                perturbation: &set.pooled,
            };
            (train_npmp(env, data, &config)?.0, config)
        }
        _ => bail!("pass exactly one of --rollouts or --traces"),
    };
    save_checkpoint(&a.out, &model, Some(&config))?;
    Ok(())
}

fn load_model(path: &Path) -> Result<NpmpModel> {
    Ok(load_checkpoint(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?
        .model)
}

fn imitate(a: Imitate) -> Result<()> {
    let model = load_model(&a.model)?;
    let (clips, experts) = load_inputs(&a.inputs)?;
    let split: Split = a.split.parse()?;
    let mut csv = String::from("clip_id,split,relative_performance,episode_return,expert_return\n");
    for (i, c) in clips.split(split) {
        let noise = if a.noise > 0.0 {
            RolloutNoiseConfig::new(a.noise, a.seed.wrapping_add(i as u64))?
        } else {
            RolloutNoiseConfig::noiseless()
        };
        let (res, latents) = one_shot_imitate(&model, &c.env, &c.reference, &experts[i], &noise, split)?;
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            res.clip_id,
            split.name(),
            res.relative_performance,
            res.episode_return,
            res.expert_return
        ));
        if let Some(dir) = &a.latents_dir {
            write_json(&dir.join(format!("{}.json", res.clip_id)), &latents)?;
        }
    }
    write_text(&a.out, &csv)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct OptimizationOutput {
    clip_id: String,
    one_shot: f64,
    optimized: f64,
    result: LatentOptimizationResult,
}

fn optimize(a: OptimizeLatents) -> Result<()> {
    let model = load_model(&a.model)?;
    let (clips, experts) = load_inputs(&a.inputs)?;
    let i = find_clip(&clips, &a.clip)?;
    let c = &clips.clips[i];
    let r = &c.reference;
    let noise = RolloutNoiseConfig::noiseless();
    let (before, latents) = one_shot_imitate(&model, &c.env, r, &experts[i], &noise, c.split)?;
    let config = LatentOptimizationConfig {
        steps: a.steps,
        step_size: a.step_size,
        ..LatentOptimizationConfig::default()
    };
    let result = optimize_latents(&model, &r.states[..r.horizon()], &experts[i].nominal_actions, &latents, &config)?;
    let after = execute_latents(&model, &c.env, r, &result.latents, &experts[i], &noise, c.split)?;
    log::info!(
        "{}: objective {:.4} -> {:.4}, relative performance {:.3} -> {:.3}",
        r.clip_id,
        result.losses[0],
        result.losses.last().copied().unwrap_or(f64::NAN),
        before.relative_performance,
        after.relative_performance
    );
    write_json(
        &a.out,
        &OptimizationOutput {
            clip_id: r.clip_id.clone(),
            one_shot: before.relative_performance,
            optimized: after.relative_performance,
            result,
        },
    )?;
    Ok(())
}

fn concat(a: Concat) -> Result<()> {
    let model = load_model(&a.model)?;
    let clips = load_clips(&a.clips)?;
    if a.clip_ids.is_empty() {
        bail!("--clip-ids needs at least one id");
    }
    let sequences = a
        .clip_ids
        .iter()
        .map(|id| {
            let i = find_clip(&clips, id)?;
            Ok(model.encode_sequence(&clips.clips[i].reference.states)?)
        })
        .collect::<Result<Vec<LatentSequence>>>()?;
    write_json(&a.out, &concat_latents(&sequences)?)?;
    Ok(())
}

fn pca(a: PcaCmd) -> Result<()> {
    let sets = a
        .latents
        .iter()
        .map(|p| Ok((p.clone(), read_json::<LatentSequence>(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let pooled: Vec<Vec<f64>> = sets.iter().flat_map(|(_, s)| s.latents.iter().cloned()).collect();
    let projection = pca_fit(&pooled, a.components)?;
    let mut csv = String::from("source,t");
    for c in 0..a.components {
        csv.push_str(&format!(",pc{c}"));
    }
    csv.push('\n');
    for (path, seq) in &sets {
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("latents");
        for (t, z) in seq.latents.iter().enumerate() {
            let p: Vec<String> = pca_project(&projection, z)?.iter().map(|v| v.to_string()).collect();
            csv.push_str(&format!("{name},{t},{}\n", p.join(",")));
        }
    }
    write_text(&a.out, &csv)?;
    write_json(&a.out.with_extension("projection.json"), &projection)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ReusePolicies {
    seeds: Vec<u64>,
    policies: Vec<HighLevelPolicy>,
    curves: Vec<Vec<f64>>,
    median_curve: Vec<f64>,
}

fn reuse_task(model: &NpmpModel) -> Result<GoToTargetTask> {
    Ok(GoToTargetTask::new(EnvSpec::new(model.env))?)
}

fn reuse_train(a: ReuseTrain) -> Result<()> {
    let model = load_model(&a.model)?;
    let task = reuse_task(&model)?;
    let optimizer = match a.optimizer.as_str() {
        "pg" => HlOptimizer::PolicyGradient,
        "cem" => HlOptimizer::CrossEntropyMethod,
        other => bail!("unknown optimizer {other:?}"),
    };
    let config = ReuseConfig {
        seeds: (0..a.seeds).collect(),
        iterations: a.iterations,
        optimizer,
        ..ReuseConfig::default()
    };
    let (policies, curves, median_curve) = train_hl_seeds(&model, &task, &config)?;
    write_json(
        &a.out,
        &ReusePolicies {
            seeds: config.seeds,
            policies,
            curves,
            median_curve,
        },
    )?;
    Ok(())
}

fn reuse_eval(a: ReuseEval) -> Result<()> {
    let model = load_model(&a.model)?;
    let task = reuse_task(&model)?;
    let (seeds, policies) = match &a.policies {
        Some(path) => {
            let p: ReusePolicies = read_json(path)?;
            (p.seeds, p.policies)
        }
        None => {
            let config = ReuseConfig {
                seeds: (0..a.seeds).collect(),
                ..ReuseConfig::default()
            };
            let policies = random_policies(&model, &task, &config)?;
            (config.seeds, policies)
        }
    };
    let stats = evaluate_reuse(&model, &policies, &task, a.episodes, &seeds)?;
    log::info!("median return {:.2}", stats.median);
    write_json(&a.out, &stats)?;
    Ok(())
}

fn stationary_clone(a: StationaryClone) -> Result<()> {
    let env = EnvSpec::new(EnvKind::Pendulum);
    let (clip, expert, reference) = pendulum_limit_cycle(&env, a.amplitude, a.period, a.periods)?;
    let perturbation = limit_cycle_perturbation(&env, &expert, &reference, a.student.seed)?;
    let student: StudentPolicy = clone_stationary(&clip, &perturbation, &a.student.config())?;
    write_json(
        &a.out,
        &StationaryModel {
            env,
            clip,
            perturbation,
            student,
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct ReturnSummary {
    tube_radius: f64,
    median_distance_after_two_periods: f64,
    distances: Vec<f64>,
}

fn stationary_report(a: StationaryReport) -> Result<()> {
    let m: StationaryModel = read_json(&a.model)?;
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let report = limit_cycle_report(&m.env, &m.student, &m.clip, &m.perturbation, &seeds, a.periods, a.noise)?;
    report.export(&a.out_dir)?;
    let distances = return_to_cycle_distance(&m.env, &m.student, &m.clip, &m.perturbation, 2.0, 2, &seeds)?;
    let summary = ReturnSummary {
        tube_radius: tube_radius(&m.perturbation),
        median_distance_after_two_periods: npmp_core::eval::median(&distances),
        distances,
    };
    log::info!(
        "median distance after two periods {:.4} (tube radius {:.4})",
        summary.median_distance_after_two_periods,
        summary.tube_radius
    );
    write_json(&a.out_dir.join("return_to_cycle.json"), &summary)?;
    Ok(())
}

fn run(a: Run) -> Result<()> {
    let mut config = match (&a.preset, &a.config) {
        (Some(p), None) => p.parse::<Preset>()?.config(),
        (None, Some(path)) => ExperimentConfig::load(path)?,
        _ => bail!("pass --preset or --config"),
    };
    if let Some(dir) = a.output_dir {
        config.output_dir = dir;
    }
    if a.print_config {
        print!("{}", config.to_toml_string()?);
        return Ok(());
    }
    let stages = a.stages.iter().map(|s| s.parse::<Stage>()).collect::<npmp_core::Result<Vec<_>>>()?;
    let options = RunOptions {
        deterministic: a.deterministic,
        force: a.force,
    };
    let manifest = run_pipeline(&config, (!stages.is_empty()).then_some(&stages[..]), options)?;
    for s in &manifest.stages {
        log::info!(
            "{}: {} ({:.1}s, {} files)",
            s.stage.name(),
            if s.skipped { "cached" } else { "done" },
            s.wall_clock_secs,
            s.files.len()
        );
    }
    println!("{}", config.resolved_output_dir().join(npmp_core::pipeline::MANIFEST_FILE).display());
    Ok(())
}

fn validate(a: Validate) -> Result<()> {
    validate_config(&a.config)?;
    println!("ok");
    Ok(())
}
