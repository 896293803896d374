use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, Stage, StageReader, StageWriter};
use crate::cloning::{
    collect_rollouts, perturbation_model_for, record_nominal_trace, rollout_seed, train_student, CloningDataset, FeedbackPolicy, LossKind,
    NominalTrace, PerturbationModel, StudentPolicy, StudentTrainingConfig, TrainingData,
};
use crate::envs::{
    build_expert, bundled_clips, generate_clip_library_in, EnvSpec, ExpertPolicy, LqrCost,
    OpenLoopPolicy, ParamRange, Policy, ReferenceTrajectory, RolloutNoiseConfig,
};
use crate::error::{Error, Result};
use crate::eval::{
    execute_latents, mean, median, one_shot_imitate, optimize_latents, pca_fit, pca_project,
    relative_performance_under_noise, ReportRow, Split, FAILURE_THRESHOLD,
};
use crate::npmp::{train_npmp, Checkpoint, NpmpData, NpmpMode, NpmpModel, NpmpTrainingLog, RolloutSequence};
use crate::reuse::{decoder_checksum, evaluate_reuse, random_policies, train_hl_seeds, GoToTargetTask, ReuseStats};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub env: EnvSpec,
    pub split: Split,
    pub reference: ReferenceTrajectory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipSet {
    pub clips: Vec<ClipEntry>,
}

impl ClipSet {
    pub fn split(&self, split: Split) -> impl Iterator<Item = (usize, &ClipEntry)> {
        self.clips.iter().enumerate().filter(move |(_, c)| c.split == split)
    }
}

/// Nominal traces of the training clips with their perturbation models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSet {
    pub traces: Vec<NominalTrace>,
    pub perturbations: Vec<PerturbationModel>,
    /// Root-mean-square of the per-clip stds, used for multi-clip LFPC.
    pub pooled: PerturbationModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentEntry {
    pub clip_id: String,
    /// `lfpc`, `blind` or `bc-<rollouts>`.
    pub method: String,
    /// Noise level the training data was collected at (BC only).
    pub train_noise: Option<f64>,
    pub student: StudentPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub split: Split,
    pub clips: usize,
    pub mean: f64,
    pub median: f64,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentOptimizationRecord {
    pub model: String,
    pub clip_id: String,
    pub one_shot: f64,
    pub optimized: f64,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub accepted_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReuseSummary {
    pub model: String,
    pub decoder_checksum: String,
    pub random: ReuseStats,
    pub trained: ReuseStats,
    pub median_curve: Vec<f64>,
    pub curves: Vec<Vec<f64>>,
}

/// The config fields a stage depends on, as JSON.
pub(crate) fn config_subtree(config: &ExperimentConfig, stage: Stage) -> serde_json::Value {
    match stage {
        Stage::GenerateClips => serde_json::json!({ "env": v(&config.env), "clips": v(&config.clips) }),
        Stage::BuildExperts | Stage::Trace => serde_json::json!({ "seed": config.seed }),
        Stage::Collect => serde_json::json!({
            "seed": config.seed,
            "rollouts_per_clip": config.npmp.rollouts_per_clip,
            "rollout_noise": config.npmp.rollout_noise,
        }),
        Stage::Clone => serde_json::json!({ "seed": config.seed, "cloning": v(&config.cloning) }),
        Stage::TrainNpmp => serde_json::json!({ "seed": config.seed, "npmp": v(&config.npmp) }),
        Stage::Evaluate => serde_json::json!({
            "seed": config.seed,
            "eval": v(&config.eval),
            "noise_levels": config.cloning.noise_levels,
            "eval_seeds": config.cloning.eval_seeds,
        }),
        Stage::Reuse => serde_json::json!({ "reuse": v(&config.reuse) }),
    }
}

fn v<T: Serialize>(x: &T) -> serde_json::Value {
    serde_json::to_value(x).expect("config types always serialize")
}

/// Independent seed for `(stage, a, b)` under the global seed.
fn derive_seed(seed: u64, stage: Stage, a: usize, b: usize) -> u64 {
    rollout_seed(rollout_seed(rollout_seed(seed, stage.order()), a), b)
}

pub(crate) fn run_stage(
    config: &ExperimentConfig,
    stage: Stage,
    input: &StageReader<'_>,
    out: &mut StageWriter<'_>,
) -> Result<()> {
    match stage {
        Stage::GenerateClips => gen_clips(config, out),
        Stage::BuildExperts => build_experts(input, out),
        Stage::Collect => collect(config, input, out),
        Stage::Trace => trace(config, input, out),
        Stage::Clone => clone_students(config, input, out),
        Stage::TrainNpmp => train_models(config, input, out),
        Stage::Evaluate => evaluate(config, input, out),
        Stage::Reuse => reuse(config, input, out),
    }
}

fn gen_clips(config: &ExperimentConfig, out: &mut StageWriter<'_>) -> Result<()> {
    let c = &config.clips;
    let clips = if c.bundled {
        bundled_clips()?
            .into_iter()
            .map(|(env, reference)| ClipEntry {
                env,
                split: Split::Train,
                reference,
            })
            .collect()
    } else {
        let env = EnvSpec::new(config.env);
        let mut clips = Vec::with_capacity(c.train + c.heldout);
        for (split, n, seed, prefix, range) in [
            (Split::Train, c.train, c.train_seed, &c.train_prefix, ParamRange::Standard),
            (Split::Heldout, c.heldout, c.heldout_seed, &c.heldout_prefix, c.heldout_range),
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
    out.json("clips.json", &ClipSet { clips })
}

fn load_clips(input: &StageReader<'_>) -> Result<ClipSet> {
    input.json(Stage::GenerateClips, "clips.json")
}

fn load_experts(input: &StageReader<'_>) -> Result<Vec<ExpertPolicy>> {
    input.json(Stage::BuildExperts, "experts.json")
}

fn build_experts(input: &StageReader<'_>, out: &mut StageWriter<'_>) -> Result<()> {
    let clips = load_clips(input)?;
    let experts = clips
        .clips
        .iter()
        .map(|c| build_expert(&c.env, &c.reference, LqrCost::default()))
        .collect::<Result<Vec<_>>>()?;
    out.json("experts.json", &experts)
}

fn collect(config: &ExperimentConfig, input: &StageReader<'_>, out: &mut StageWriter<'_>) -> Result<()> {
    let clips = load_clips(input)?;
    let experts = load_experts(input)?;
    let mut sequences = Vec::new();
    for (i, c) in clips.split(Split::Train) {
        let seed = derive_seed(config.seed, Stage::Collect, i, 0);
        for traj in collect_rollouts(
            &c.env,
            &experts[i],
            &c.reference,
            config.npmp.rollout_noise,
            config.npmp.rollouts_per_clip,
            seed,
        )? {
            sequences.push(RolloutSequence::from_trajectory(&c.reference.clip_id, traj));
        }
    }
    out.json("rollouts.json", &sequences)
}

fn trace(config: &ExperimentConfig, input: &StageReader<'_>, out: &mut StageWriter<'_>) -> Result<()> {
    let clips = load_clips(input)?;
    let experts = load_experts(input)?;
    let mut traces = Vec::new();
    let mut perturbations = Vec::new();
    for (i, c) in clips.split(Split::Train) {
        let r = &c.reference;
        let trace = record_nominal_trace(&c.env, &experts[i], &r.clip_id, r.start(), r.horizon())?;
        let seed = derive_seed(config.seed, Stage::Trace, i, 0);
        perturbations.push(perturbation_model_for(&c.env, &experts[i], r, &trace, seed)?);
        traces.push(trace);
    }
    let pooled = pooled_perturbation(&perturbations)?;
    out.json(
        "traces.json",
        &TraceSet {
            traces,
            perturbations,
            pooled,
        },
    )
}

fn pooled_perturbation(models: &[PerturbationModel]) -> Result<PerturbationModel> {
    let first = models.first().ok_or_else(|| Error::Argument("no training clips".into()))?;
    // Bundled clips mix environments; pool only when all dimensions agree.
    if models.iter().any(|m| m.dim() != first.dim()) {
        return Ok(first.clone());
    }
    let n = models.len() as f64;
    let std = (0..first.dim())
        .map(|k| (models.iter().map(|m| m.std[k] * m.std[k]).sum::<f64>() / n).sqrt())
        .collect();
    PerturbationModel::new(std)
}

fn student_config(config: &ExperimentConfig, salt: usize) -> StudentTrainingConfig {
    StudentTrainingConfig {
        seed: rollout_seed(config.cloning.student.seed ^ config.seed, salt),
        ..config.cloning.student.clone()
    }
}

fn clone_students(config: &ExperimentConfig, input: &StageReader<'_>, out: &mut StageWriter<'_>) -> Result<()> {
    let clips = load_clips(input)?;
    let experts = load_experts(input)?;
    let traces: TraceSet = input.json(Stage::Trace, "traces.json")?;
    let cl = &config.cloning;
    let mut students = Vec::new();
    for (k, (i, c)) in clips.split(Split::Train).enumerate() {
        let clip_id = &c.reference.clip_id;
        let data = TrainingData::Trace {
            trace: &traces.traces[k],
            perturbation: &traces.perturbations[k],
        };
        let mut methods = Vec::new();
        if cl.lfpc {
            methods.push(LossKind::Lfpc);
        }
        if cl.blind {
            methods.push(LossKind::Blind);
        }
        for kind in methods {
            log::info!("clone: {} {clip_id}", kind.name());
            let (student, _) = train_student(kind, data, &student_config(config, i))?;
            students.push(StudentEntry {
                clip_id: clip_id.clone(),
                method: kind.name().into(),
                train_noise: None,
                student,
            });
        }
        let most = cl.bc_rollouts.iter().copied().max().unwrap_or(0);
        for (e, &eta) in cl.noise_levels.iter().enumerate() {
            if most == 0 {
                break;
            }
            let seed = derive_seed(config.seed, Stage::Clone, i, e);
            let trajectories = collect_rollouts(&c.env, &experts[i], &c.reference, eta, most, seed)?;
            for &n in &cl.bc_rollouts {
                log::info!("clone: bc-{n} at noise {eta} {clip_id}");
                let ds = CloningDataset::from_trajectories(clip_id, eta, &trajectories[..n])?;
                let (student, _) = train_student(LossKind::Bc, TrainingData::Dataset(&ds), &student_config(config, i))?;
                students.push(StudentEntry {
                    clip_id: clip_id.clone(),
                    method: format!("bc-{n}"),
                    train_noise: Some(eta),
                    student,
                });
            }
        }
    }
    out.json("students.json", &students)
}

fn train_models(config: &ExperimentConfig, input: &StageReader<'_>, out: &mut StageWriter<'_>) -> Result<()> {
    let clips = load_clips(input)?;
    let env_kind = clips
        .clips
        .first()
        .map(|c| c.env.kind)
        .ok_or_else(|| Error::Argument("no clips".into()))?;
    let grid = config.npmp.expand(config.seed);
    let rollouts: Option<Vec<RolloutSequence>> = if grid.iter().any(|(_, c)| c.mode == NpmpMode::NoisyRolloutCloning) {
        Some(input.json(Stage::Collect, "rollouts.json")?)
    } else {
        None
    };
    let traces: Option<TraceSet> = if grid.iter().any(|(_, c)| c.mode == NpmpMode::Lfpc) {
        Some(input.json(Stage::Trace, "traces.json")?)
    } else {
        None
    };
    let mut tags = Vec::new();
    let mut logs: BTreeMap<String, NpmpTrainingLog> = BTreeMap::new();
    for (tag, cfg) in grid {
        log::info!("train-npmp: {tag}");
        let data = match cfg.mode {
            NpmpMode::NoisyRolloutCloning => NpmpData::Rollouts(rollouts.as_deref().unwrap_or(&[])),
            NpmpMode::Lfpc => {
                let t = traces.as_ref().expect("loaded above");
                NpmpData::Traces {
                    traces: &t.traces,
                    perturbation: &t.pooled,
                }
            }
        };
        let (model, log) = train_npmp(env_kind, data, &cfg)?;
        let mut ckpt = Checkpoint::new(model, Some(cfg));
        ckpt.config_hash = Some(out.hash().to_string());
        out.raw_json(&format!("{tag}.json"), &ckpt)?;
        logs.insert(tag.clone(), log);
        tags.push(tag);
    }
    out.json("models.json", &tags)?;
    out.json("training_logs.json", &logs)
}

fn load_models(input: &StageReader<'_>) -> Result<Vec<(String, NpmpModel)>> {
    let tags: Vec<String> = input.json(Stage::TrainNpmp, "models.json")?;
    tags.into_iter()
        .map(|tag| {
            let path = input.path(Stage::TrainNpmp, &format!("{tag}.json"));
            let ckpt = crate::npmp::load_checkpoint(&path)?;
            if ckpt.config_hash.as_deref() != input.expected_hash(Stage::TrainNpmp) {
                return Err(Error::StaleOutput {
                    stage: Stage::TrainNpmp.name().into(),
                    path: path.display().to_string(),
                });
            }
            Ok((tag, ckpt.model))
        })
        .collect()
}

fn summarize(rows: &[ReportRow]) -> Vec<ConditionSummary> {
    let mut groups: BTreeMap<(String, &'static str), (Split, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.condition.clone(), r.split.name()))
            .or_insert_with(|| (r.split, Vec::new()))
            .1
            .push(r.relative_performance);
    }
    groups
        .into_iter()
        .map(|((condition, _), (split, v))| ConditionSummary {
            condition,
            split,
            clips: v.len(),
            mean: mean(&v),
            median: median(&v),
            failures: v.iter().filter(|x| **x < FAILURE_THRESHOLD).count(),
        })
        .collect()
}

fn report_csv(rows: &[ReportRow]) -> String {
    let mut sorted: Vec<&ReportRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.condition.cmp(&b.condition).then(a.clip_id.cmp(&b.clip_id)));
    let mut csv = String::from("clip_id,split,condition,relative_performance\n");
    for r in sorted {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            r.clip_id,
            r.split.name(),
            r.condition,
            r.relative_performance
        );
    }
    csv
}

fn evaluate(config: &ExperimentConfig, input: &StageReader<'_>, out: &mut StageWriter<'_>) -> Result<()> {
    let clips = load_clips(input)?;
    let experts = load_experts(input)?;
    let mut rows = Vec::new();
    if input.has(Stage::Clone) {
        evaluate_students(config, input, &clips, &experts, &mut rows)?;
    }
    if input.has(Stage::TrainNpmp) {
        evaluate_models(config, input, &clips, &experts, &mut rows, out)?;
    }
    if rows.is_empty() {
        return Err(Error::Argument("nothing to evaluate: configure clone or train-npmp".into()));
    }
    out.csv("relative_performance.csv", &report_csv(&rows))?;
    out.json("summary.json", &summarize(&rows))
}

fn evaluate_students(
    config: &ExperimentConfig,
    input: &StageReader<'_>,
    clips: &ClipSet,
    experts: &[ExpertPolicy],
    rows: &mut Vec<ReportRow>,
) -> Result<()> {
    let traces: TraceSet = input.json(Stage::Trace, "traces.json")?;
    let students: Vec<StudentEntry> = input.json(Stage::Clone, "students.json")?;
    let cl = &config.cloning;
    for (k, (i, c)) in clips.split(Split::Train).enumerate() {
        let trace = &traces.traces[k];
        let feedback = FeedbackPolicy { trace };
        let open_loop = OpenLoopPolicy {
            actions: trace.actions.clone(),
        };
        for (e, &eta) in cl.noise_levels.iter().enumerate() {
            let seeds: Vec<u64> = (0..cl.eval_seeds)
                .map(|s| derive_seed(config.seed, Stage::Evaluate, i, e * cl.eval_seeds + s))
                .collect();
            let mut conditions: Vec<(String, &dyn Policy)> =
                vec![("open-loop".into(), &open_loop), ("feedback".into(), &feedback)];
            for s in students.iter().filter(|s| s.clip_id == c.reference.clip_id) {
                if s.train_noise.is_none() || s.train_noise == Some(eta) {
                    conditions.push((s.method.clone(), &s.student));
                }
            }
            for (name, policy) in conditions {
                let rel = relative_performance_under_noise(&c.env, policy, &experts[i], &c.reference, eta, &seeds)?;
                rows.push(ReportRow {
                    clip_id: c.reference.clip_id.clone(),
                    split: c.split,
                    condition: format!("{name}@{eta}"),
                    relative_performance: mean(&rel),
                });
            }
        }
    }
    Ok(())
}

fn evaluate_models(
    config: &ExperimentConfig,
    input: &StageReader<'_>,
    clips: &ClipSet,
    experts: &[ExpertPolicy],
    rows: &mut Vec<ReportRow>,
    out: &mut StageWriter<'_>,
) -> Result<()> {
    let ev = &config.eval;
    let mut records = Vec::new();
    for (tag, model) in load_models(input)? {
        let mut one_shot = Vec::new();
        let mut optimized = Vec::new();
        for (i, c) in clips.clips.iter().enumerate() {
            let noise = if ev.action_noise_std > 0.0 {
                RolloutNoiseConfig::new(ev.action_noise_std, derive_seed(config.seed, Stage::Evaluate, i, 0))?
            } else {
                RolloutNoiseConfig::noiseless()
            };
            let (res, latents) = one_shot_imitate(&model, &c.env, &c.reference, &experts[i], &noise, c.split)?;
            rows.push(ReportRow {
                clip_id: c.reference.clip_id.clone(),
                split: c.split,
                condition: format!("npmp:{tag}"),
                relative_performance: res.relative_performance,
            });
            let wanted = c.split == Split::Heldout && (ev.optimize_all_heldout || res.relative_performance < ev.optimize_below);
            if !wanted {
                continue;
            }
            let r = &c.reference;
            let opt = optimize_latents(
                &model,
                &r.states[..r.horizon()],
                &experts[i].nominal_actions,
                &latents,
                &ev.latent_optimization,
            )?;
            let after = execute_latents(&model, &c.env, r, &opt.latents, &experts[i], &noise, c.split)?;
            rows.push(ReportRow {
                clip_id: r.clip_id.clone(),
                split: c.split,
                condition: format!("npmp:{tag}:optimized"),
                relative_performance: after.relative_performance,
            });
            records.push(LatentOptimizationRecord {
                model: tag.clone(),
                clip_id: r.clip_id.clone(),
                one_shot: res.relative_performance,
                optimized: after.relative_performance,
                initial_objective: opt.losses[0],
                final_objective: *opt.losses.last().unwrap_or(&opt.losses[0]),
                accepted_steps: opt.losses.len() - 1,
            });
            one_shot.push((r.clip_id.clone(), latents.latents));
            optimized.push((r.clip_id.clone(), opt.latents.latents));
        }
        if !one_shot.is_empty() {
            let pooled: Vec<Vec<f64>> = one_shot
                .iter()
                .chain(&optimized)
                .flat_map(|(_, z)| z.iter().cloned())
                .collect();
            let k = ev.pca_components.min(model.latent_dim());
            let pca = pca_fit(&pooled, k)?;
            for (name, set) in [("one_shot", &one_shot), ("optimized", &optimized)] {
                out.csv(&format!("pca/{tag}.{name}.points.csv"), &points_csv(&pca, set, k)?)?;
            }
        }
    }
    if !records.is_empty() {
        out.json("latent_optimization.json", &records)?;
    }
    Ok(())
}

fn points_csv(pca: &crate::eval::PcaProjection, sets: &[(String, Vec<Vec<f64>>)], k: usize) -> Result<String> {
    let mut csv = String::from("clip_id,t");
    for c in 0..k {
        let _ = write!(csv, ",pc{c}");
    }
    csv.push('\n');
    for (clip_id, latents) in sets {
        for (t, z) in latents.iter().enumerate() {
            let p = pca_project(pca, z)?;
            let coords: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(csv, "{clip_id},{t},{}", coords.join(","));
        }
    }
    Ok(csv)
}

fn reuse(config: &ExperimentConfig, input: &StageReader<'_>, out: &mut StageWriter<'_>) -> Result<()> {
    let task = GoToTargetTask::new(EnvSpec::new(config.env))?;
    let rc = &config.reuse;
    let mut summaries = Vec::new();
    let mut csv = String::from("model,iteration,median_return\n");
    for (tag, model) in load_models(input)? {
        log::info!("reuse: {tag}");
        let random = evaluate_reuse(&model, &random_policies(&model, &task, rc)?, &task, rc.eval_episodes, &rc.seeds)?;
        let (policies, curves, median_curve) = train_hl_seeds(&model, &task, rc)?;
        let trained = evaluate_reuse(&model, &policies, &task, rc.eval_episodes, &rc.seeds)?;
        for (it, v) in median_curve.iter().enumerate() {
            let _ = writeln!(csv, "{tag},{it},{v}");
        }
        summaries.push(ReuseSummary {
            model: tag,
            decoder_checksum: decoder_checksum(&model),
            random,
            trained,
            median_curve,
            curves,
        });
    }
    out.csv("learning_curves.csv", &csv)?;
    out.json("reuse.json", &summaries)
}
