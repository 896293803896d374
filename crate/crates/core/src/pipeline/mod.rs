//! Staged, cached experiment runs driven by an [`ExperimentConfig`].
//!
//! Every stage writes into `<output_dir>/<stage>/` and records a
//! `stage.json` holding the stage hash and its file list. The hash covers
//! the stage's config subtree and the hashes of every earlier stage, and is
//! embedded in each output: JSON files carry a `config_hash` field, CSV
//! files start with a `# config_hash: <hex>` line. A stage whose record
//! matches is skipped; one whose record disagrees is stale and halts the
//! run unless forced.
//!
//! Config files are TOML. Every section is optional and falls back to its
//! defaults; unknown keys are rejected. See `Preset::config` for complete
//! examples, or print one with `npmp run --preset fig2 --print-config`.

mod config;
mod stages;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use config::{
    validate_config, ClipsConfig, CloningConfig, EvalConfig, ExperimentConfig, NpmpGridConfig, Preset, OUTPUT_ROOT_ENV,
};
pub use stages::{ClipEntry, ClipSet, ConditionSummary, LatentOptimizationRecord, ReuseSummary, StudentEntry, TraceSet};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json, write_text};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "gen-clips")]
    GenerateClips,
    #[serde(rename = "build-experts")]
    BuildExperts,
    #[serde(rename = "collect")]
    Collect,
    #[serde(rename = "trace")]
    Trace,
    #[serde(rename = "clone")]
    Clone,
    #[serde(rename = "train-npmp")]
    TrainNpmp,
    #[serde(rename = "evaluate")]
    Evaluate,
    #[serde(rename = "reuse")]
    Reuse,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::GenerateClips,
        Stage::BuildExperts,
        Stage::Collect,
        Stage::Trace,
        Stage::Clone,
        Stage::TrainNpmp,
        Stage::Evaluate,
        Stage::Reuse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenerateClips => "gen-clips",
            Stage::BuildExperts => "build-experts",
            Stage::Collect => "collect",
            Stage::Trace => "trace",
            Stage::Clone => "clone",
            Stage::TrainNpmp => "train-npmp",
            Stage::Evaluate => "evaluate",
            Stage::Reuse => "reuse",
        }
    }

    pub(crate) fn order(self) -> usize {
        Stage::ALL.iter().position(|s| *s == self).unwrap_or(usize::MAX)
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown stage {s:?}")))
    }
}

/// A JSON artifact tagged with the hash of the stage that wrote it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_hash: String,
    pub data: T,
}

#[derive(Serialize)]
struct StampedRef<'a, T> {
    config_hash: &'a str,
    data: &'a T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub hash: String,
    /// Paths relative to the run directory.
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: Stage,
    pub hash: String,
    pub skipped: bool,
    pub files: Vec<String>,
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub config_hash: String,
    pub artifact_versions: BTreeMap<String, u32>,
    pub stages: Vec<StageManifest>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
const STAGE_RECORD: &str = "stage.json";

fn artifact_versions() -> BTreeMap<String, u32> {
    BTreeMap::from([
        (crate::npmp::CHECKPOINT_FORMAT.to_string(), 1),
        (crate::cloning::TRACE_FORMAT.to_string(), crate::cloning::TRACE_VERSION),
        (crate::nn::MODEL_FILE_FORMAT.to_string(), crate::nn::MODEL_FILE_VERSION),
        ("run-manifest".to_string(), 1),
    ])
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Run every stage on a single thread.
    pub deterministic: bool,
    /// Overwrite stale stage outputs instead of failing.
    pub force: bool,
}

/// Writes artifacts for one stage and remembers what was written.
pub(crate) struct StageWriter<'a> {
    root: &'a Path,
    stage: Stage,
    hash: String,
    files: Vec<String>,
}

impl StageWriter<'_> {
    fn rel(&self, name: &str) -> String {
        format!("{}/{name}", self.stage.name())
    }

    pub(crate) fn json<T: Serialize>(&mut self, name: &str, data: &T) -> Result<()> {
        let rel = self.rel(name);
        write_json(
            &self.root.join(&rel),
            &StampedRef {
                config_hash: &self.hash,
                data,
            },
        )?;
        self.files.push(rel);
        Ok(())
    }

    /// JSON written as-is; the value must carry its own `config_hash` field.
    pub(crate) fn raw_json<T: Serialize>(&mut self, name: &str, data: &T) -> Result<()> {
        let rel = self.rel(name);
        write_json(&self.root.join(&rel), data)?;
        self.files.push(rel);
        Ok(())
    }

    pub(crate) fn csv(&mut self, name: &str, body: &str) -> Result<()> {
        let rel = self.rel(name);
        write_text(&self.root.join(&rel), &format!("# config_hash: {}\n{body}", self.hash))?;
        self.files.push(rel);
        Ok(())
    }

    pub(crate) fn hash(&self) -> &str {
        &self.hash
    }
}

/// Read access to earlier stages' outputs, checked against their hashes.
pub(crate) struct StageReader<'a> {
    root: &'a Path,
    hashes: &'a BTreeMap<Stage, String>,
}

impl StageReader<'_> {
    pub(crate) fn has(&self, stage: Stage) -> bool {
        self.hashes.contains_key(&stage)
    }

    pub(crate) fn json<T: DeserializeOwned>(&self, stage: Stage, name: &str) -> Result<T> {
        let expected = self.hashes.get(&stage).ok_or_else(|| Error::Stage {
            stage: stage.name().into(),
            cause: "stage is not part of this run".into(),
        })?;
        let path = self.root.join(stage.name()).join(name);
        if !path.exists() {
            return Err(Error::Stage {
                stage: stage.name().into(),
                cause: format!("missing output {}", path.display()),
            });
        }
        let stamped: Stamped<T> = read_json(&path)?;
        if &stamped.config_hash != expected {
            return Err(Error::StaleOutput {
                stage: stage.name().into(),
                path: path.display().to_string(),
            });
        }
        Ok(stamped.data)
    }

    pub(crate) fn path(&self, stage: Stage, name: &str) -> PathBuf {
        self.root.join(stage.name()).join(name)
    }

    pub(crate) fn expected_hash(&self, stage: Stage) -> Option<&str> {
        self.hashes.get(&stage).map(String::as_str)
    }
}

/// Per-stage hashes: each covers the stage name, its config subtree and the
/// hashes of all stages before it.
pub fn stage_hashes(config: &ExperimentConfig) -> BTreeMap<Stage, String> {
    let mut out = BTreeMap::new();
    let mut chain = String::new();
    for &stage in &config.stages {
        let subtree = stages::config_subtree(config, stage);
        let h = config::content_hash(&(stage.name(), &subtree, &chain));
        chain = h.clone();
        out.insert(stage, h);
    }
    out
}

/// Embedded hash of an output file, if it carries one.
fn embedded_hash(path: &Path) -> Result<Option<String>> {
    let text = fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        let v: serde_json::Value = serde_json::from_str(&text)?;
        return Ok(v.get("config_hash").and_then(|h| h.as_str()).map(str::to_string));
    }
    Ok(text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# config_hash: "))
        .map(|h| h.trim().to_string()))
}

fn cached(root: &Path, stage: Stage, hash: &str, force: bool) -> Result<Option<Vec<String>>> {
    let record_path = root.join(stage.name()).join(STAGE_RECORD);
    if !record_path.exists() {
        return Ok(None);
    }
    let record: StageRecord = read_json(&record_path)?;
    if record.hash != hash {
        if force {
            return Ok(None);
        }
        return Err(Error::StaleOutput {
            stage: stage.name().into(),
            path: record_path.display().to_string(),
        });
    }
    for f in &record.files {
        let p = root.join(f);
        if !p.exists() || embedded_hash(&p)?.as_deref() != Some(hash) {
            return Ok(None);
        }
    }
    Ok(Some(record.files))
}

/// Runs `stages` (all configured stages when `None`) into the configured
/// output directory and writes `manifest.json` there.
pub fn run_pipeline(config: &ExperimentConfig, stages: Option<&[Stage]>, options: RunOptions) -> Result<RunManifest> {
    config.validate()?;
    let selected: Vec<Stage> = match stages {
        Some(list) => {
            for s in list {
                if !config.stages.contains(s) {
                    return Err(Error::Argument(format!("stage {} is not configured", s.name())));
                }
            }
            config.stages.iter().copied().filter(|s| list.contains(s)).collect()
        }
        None => config.stages.clone(),
    };
    let root = config.resolved_output_dir();
    fs::create_dir_all(&root)?;
    let run = || run_stages(config, &selected, &root, options);
    let manifest = if options.deterministic {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::Argument(e.to_string()))?
            .install(run)?
    } else {
        run()?
    };
    for s in &manifest.stages {
        for f in &s.files {
            if !root.join(f).exists() {
                return Err(Error::Stage {
                    stage: s.stage.name().into(),
                    cause: format!("manifest references missing file {f}"),
                });
            }
        }
    }
    write_json(&root.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn run_stages(config: &ExperimentConfig, selected: &[Stage], root: &Path, options: RunOptions) -> Result<RunManifest> {
    let hashes = stage_hashes(config);
    let mut manifest = RunManifest {
        name: config.name.clone(),
        config_hash: config.hash(),
        artifact_versions: artifact_versions(),
        stages: Vec::new(),
    };
    for &stage in selected {
        let hash = hashes[&stage].clone();
        let t0 = Instant::now();
        if let Some(files) = cached(root, stage, &hash, options.force)? {
            log::info!("{}: up to date", stage.name());
            manifest.stages.push(StageManifest {
                stage,
                hash,
                skipped: true,
                files,
                wall_clock_secs: t0.elapsed().as_secs_f64(),
            });
            continue;
        }
        log::info!("{}: running", stage.name());
        let dir = root.join(stage.name());
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        let mut writer = StageWriter {
            root,
            stage,
            hash: hash.clone(),
            files: Vec::new(),
        };
        let reader = StageReader { root, hashes: &hashes };
        stages::run_stage(config, stage, &reader, &mut writer).map_err(|e| match e {
            e @ (Error::Stage { .. } | Error::StaleOutput { .. }) => e,
            other => Error::Stage {
                stage: stage.name().into(),
                cause: other.to_string(),
            },
        })?;
        let record = StageRecord {
            stage,
            hash: hash.clone(),
            files: writer.files.clone(),
        };
        write_json(&dir.join(STAGE_RECORD), &record)?;
        manifest.stages.push(StageManifest {
            stage,
            hash,
            skipped: false,
            files: writer.files,
            wall_clock_secs: t0.elapsed().as_secs_f64(),
        });
    }
    Ok(manifest)
}
