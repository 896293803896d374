//! Trajectory dataset files.
//!
//! A dataset is a directory holding:
//!
//! * `manifest.json` with `format = "npmp-trajectories"`, `version`, the
//!   [`EnvSpec`], and one [`ClipEntry`] per clip (id, generator parameters,
//!   noise std, rollout seeds);
//! * `records.jsonl`, one [`StepRecord`] per line with fields `clip_id`,
//!   `rollout`, `t`, `state`, `executed_action`, `logged_mean_action`,
//!   `reward`. `state` is the state *before* step `t`.
//!
//! Floats are written in shortest round-trip decimal form.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dynamics::EnvSpec;
use super::reference::GeneratorParams;
use super::rollout::Trajectory;
use crate::error::{Error, Result};
use crate::io::{read_json, read_jsonl, write_json, write_jsonl};

pub const DATASET_FORMAT: &str = "npmp-trajectories";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub clip_id: String,
    pub rollout: usize,
    pub t: usize,
    pub state: Vec<f64>,
    pub executed_action: Vec<f64>,
    pub logged_mean_action: Vec<f64>,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub clip_id: String,
    pub params: GeneratorParams,
    pub action_noise_std: f64,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub env: EnvSpec,
    pub clips: Vec<ClipEntry>,
}

/// Rollouts of one clip, in seed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipRollouts {
    pub entry: ClipEntry,
    pub trajectories: Vec<Trajectory>,
}

pub fn save_dataset(dir: &Path, env: &EnvSpec, clips: &[ClipRollouts]) -> Result<()> {
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        env: env.clone(),
        clips: clips.iter().map(|c| c.entry.clone()).collect(),
    };
    let mut records = Vec::new();
    for clip in clips {
        for (r, traj) in clip.trajectories.iter().enumerate() {
            for t in 0..traj.horizon() {
                records.push(StepRecord {
                    clip_id: clip.entry.clip_id.clone(),
                    rollout: r,
                    t,
                    state: traj.states[t].clone(),
                    executed_action: traj.executed_actions[t].clone(),
                    logged_mean_action: traj.logged_mean_actions[t].clone(),
                    reward: traj.per_step_rewards[t],
                });
            }
        }
    }
    write_json(&dir.join("manifest.json"), &manifest)?;
    write_jsonl(&dir.join("records.jsonl"), &records)
}

/// Loads a dataset. The final state of each rollout is recovered by
/// replaying its last executed action through the stored env.
pub fn load_dataset(dir: &Path) -> Result<(EnvSpec, Vec<ClipRollouts>)> {
    let manifest_path = dir.join("manifest.json");
    let manifest: DatasetManifest = read_json(&manifest_path)?;
    if manifest.format != DATASET_FORMAT || manifest.version != DATASET_VERSION {
        return Err(Error::Format {
            path: manifest_path.display().to_string(),
            message: format!("unsupported dataset {} v{}", manifest.format, manifest.version),
        });
    }
    let records: Vec<StepRecord> = read_jsonl(&dir.join("records.jsonl"))?;
    let mut grouped: BTreeMap<(String, usize), Vec<StepRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry((r.clip_id.clone(), r.rollout)).or_default().push(r);
    }
    let env = manifest.env;
    let mut clips = Vec::new();
    for entry in manifest.clips {
        let mut trajectories = Vec::new();
        for r in 0..entry.seeds.len() {
            let mut steps = grouped.remove(&(entry.clip_id.clone(), r)).unwrap_or_default();
            steps.sort_by_key(|s| s.t);
            let Some(last) = steps.last() else {
                return Err(Error::Format {
                    path: dir.display().to_string(),
                    message: format!("clip {} rollout {r} has no records", entry.clip_id),
                });
            };
            let final_state = env.step(&last.state, &last.executed_action)?;
            let mut states: Vec<Vec<f64>> = steps.iter().map(|s| s.state.clone()).collect();
            states.push(final_state);
            trajectories.push(Trajectory {
                states,
                executed_actions: steps.iter().map(|s| s.executed_action.clone()).collect(),
                logged_mean_actions: steps.iter().map(|s| s.logged_mean_action.clone()).collect(),
                per_step_rewards: steps.iter().map(|s| s.reward).collect(),
            });
        }
        clips.push(ClipRollouts { entry, trajectories });
    }
    Ok((env, clips))
}
