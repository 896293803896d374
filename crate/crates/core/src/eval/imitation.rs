use serde::{Deserialize, Serialize};

use crate::envs::{relative_performance, rollout, EnvSpec, Policy, ReferenceTrajectory, RolloutNoiseConfig};
use crate::error::{check_len, Error, Result};
use crate::npmp::{LatentProvenance, LatentSequence, NpmpModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Heldout,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Heldout => "heldout",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "heldout" => Ok(Split::Heldout),
            other => Err(Error::Argument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImitationResult {
    pub clip_id: String,
    pub provenance: LatentProvenance,
    pub per_step_rewards: Vec<f64>,
    pub episode_return: f64,
    pub expert_return: f64,
    pub relative_performance: f64,
    pub split: Split,
}

/// Decoder driven by a fixed latent sequence: open-loop in latents,
/// closed-loop in state. Only the decoder is ever evaluated.
#[derive(Clone, Copy, Debug)]
pub struct LatentPolicy<'a> {
    pub model: &'a NpmpModel,
    pub latents: &'a LatentSequence,
}

impl Policy for LatentPolicy<'_> {
    fn action_dim(&self) -> usize {
        self.model.action_dim
    }

    fn act(&self, t: usize, state: &[f64]) -> Result<Vec<f64>> {
        let z = self.latents.latents.get(t).ok_or(Error::Range {
            index: t,
            len: self.latents.len(),
        })?;
        self.model.decode_mean(z, state)
    }
}

/// Rolls out `latents` on `reference` and scores it against `expert` under
/// the same noise stream.
pub fn execute_latents<E: Policy + ?Sized>(
    model: &NpmpModel,
    env: &EnvSpec,
    reference: &ReferenceTrajectory,
    latents: &LatentSequence,
    expert: &E,
    noise: &RolloutNoiseConfig,
    split: Split,
) -> Result<ImitationResult> {
    model.check_env(env.kind)?;
    check_len("latent sequence", reference.horizon(), latents.len())?;
    let policy = LatentPolicy { model, latents };
    let traj = rollout(env, &policy, noise, reference.start(), &reference.states)?;
    let expert_return = rollout(env, expert, noise, reference.start(), &reference.states)?.episode_return();
    let episode_return = traj.episode_return();
    Ok(ImitationResult {
        clip_id: reference.clip_id.clone(),
        provenance: latents.provenance,
        relative_performance: relative_performance(episode_return, expert_return)?,
        per_step_rewards: traj.per_step_rewards,
        episode_return,
        expert_return,
        split,
    })
}

/// Encodes the whole reference with posterior means, then executes the
/// decoder on those latents.
pub fn one_shot_imitate<E: Policy + ?Sized>(
    model: &NpmpModel,
    env: &EnvSpec,
    reference: &ReferenceTrajectory,
    expert: &E,
    noise: &RolloutNoiseConfig,
    split: Split,
) -> Result<(ImitationResult, LatentSequence)> {
    model.check_env(env.kind)?;
    let latents = model.encode_sequence(&reference.states)?;
    let result = execute_latents(model, env, reference, &latents, expert, noise, split)?;
    Ok((result, latents))
}

/// Temporal concatenation of latent sequences.
pub fn concat_latents(sequences: &[LatentSequence]) -> Result<LatentSequence> {
    let first = sequences
        .first()
        .ok_or_else(|| Error::Argument("nothing to concatenate".into()))?;
    if sequences.len() == 1 {
        return Ok(first.clone());
    }
    let dim = first.latents.first().map_or(0, Vec::len);
    let mut latents = Vec::with_capacity(sequences.iter().map(LatentSequence::len).sum());
    for seq in sequences {
        for z in &seq.latents {
            check_len("concatenated latent", dim, z.len())?;
            latents.push(z.clone());
        }
    }
    Ok(LatentSequence {
        latents,
        provenance: LatentProvenance::Concatenated,
    })
}
