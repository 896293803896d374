use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::npmp::{LatentProvenance, LatentSequence, NpmpModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatentOptimizationConfig {
    pub steps: usize,
    pub step_size: f64,
    /// Halvings tried per step before giving up.
    pub max_backtracks: usize,
}

impl Default for LatentOptimizationConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            step_size: 0.1,
            max_backtracks: 30,
        }
    }
}

/// `sum_t || mu(s_t, z_t) - a_t ||^2` and its gradient with respect to
/// every `z_t`. The decoder is frozen.
pub fn latent_objective(
    model: &NpmpModel,
    states: &[Vec<f64>],
    actions: &[Vec<f64>],
    latents: &[Vec<f64>],
) -> Result<(f64, Vec<Vec<f64>>)> {
    check_len("latent objective actions", latents.len(), actions.len())?;
    if states.len() < latents.len() {
        return Err(Error::Shape {
            context: "latent objective states",
            expected: latents.len(),
            got: states.len(),
        });
    }
    let l = model.latent_dim();
    let mut scratch = vec![0.0; model.decoder_params.len()];
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(latents.len());
    for ((z, s), a) in latents.iter().zip(states).zip(actions) {
        let tape = model
            .decoder
            .forward_tape(&model.decoder_params, &model.decoder_input(z, s)?)?;
        check_len("latent objective action", model.action_dim, a.len())?;
        let cot: Vec<f64> = tape
            .output()
            .iter()
            .zip(a)
            .map(|(y, t)| {
                let d = y - t;
                value += d * d;
                2.0 * d
            })
            .collect();
        let g = model.decoder.backward(&model.decoder_params, &tape, &cot, &mut scratch)?;
        grads.push(g[..l].to_vec());
    }
    if !value.is_finite() {
        return Err(Error::Numeric("latent objective".into()));
    }
    Ok((value, grads))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentOptimizationResult {
    pub latents: LatentSequence,
    /// Objective after each accepted step, starting with the initial value.
    pub losses: Vec<f64>,
}

/// Gradient descent on the latents with a halving line search. Only
/// decreasing steps are accepted, so the returned sequence is the best seen.
pub fn optimize_latents(
    model: &NpmpModel,
    states: &[Vec<f64>],
    actions: &[Vec<f64>],
    init: &LatentSequence,
    config: &LatentOptimizationConfig,
) -> Result<LatentOptimizationResult> {
    if !(config.step_size > 0.0 && config.step_size.is_finite()) {
        return Err(Error::Argument(format!("step size must be positive, got {}", config.step_size)));
    }
    let mut z = init.latents.clone();
    let (mut value, mut grad) = latent_objective(model, states, actions, &z)?;
    let mut losses = vec![value];
    let mut step = config.step_size;
    'outer: for _ in 0..config.steps {
        for _ in 0..=config.max_backtracks {
            let candidate: Vec<Vec<f64>> = z
                .iter()
                .zip(&grad)
                .map(|(zi, gi)| zi.iter().zip(gi).map(|(a, g)| a - step * g).collect())
                .collect();
            let (cv, cg) = latent_objective(model, states, actions, &candidate)?;
            if cv < value {
                z = candidate;
                value = cv;
                grad = cg;
                losses.push(value);
                continue 'outer;
            }
            step *= 0.5;
        }
        break;
    }
    let provenance = if losses.len() > 1 {
        LatentProvenance::Optimized
    } else {
        init.provenance
    };
    Ok(LatentOptimizationResult {
        latents: LatentSequence { latents: z, provenance },
        losses,
    })
}
