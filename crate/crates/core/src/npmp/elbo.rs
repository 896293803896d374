//! The sequence ELBO and its exact gradient.
//!
//! For one subsequence with `z_0 = 0` and reparameterized samples
//! `z_t = m_t + s_t * eps_t`, the per-step objective is
//!
//! ```text
//! log pi(a_t | z_t, s_t) - beta * KL_t
//! ```
//!
//! where `KL_t` is either the closed-form `KL(q_t || p(. | z_{t-1}))` or the
//! single-sample log-ratio `log q_t(z_t) - log p(z_t | z_{t-1})`. Reported
//! values are averages over all steps in the batch. Gradients are computed
//! by an explicit reverse sweep over time.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::{NpmpModel, DECODER_STD};
use crate::cloning::{feedback_target, NominalTrace};
use crate::error::{check_len, Error, Result};
use crate::nn::{fixed_std_log_prob, kl_term, kl_term_grad, Tape, LOG_STD_MAX, LOG_STD_MIN};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlEstimator {
    #[default]
    ClosedForm,
    Sampled,
}

/// Whether gradients flow from step `t` back into `z_{t-1}`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientFlow {
    #[default]
    Full,
    Truncated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboOptions {
    pub beta: f64,
    pub kl: KlEstimator,
    pub flow: GradientFlow,
}

impl ElboOptions {
    pub fn new(beta: f64) -> Self {
        Self {
            beta,
            kl: KlEstimator::ClosedForm,
            flow: GradientFlow::Full,
        }
    }
}

/// One training subsequence. `targets[t]` is the action at `states[t]`;
/// `states` may extend past the last target to feed the look-ahead window.
#[derive(Clone, Debug, PartialEq)]
pub struct ElboSequence {
    pub states: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl ElboSequence {
    /// Window `start .. start + len` of a full sequence, keeping up to
    /// `lookahead` extra states.
    pub fn window(
        states: &[Vec<f64>],
        targets: &[Vec<f64>],
        start: usize,
        len: usize,
        lookahead: usize,
    ) -> Result<Self> {
        if len == 0 || start + len > targets.len() || states.len() < targets.len() {
            return Err(Error::Range {
                index: start + len,
                len: targets.len(),
            });
        }
        let last = (start + len - 1 + lookahead).min(states.len() - 1);
        Ok(Self {
            states: states[start..=last].to_vec(),
            targets: targets[start..start + len].to_vec(),
        })
    }

    /// Perturbed window of a nominal trace: states `s*_t + delta_t` and
    /// feedback targets `a*_t + J*_t delta_t`. `deltas` holds one draw per
    /// state in the window, so look-ahead entries reuse the same draws as the
    /// decoder inputs at later steps.
    pub fn perturbed(
        trace: &NominalTrace,
        start: usize,
        len: usize,
        lookahead: usize,
        deltas: &[Vec<f64>],
    ) -> Result<Self> {
        let base = Self::window(&trace.states, &trace.actions, start, len, lookahead)?;
        check_len("lfpc deltas", base.states.len(), deltas.len())?;
        let states: Vec<Vec<f64>> = base
            .states
            .iter()
            .zip(deltas)
            .map(|(s, d)| {
                check_len("lfpc delta", s.len(), d.len())?;
                Ok(s.iter().zip(d).map(|(a, b)| a + b).collect())
            })
            .collect::<Result<_>>()?;
        let targets = (0..len)
            .map(|i| feedback_target(trace, start + i, &states[i]))
            .collect::<Result<_>>()?;
        Ok(Self { states, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElboOutput {
    /// `reconstruction - beta * kl`, averaged per step.
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
    /// Gradient of `total` with respect to the encoder parameters.
    pub encoder_grad: Vec<f64>,
    /// Gradient of `total` with respect to the decoder parameters.
    pub decoder_grad: Vec<f64>,
}

/// Standard normal noise shaped for `batch`.
pub fn sample_elbo_noise<R: Rng + ?Sized>(batch: &[ElboSequence], latent_dim: usize, rng: &mut R) -> Vec<Vec<Vec<f64>>> {
    batch
        .iter()
        .map(|seq| {
            (0..seq.len())
                .map(|_| (0..latent_dim).map(|_| StandardNormal.sample(rng)).collect())
                .collect()
        })
        .collect()
}

struct StepCache {
    enc_tape: Tape,
    dec_tape: Tape,
    z_prev: Vec<f64>,
    z: Vec<f64>,
    mean_q: Vec<f64>,
    std_q: Vec<f64>,
    clamped: Vec<bool>,
    eps: Vec<f64>,
}

pub fn elbo(model: &NpmpModel, batch: &[ElboSequence], noise: &[Vec<Vec<f64>>], options: ElboOptions) -> Result<ElboOutput> {
    check_len("elbo noise", batch.len(), noise.len())?;
    let steps: usize = batch.iter().map(ElboSequence::len).sum();
    if steps == 0 {
        return Err(Error::Argument("empty elbo batch".into()));
    }
    let mut out = ElboOutput {
        total: 0.0,
        reconstruction: 0.0,
        kl: 0.0,
        encoder_grad: vec![0.0; model.encoder_params.len()],
        decoder_grad: vec![0.0; model.decoder_params.len()],
    };
    let scale = 1.0 / steps as f64;
    for (seq, eps) in batch.iter().zip(noise) {
        let (rec, kl) = sequence_elbo(model, seq, eps, options, scale, &mut out)?;
        out.reconstruction += rec;
        out.kl += kl;
    }
    out.reconstruction *= scale;
    out.kl *= scale;
    if !out.reconstruction.is_finite() {
        return Err(Error::Numeric("elbo reconstruction term".into()));
    }
    if !out.kl.is_finite() {
        return Err(Error::Numeric("elbo kl term".into()));
    }
    out.total = out.reconstruction - options.beta * out.kl;
    Ok(out)
}

/// ELBO on perturbed nominal-trace windows. With all-zero deltas this is
/// exactly [`elbo`] on the unperturbed windows.
pub fn lfpc_elbo(
    model: &NpmpModel,
    windows: &[(&NominalTrace, usize, usize)],
    deltas: &[Vec<Vec<f64>>],
    noise: &[Vec<Vec<f64>>],
    options: ElboOptions,
) -> Result<ElboOutput> {
    check_len("lfpc deltas", windows.len(), deltas.len())?;
    let batch = windows
        .iter()
        .zip(deltas)
        .map(|((trace, start, len), d)| ElboSequence::perturbed(trace, *start, *len, model.lookahead, d))
        .collect::<Result<Vec<_>>>()?;
    elbo(model, &batch, noise, options)
}

/// Forward and reverse pass over one subsequence. Accumulates
/// `scale`-weighted gradients into `out` and returns the unscaled sums of
/// the reconstruction and KL terms.
fn sequence_elbo(
    model: &NpmpModel,
    seq: &ElboSequence,
    eps: &[Vec<f64>],
    options: ElboOptions,
    scale: f64,
    out: &mut ElboOutput,
) -> Result<(f64, f64)> {
    let l = model.latent_dim();
    let len = seq.len();
    check_len("elbo noise steps", len, eps.len())?;
    if seq.states.len() < len {
        return Err(Error::Shape {
            context: "elbo states",
            expected: len,
            got: seq.states.len(),
        });
    }
    let alpha = model.prior.alpha;
    let sigma_p = model.prior.sigma();
    let beta = options.beta;

    let mut caches = Vec::with_capacity(len);
    let mut rec_sum = 0.0;
    let mut kl_sum = 0.0;
    let mut z_prev = vec![0.0; l];
    for t in 0..len {
        check_len("elbo noise", l, eps[t].len())?;
        let enc_in = model.encoder_input(&z_prev, &seq.states, t)?;
        let enc_tape = model.encoder.forward_tape(&model.encoder_params, &enc_in)?;
        let raw = enc_tape.output();
        let mean_q = raw[..l].to_vec();
        let clamped: Vec<bool> = raw[l..].iter().map(|r| !(LOG_STD_MIN..=LOG_STD_MAX).contains(r)).collect();
        let std_q: Vec<f64> = raw[l..].iter().map(|r| r.clamp(LOG_STD_MIN, LOG_STD_MAX).exp()).collect();
        let z: Vec<f64> = (0..l).map(|i| mean_q[i] + std_q[i] * eps[t][i]).collect();

        let dec_in = model.decoder_input(&z, &seq.states[t])?;
        let dec_tape = model.decoder.forward_tape(&model.decoder_params, &dec_in)?;
        check_len("elbo target", model.action_dim, seq.targets[t].len())?;
        let (lp, _) = fixed_std_log_prob(dec_tape.output(), DECODER_STD, &seq.targets[t]);
        rec_sum += lp;
        kl_sum += match options.kl {
            KlEstimator::ClosedForm => (0..l)
                .map(|i| kl_term(mean_q[i], std_q[i], alpha * z_prev[i], sigma_p))
                .sum::<f64>(),
            KlEstimator::Sampled => (0..l)
                .map(|i| {
                    let e = eps[t][i];
                    let d = (z[i] - alpha * z_prev[i]) / sigma_p;
                    (-0.5 * e * e - std_q[i].ln()) - (-0.5 * d * d - sigma_p.ln())
                })
                .sum::<f64>(),
        };
        caches.push(StepCache {
            enc_tape,
            dec_tape,
            z_prev: std::mem::replace(&mut z_prev, z.clone()),
            z,
            mean_q,
            std_q,
            clamped,
            eps: eps[t].clone(),
        });
    }

    // Reverse sweep. `gz` holds d total / d z_t contributed by later steps.
    let full = options.flow == GradientFlow::Full;
    let mut gz = vec![0.0; l];
    for (t, c) in caches.iter().enumerate().rev() {
        let (_, dlp) = fixed_std_log_prob(c.dec_tape.output(), DECODER_STD, &seq.targets[t]);
        let cot: Vec<f64> = dlp.iter().map(|g| g * scale).collect();
        let dec_in_grad = model
            .decoder
            .backward(&model.decoder_params, &c.dec_tape, &cot, &mut out.decoder_grad)?;
        for i in 0..l {
            gz[i] += dec_in_grad[i];
        }

        let mut g_mean = vec![0.0; l];
        let mut g_log_std = vec![0.0; l];
        let mut g_prev = vec![0.0; l];
        let w = -beta * scale;
        for i in 0..l {
            let mp = alpha * c.z_prev[i];
            match options.kl {
                KlEstimator::ClosedForm => {
                    let (dm, ds, dp) = kl_term_grad(c.mean_q[i], c.std_q[i], mp, sigma_p);
                    g_mean[i] += w * dm;
                    g_log_std[i] += w * ds;
                    g_prev[i] += w * dp * alpha;
                }
                KlEstimator::Sampled => {
                    let r = (c.z[i] - mp) / (sigma_p * sigma_p);
                    g_log_std[i] += -w;
                    gz[i] += w * r;
                    g_prev[i] += -w * r * alpha;
                }
            }
            g_mean[i] += gz[i];
            g_log_std[i] += gz[i] * c.std_q[i] * c.eps[i];
            if c.clamped[i] {
                g_log_std[i] = 0.0;
            }
        }
        let mut enc_cot = g_mean;
        enc_cot.extend_from_slice(&g_log_std);
        let enc_in_grad = model
            .encoder
            .backward(&model.encoder_params, &c.enc_tape, &enc_cot, &mut out.encoder_grad)?;
        for i in 0..l {
            gz[i] = if full { enc_in_grad[i] + g_prev[i] } else { 0.0 };
        }
    }
    Ok((rec_sum, kl_sum))
}
