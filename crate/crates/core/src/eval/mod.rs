//! Evaluating trained motor primitive modules: one-shot imitation, latent
//! optimization, concatenation, PCA and report export, plus noisy
//! evaluation of cloned students.

mod imitation;
mod optimize;
mod pca;
mod report;
mod transfer;

pub use imitation::{concat_latents, execute_latents, one_shot_imitate, ImitationResult, LatentPolicy, Split};
pub use optimize::{latent_objective, optimize_latents, LatentOptimizationConfig, LatentOptimizationResult};
pub use pca::{pca_fit, pca_project, pca_reconstruct, PcaProjection};
pub use report::{export_report, write_points, ReportRow, FAILURE_THRESHOLD};
pub use transfer::{mean, relative_performance_under_noise};

/// Median of a nonempty slice (mean of the two middle values when even).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
