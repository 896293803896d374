use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// Orthonormal principal axes, by descending variance.
    pub axes: Vec<Vec<f64>>,
    /// Fraction of total variance per axis.
    pub explained_variance: Vec<f64>,
}

pub fn pca_fit(vectors: &[Vec<f64>], k: usize) -> Result<PcaProjection> {
    let dim = vectors.first().map_or(0, Vec::len);
    if k == 0 || k > dim {
        return Err(Error::Argument(format!("cannot keep {k} components of {dim}-dimensional data")));
    }
    if vectors.len() < k + 1 {
        return Err(Error::Argument(format!("need at least {} vectors, got {}", k + 1, vectors.len())));
    }
    let n = vectors.len() as f64;
    let mut mean = vec![0.0; dim];
    for v in vectors {
        check_len("pca vector", dim, v.len())?;
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / n;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for v in vectors {
        let c: Vec<f64> = v.iter().zip(&mean).map(|(x, m)| x - m).collect();
        for i in 0..dim {
            for j in i..dim {
                cov[(i, j)] += c[i] * c[j] / n;
            }
        }
    }
    for i in 0..dim {
        for j in 0..i {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let axes = order[..k]
        .iter()
        .map(|&i| {
            let col = eig.eigenvectors.column(i);
            // Sign convention: largest-magnitude entry positive.
            let pivot = col.iter().fold(0.0f64, |acc, &x| if x.abs() > acc.abs() { x } else { acc });
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            col.iter().map(|x| sign * x).collect()
        })
        .collect();
    let explained_variance = order[..k]
        .iter()
        .map(|&i| {
            if total > 0.0 {
                eig.eigenvalues[i].max(0.0) / total
            } else {
                0.0
            }
        })
        .collect();
    Ok(PcaProjection {
        mean,
        axes,
        explained_variance,
    })
}

pub fn pca_project(projection: &PcaProjection, vector: &[f64]) -> Result<Vec<f64>> {
    check_len("pca input", projection.mean.len(), vector.len())?;
    Ok(projection
        .axes
        .iter()
        .map(|axis| {
            axis.iter()
                .zip(vector)
                .zip(&projection.mean)
                .map(|((a, x), m)| a * (x - m))
                .sum()
        })
        .collect())
}

pub fn pca_reconstruct(projection: &PcaProjection, coords: &[f64]) -> Result<Vec<f64>> {
    check_len("pca coordinates", projection.axes.len(), coords.len())?;
    let mut out = projection.mean.clone();
    for (axis, c) in projection.axes.iter().zip(coords) {
        for (o, a) in out.iter_mut().zip(axis) {
            *o += c * a;
        }
    }
    Ok(out)
}
