use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::store::baselines::fix_sign;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim × dim`, rows ordered by decreasing variance.
    pub basis: Vec<f64>,
    pub mean: Vec<f64>,
    pub variances: Vec<f64>,
    /// Total variance of the data (sum of all eigenvalues).
    pub total_variance: f64,
}

impl Pca {
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.basis
            .chunks_exact(self.dim)
            .map(|axis| axis.iter().zip(x).zip(&self.mean).map(|((a, v), m)| a * (v - m)).sum())
            .collect()
    }

    pub fn project_all(&self, data: &[f64]) -> Vec<f64> {
        data.chunks_exact(self.dim).flat_map(|x| self.project(x)).collect()
    }

    /// Maps a projected point back to the input space.
    pub fn reconstruct(&self, y: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (axis, &c) in self.basis.chunks_exact(self.dim).zip(y) {
            for (xi, a) in x.iter_mut().zip(axis) {
                *xi += c * a;
            }
        }
        x
    }
}

/// Principal components of the `M` rows of `data` from the eigendecomposition
/// of the sample covariance. Each axis is signed so its largest-magnitude entry
/// is positive.
pub fn pca(data: &[f64], dim: usize, out_dim: usize) -> Result<Pca> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::invalid("data length is not a multiple of the dimension"));
    }
    let m = data.len() / dim;
    if m < 2 {
        return Err(Error::InsufficientData { needed: 2, got: m });
    }
    if out_dim == 0 || out_dim > dim.min(m) {
        return Err(Error::invalid(format!("output dimension {out_dim} must be in 1..={}", dim.min(m))));
    }
    let mut mean = vec![0.0; dim];
    for row in data.chunks_exact(dim) {
        for (a, x) in mean.iter_mut().zip(row) {
            *a += x;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for row in data.chunks_exact(dim) {
        for a in 0..dim {
            let da = row[a] - mean[a];
            for b in a..dim {
                cov[(a, b)] += da * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..dim {
        for b in a..dim {
            let v = cov[(a, b)] / (m - 1) as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut basis = Vec::with_capacity(out_dim * dim);
    let mut variances = Vec::with_capacity(out_dim);
    for &k in &order[..out_dim] {
        let mut axis: Vec<f64> = (0..dim).map(|a| eig.eigenvectors[(a, k)]).collect();
        fix_sign(&mut axis);
        basis.extend(axis);
        variances.push(eig.eigenvalues[k].max(0.0));
    }
    Ok(Pca {
        dim,
        out_dim,
        basis,
        mean,
        variances,
        total_variance: eig.eigenvalues.iter().map(|v| v.max(0.0)).sum(),
    })
}
