//! Hand-crafted patch descriptors used as comparison baselines.

use nalgebra::{Matrix4, SymmetricEigen};

use super::frame::ParticleFrame;
use super::patch::{query_patch, Patch};
use crate::{Error, Result};

/// Unweighted mean of the attributes of every particle within `radius`.
pub fn neighborhood_mean(frame: &ParticleFrame, center: [f64; 3], radius: f64) -> Result<Vec<f64>> {
    let patch = query_patch(frame, center, radius)?;
    let d = patch.attr_dim;
    let mut mean = vec![0.0; d];
    for row in patch.attributes.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let n = patch.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Principal axes of a patch treated as 4-d samples (three rel-position
/// coordinates and the first attribute).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPca {
    /// Row `k` is the `k`-th axis; rows ordered by decreasing variance.
    pub axes: [[f64; 4]; 4],
    pub variances: [f64; 4],
}

impl PatchPca {
    /// The four axes concatenated, 16 values.
    pub fn descriptor(&self) -> Vec<f64> {
        self.axes.iter().flatten().copied().collect()
    }
}

/// Flips `v` so its largest-magnitude entry is positive (first one on ties).
pub(crate) fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (k, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = k;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn patch_pca(patch: &Patch) -> Result<PatchPca> {
    let n = patch.len();
    if n < 4 {
        return Err(Error::InsufficientData { needed: 4, got: n });
    }
    let samples: Vec<[f64; 4]> = (0..n)
        .map(|j| {
            let r = patch.rel_positions[j];
            [r[0], r[1], r[2], patch.attribute_row(j)[0]]
        })
        .collect();
    let mut mean = [0.0; 4];
    for s in &samples {
        for k in 0..4 {
            mean[k] += s[k] / n as f64;
        }
    }
    let mut cov = Matrix4::<f64>::zeros();
    for s in &samples {
        for a in 0..4 {
            for b in 0..4 {
                cov[(a, b)] += (s[a] - mean[a]) * (s[b] - mean[b]) / (n - 1) as f64;
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut axes = [[0.0; 4]; 4];
    let mut variances = [0.0; 4];
    for (row, &k) in order.iter().enumerate() {
        let mut v: [f64; 4] = std::array::from_fn(|a| eig.eigenvectors[(a, k)]);
        fix_sign(&mut v);
        axes[row] = v;
        variances[row] = eig.eigenvalues[k].max(0.0);
    }
    Ok(PatchPca { axes, variances })
}

/// Flat 16-value principal-axis descriptor of a patch.
pub fn patch_pca_descriptor(patch: &Patch) -> Result<Vec<f64>> {
    patch_pca(patch).map(|p| p.descriptor())
}
