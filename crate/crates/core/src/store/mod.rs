//! Particle frames, spatial indexing, patches and sampling.

pub mod baselines;
pub mod frame;
pub mod kdtree;
pub mod patch;
pub mod sampling;

pub use baselines::{neighborhood_mean, patch_pca, patch_pca_descriptor, PatchPca};
pub use frame::{
    frames_from_raw, list_frames, load_dataset, load_frame, write_dataset, write_pds, FrameFormat,
    ParticleFrame, Range, RawBounds, RawFrame,
};
pub use kdtree::KdTree;
pub use patch::{particle_patch, query_patch, Patch};
pub use sampling::{value_based_sample, SampleSet};

use crate::Result;

/// Median distance from each particle to its nearest neighbor.
pub fn median_nn_distance(frame: &ParticleFrame) -> f64 {
    nn_distances(frame, None).map(|mut d| median(&mut d)).unwrap_or(0.0)
}

/// Nearest-neighbor distances for `subset` (or all particles); `None` for
/// single-particle frames.
pub fn nn_distances(frame: &ParticleFrame, subset: Option<&[usize]>) -> Option<Vec<f64>> {
    if frame.len() < 2 {
        return None;
    }
    let idx: Vec<usize> = match subset {
        Some(s) => s.to_vec(),
        None => (0..frame.len()).collect(),
    };
    Some(
        idx.iter()
            .map(|&i| frame.index().nearest(frame.position(i), Some(i)).unwrap().1)
            .collect(),
    )
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Loads all frames of a dataset directory and draws one value-based sample per frame.
pub fn sample_frames(frames: &[ParticleFrame], fraction: f64, seed: u64) -> Result<Vec<SampleSet>> {
    frames
        .iter()
        .enumerate()
        .map(|(k, f)| value_based_sample(f, fraction, seed.wrapping_add(k as u64)))
        .collect()
}
