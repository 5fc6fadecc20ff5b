//! Seeded k-means++ with Lloyd iterations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MAX_ITER: usize = 300;
/// Lloyd iterations stop once no centroid moves further than this.
pub const SHIFT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub labels: Vec<usize>,
    /// Row-major `k × dim`.
    pub centroids: Vec<f64>,
    pub inertia: f64,
    pub iterations: usize,
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cent) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(x, cent);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(data: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let m = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids = row(rng.random_range(0..m)).to_vec();
    let mut d2: Vec<f64> = (0..m).map(|i| sq_dist(row(i), &centroids)).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut chosen = m - 1;
            for (i, &w) in d2.iter().enumerate() {
                if t < w {
                    chosen = i;
                    break;
                }
                t -= w;
            }
            chosen
        } else {
            rng.random_range(0..m)
        };
        let c = row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &c));
        }
        centroids.extend(c);
    }
    centroids
}

/// Partitions the `M` rows of `data` (row-major, `dim` columns) into `k` clusters.
pub fn kmeans(data: &[f64], dim: usize, k: usize, seed: u64) -> Result<KMeans> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::invalid("data length is not a multiple of the dimension"));
    }
    let m = data.len() / dim;
    if k == 0 || k > m {
        return Err(Error::invalid(format!("k = {k} must be in 1..={m}")));
    }
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus(data, dim, k, &mut rng);
    let mut labels = vec![0usize; m];
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let mut dists = vec![0.0; m];
        for i in 0..m {
            let (c, d) = nearest(row(i), &centroids, dim);
            labels[i] = c;
            dists[i] = d;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..m {
            counts[labels[i]] += 1;
            for (s, x) in sums[labels[i] * dim..(labels[i] + 1) * dim].iter_mut().zip(row(i)) {
                *s += x;
            }
        }
        // empty clusters take the point currently worst served
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..m)
                    .filter(|&i| counts[labels[i]] > 1)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
                if let Some(i) = far {
                    let old = labels[i];
                    counts[old] -= 1;
                    for (s, x) in sums[old * dim..(old + 1) * dim].iter_mut().zip(row(i)) {
                        *s -= x;
                    }
                    labels[i] = c;
                    counts[c] = 1;
                    sums[c * dim..(c + 1) * dim].copy_from_slice(row(i));
                    dists[i] = 0.0;
                }
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let cent = &mut centroids[c * dim..(c + 1) * dim];
            let mut moved = 0.0;
            for (x, s) in cent.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                let nx = s / counts[c] as f64;
                moved += (nx - *x) * (nx - *x);
                *x = nx;
            }
            shift = shift.max(moved.sqrt());
        }
        if shift < SHIFT_TOL {
            break;
        }
    }
    let mut inertia = 0.0;
    for i in 0..m {
        let (c, d) = nearest(row(i), &centroids, dim);
        labels[i] = c;
        inertia += d;
    }
    Ok(KMeans {
        labels,
        centroids,
        inertia,
        iterations,
    })
}
