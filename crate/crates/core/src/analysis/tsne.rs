//! Exact t-SNE for the feature-space view.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autoencoder::LatentField;
use crate::store::SampleSet;
use crate::{Error, Result};

pub const EXAGGERATION: f64 = 12.0;
pub const EXAGGERATION_ITERS: usize = 250;
pub const LEARNING_RATE: f64 = 200.0;
const PERPLEXITY_TOL: f64 = 1e-5;
const BISECTION_STEPS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection2D {
    pub frame_id: u64,
    pub indices: Vec<usize>,
    pub coords: Vec<[f64; 2]>,
    #[serde(flatten)]
    pub params: TsneParams,
}

/// Conditional affinities of row `i` for precision `beta`; returns the entropy (nats).
fn row_affinities(d2: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    // shift by the smallest off-diagonal distance so the exponentials never all underflow
    let min = d2.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &d)| d).fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, (o, &d)) in out.iter_mut().zip(d2).enumerate() {
        *o = if j == i { 0.0 } else { (-(d - min) * beta).exp() };
        sum += *o;
    }
    let mut weighted = 0.0;
    for (o, &d) in out.iter_mut().zip(d2) {
        *o /= sum;
        weighted += *o * (d - min);
    }
    sum.ln() + beta * weighted
}

/// Symmetrized joint affinities, row-major `m × m`.
pub fn joint_affinities(data: &[f64], dim: usize, perplexity: f64) -> Vec<f64> {
    let m = data.len() / dim;
    let target = perplexity.ln();
    let mut p = vec![0.0; m * m];
    let mut d2 = vec![0.0; m];
    for i in 0..m {
        let xi = &data[i * dim..(i + 1) * dim];
        for (j, d) in d2.iter_mut().enumerate() {
            *d = super::kmeans::sq_dist(xi, &data[j * dim..(j + 1) * dim]);
        }
        let row = &mut p[i * m..(i + 1) * m];
        let (mut lo, mut hi, mut beta) = (0.0f64, f64::INFINITY, 1.0f64);
        for _ in 0..BISECTION_STEPS {
            let h = row_affinities(&d2, i, beta, row);
            if (h - target).abs() < PERPLEXITY_TOL {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        row_affinities(&d2, i, beta, row);
    }
    let denom = 2.0 * m as f64;
    for i in 0..m {
        for j in i + 1..m {
            let v = ((p[i * m + j] + p[j * m + i]) / denom).max(1e-12);
            p[i * m + j] = v;
            p[j * m + i] = v;
        }
        p[i * m + i] = 0.0;
    }
    p
}

/// Embeds the rows of `data` in 2D.
pub fn tsne(data: &[f64], dim: usize, params: &TsneParams) -> Result<Vec<[f64; 2]>> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::invalid("data length is not a multiple of the dimension"));
    }
    if !(params.perplexity > 0.0) || params.iterations == 0 {
        return Err(Error::invalid("perplexity and iterations must be positive"));
    }
    let m = data.len() / dim;
    let needed = (3.0 * params.perplexity).ceil() as usize;
    if m < needed.max(2) {
        return Err(Error::InsufficientData {
            needed: needed.max(2),
            got: m,
        });
    }
    let p = joint_affinities(data, dim, params.perplexity);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let init = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<f64> = (0..2 * m).map(|_| init.sample(&mut rng)).collect();
    let mut update = vec![0.0; 2 * m];
    let mut gains = vec![1.0f64; 2 * m];
    let mut grad = vec![0.0; 2 * m];
    let mut num = vec![0.0; m * m];
    for iter in 0..params.iterations {
        let exaggeration = if iter < EXAGGERATION_ITERS { EXAGGERATION } else { 1.0 };
        let momentum = if iter < EXAGGERATION_ITERS { 0.5 } else { 0.8 };
        let mut z = 0.0;
        for i in 0..m {
            for j in i + 1..m {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                let q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * m + j] = q;
                num[j * m + i] = q;
                z += 2.0 * q;
            }
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..m {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..m {
                if i == j {
                    continue;
                }
                let q = num[i * m + j];
                let f = (exaggeration * p[i * m + j] - q / z) * q;
                gx += f * (y[2 * i] - y[2 * j]);
                gy += f * (y[2 * i + 1] - y[2 * j + 1]);
            }
            grad[2 * i] = 4.0 * gx;
            grad[2 * i + 1] = 4.0 * gy;
        }
        for k in 0..2 * m {
            gains[k] = if (grad[k] > 0.0) != (update[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(0.01)
            };
            update[k] = momentum * update[k] - LEARNING_RATE * gains[k] * grad[k];
            y[k] += update[k];
        }
        center(&mut y);
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            x: params.iterations as f64,
            value: f64::NAN,
        });
    }
    Ok(y.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
}

fn center(y: &mut [f64]) {
    let m = (y.len() / 2) as f64;
    let mx = y.iter().step_by(2).sum::<f64>() / m;
    let my = y.iter().skip(1).step_by(2).sum::<f64>() / m;
    for c in y.chunks_exact_mut(2) {
        c[0] -= mx;
        c[1] -= my;
    }
}

/// t-SNE over the latents of the sampled particles.
pub fn project_tsne(latents: &LatentField, sample: &SampleSet, params: &TsneParams) -> Result<Projection2D> {
    if let Some(&bad) = sample.indices.iter().find(|&&i| i >= latents.len()) {
        return Err(Error::invalid(format!("sample index {bad} out of range for {} particles", latents.len())));
    }
    let data: Vec<f64> = sample.indices.iter().flat_map(|&i| latents.row(i).iter().copied()).collect();
    let coords = tsne(&data, latents.latent_dim, params)?;
    Ok(Projection2D {
        frame_id: latents.frame_id,
        indices: sample.indices.clone(),
        coords,
        params: *params,
    })
}
