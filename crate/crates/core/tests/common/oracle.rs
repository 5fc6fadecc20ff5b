//! Straight-line reference implementation of the autoencoder forward pass,
//! written independently of the library's batched kernels.

#![allow(dead_code)]

use geolatent::autoencoder::model::{Dense, Norm};
use geolatent::autoencoder::AutoencoderModel;
use geolatent::store::Patch;

const EPS: f64 = 1e-5;

fn bases() -> [[f64; 3]; 6] {
    [
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
    ]
}

/// max(cos(u, b), 0)² per basis; uniform 1/6 for the zero vector.
pub fn weights(u: [f64; 3]) -> [f64; 6] {
    let n = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    if n == 0.0 {
        return [1.0 / 6.0; 6];
    }
    let mut w = [0.0; 6];
    for (k, b) in bases().iter().enumerate() {
        let c = (u[0] * b[0] + u[1] * b[1] + u[2] * b[2]) / n;
        w[k] = if c > 0.0 { c * c } else { 0.0 };
    }
    w
}

fn lin(p: &[f64], l: &Dense, x: &[f64]) -> Vec<f64> {
    (0..l.rows)
        .map(|r| {
            let mut s = p[l.b + r];
            for c in 0..l.cols {
                s += p[l.w + r * l.cols + c] * x[c];
            }
            s
        })
        .collect()
}

fn batchnorm(m: &AutoencoderModel, n: &Norm, rows: &[Vec<f64>], train: bool) -> Vec<Vec<f64>> {
    let p = m.params();
    let buf = m.buffers();
    let count = rows.len() as f64;
    (0..rows.len())
        .map(|i| {
            (0..n.width)
                .map(|k| {
                    let (mean, var) = if train {
                        let mean = rows.iter().map(|r| r[k]).sum::<f64>() / count;
                        let var = rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / count;
                        (mean, var)
                    } else {
                        (buf[n.mean + k], buf[n.var + k])
                    };
                    p[n.gamma + k] * (rows[i][k] - mean) / (var + EPS).sqrt() + p[n.beta + k]
                })
                .collect()
        })
        .collect()
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| if x > 0.0 { x } else { 0.0 }).collect()
}

pub struct OracleOut {
    pub aggregates: Vec<Vec<f64>>,
    pub latents: Vec<Vec<f64>>,
    /// Per patch, per member, `3 + d` sigmoid outputs.
    pub outputs: Vec<Vec<Vec<f64>>>,
}

pub fn forward(m: &AutoencoderModel, patches: &[&Patch], train: bool) -> OracleOut {
    let lay = m.layout();
    let p = m.params();
    // encoder, member level
    let mut z1 = Vec::new();
    for patch in patches {
        for j in 0..patch.len() {
            let w = weights(patch.offsets[j]);
            let x = patch.attribute_row(j);
            let mut g = vec![0.0; 64];
            for b in 0..6 {
                let t = lin(p, &lay.enc_dir[b], x);
                for c in 0..64 {
                    g[c] += w[b] * t[c];
                }
            }
            z1.push(lin(p, &lay.enc_fc1, &g));
        }
    }
    let h = batchnorm(m, &lay.bn1, &z1, train);
    let mut aggregates = Vec::new();
    let mut row = 0;
    for patch in patches {
        let r = patch.radius;
        let k: Vec<f64> = patch
            .offsets
            .iter()
            .map(|o| {
                let d = (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt();
                if d < r {
                    (r - d).powi(2)
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = k.iter().sum();
        let mut s = vec![0.0; 256];
        for j in 0..patch.len() {
            let a = if total > 0.0 { k[j] / total } else { 1.0 / patch.len() as f64 };
            let hj = relu(h[row + j].clone());
            for c in 0..256 {
                s[c] += a * hj[c];
            }
        }
        row += patch.len();
        aggregates.push(s);
    }
    let z2: Vec<Vec<f64>> = aggregates.iter().map(|s| lin(p, &lay.enc_fc2, s)).collect();
    let latents = batchnorm(m, &lay.bn2, &z2, train);
    // decoder
    let mut y = Vec::new();
    for (bi, patch) in patches.iter().enumerate() {
        for o in &patch.offsets {
            let w = weights([-o[0], -o[1], -o[2]]);
            let mut yj = vec![0.0; 256];
            for b in 0..6 {
                let t = lin(p, &lay.dec_dir[b], &latents[bi]);
                for c in 0..256 {
                    yj[c] += w[b] * t[c];
                }
            }
            y.push(yj);
        }
    }
    let t = batchnorm(m, &lay.bn3, &y, train);
    let mut outputs = Vec::new();
    let mut row = 0;
    for patch in patches {
        let mut rows = Vec::new();
        for j in 0..patch.len() {
            let o = lin(p, &lay.dec_out, &relu(t[row + j].clone()));
            rows.push(o.into_iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect());
        }
        row += patch.len();
        outputs.push(rows);
    }
    OracleOut {
        aggregates,
        latents,
        outputs,
    }
}
