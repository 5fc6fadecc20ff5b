//! Batched forward and backward passes.
//!
//! A batch is a list of patches. Members of all patches are stacked into one
//! `M × width` matrix for the per-member layers, so the member-level batch
//! norms (encoder hidden layer, decoder directional stage) see every member of
//! the batch, and the latent batch norm sees one row per patch.

use serde::{Deserialize, Serialize};

use super::basis::{member_weights, reversed_weights, NUM_BASES};
use super::model::{AutoencoderModel, Dense, Norm, DIR_WIDTH, HIDDEN};
use crate::store::Patch;

pub const BN_EPS: f64 = 1e-5;
/// Weight kept by the running statistics at each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, cached for backward.
    Train,
    /// Running statistics.
    Infer,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    AttributesOnly,
    AttributesAndPositions,
}

// --- small dense kernels -----------------------------------------------------

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += W x`.
fn gemv_acc(params: &[f64], l: &Dense, x: &[f64], out: &mut [f64]) {
    let w = &params[l.w..l.w + l.rows * l.cols];
    for (o, row) in out.iter_mut().zip(w.chunks_exact(l.cols)) {
        *o += dot(row, x);
    }
}

/// `W x + b`.
fn affine(params: &[f64], l: &Dense, x: &[f64]) -> Vec<f64> {
    let mut out = params[l.b..l.b + l.rows].to_vec();
    gemv_acc(params, l, x, &mut out);
    out
}

/// `out += Wᵀ dy`.
fn gemv_t_acc(params: &[f64], l: &Dense, dy: &[f64], out: &mut [f64]) {
    let w = &params[l.w..l.w + l.rows * l.cols];
    for (row, &g) in w.chunks_exact(l.cols).zip(dy) {
        if g != 0.0 {
            for (o, wv) in out.iter_mut().zip(row) {
                *o += g * wv;
            }
        }
    }
}

/// `dW += s · dy xᵀ`, `db += s · dy`.
fn outer_acc(grad: &mut [f64], l: &Dense, dy: &[f64], x: &[f64], s: f64) {
    let gw = &mut grad[l.w..l.w + l.rows * l.cols];
    for (row, &g) in gw.chunks_exact_mut(l.cols).zip(dy) {
        let g = g * s;
        if g != 0.0 {
            for (o, xv) in row.iter_mut().zip(x) {
                *o += g * xv;
            }
        }
    }
    for (o, &g) in grad[l.b..l.b + l.rows].iter_mut().zip(dy) {
        *o += s * g;
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// --- batch norm ---------------------------------------------------------------

/// Statistics a batch norm normalized with.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    /// Biased variance (the one used for normalization).
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub count: usize,
}

struct BnOut {
    xhat: Vec<f64>,
    y: Vec<f64>,
    stats: BnStats,
}

fn bn_forward(model: &AutoencoderModel, n: &Norm, x: &[f64], rows: usize, mode: Mode) -> BnOut {
    let c = n.width;
    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0; c];
            for row in x.chunks_exact(c) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= rows as f64);
            let mut var = vec![0.0; c];
            for row in x.chunks_exact(c) {
                for k in 0..c {
                    let dv = row[k] - mean[k];
                    var[k] += dv * dv;
                }
            }
            var.iter_mut().for_each(|v| *v /= rows as f64);
            (mean, var)
        }
        Mode::Infer => (
            model.buffers[n.mean..n.mean + c].to_vec(),
            model.buffers[n.var..n.var + c].to_vec(),
        ),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let gamma = &model.params[n.gamma..n.gamma + c];
    let beta = &model.params[n.beta..n.beta + c];
    let mut xhat = Vec::with_capacity(x.len());
    let mut y = Vec::with_capacity(x.len());
    for row in x.chunks_exact(c) {
        for k in 0..c {
            let h = (row[k] - mean[k]) * inv_std[k];
            xhat.push(h);
            y.push(gamma[k] * h + beta[k]);
        }
    }
    BnOut {
        xhat,
        y,
        stats: BnStats {
            mean,
            var,
            inv_std,
            count: rows,
        },
    }
}

/// Backward through a training-mode batch norm; accumulates `dγ`, `dβ` and
/// returns `dx`.
fn bn_backward(params: &[f64], grad: &mut [f64], n: &Norm, dy: &[f64], xhat: &[f64], stats: &BnStats) -> Vec<f64> {
    let c = n.width;
    let rows = stats.count as f64;
    let gamma = &params[n.gamma..n.gamma + c];
    let mut sum_dxhat = vec![0.0; c];
    let mut sum_dxhat_xhat = vec![0.0; c];
    for (dr, hr) in dy.chunks_exact(c).zip(xhat.chunks_exact(c)) {
        for k in 0..c {
            grad[n.gamma + k] += dr[k] * hr[k];
            grad[n.beta + k] += dr[k];
            let dh = dr[k] * gamma[k];
            sum_dxhat[k] += dh;
            sum_dxhat_xhat[k] += dh * hr[k];
        }
    }
    let mut dx = Vec::with_capacity(dy.len());
    for (dr, hr) in dy.chunks_exact(c).zip(xhat.chunks_exact(c)) {
        for k in 0..c {
            let dh = dr[k] * gamma[k];
            dx.push(stats.inv_std[k] / rows * (rows * dh - sum_dxhat[k] - hr[k] * sum_dxhat_xhat[k]));
        }
    }
    dx
}

/// Folds batch statistics into the running buffers:
/// `running = m · running + (1 − m) · batch`, with the unbiased batch variance.
pub(crate) fn update_running(model: &mut AutoencoderModel, n: &Norm, stats: &BnStats) {
    let unbias = if stats.count > 1 {
        stats.count as f64 / (stats.count - 1) as f64
    } else {
        1.0
    };
    for k in 0..n.width {
        let m = &mut model.buffers[n.mean + k];
        *m = BN_MOMENTUM * *m + (1.0 - BN_MOMENTUM) * stats.mean[k];
        let v = &mut model.buffers[n.var + k];
        *v = BN_MOMENTUM * *v + (1.0 - BN_MOMENTUM) * stats.var[k] * unbias;
    }
}

// --- encoder ------------------------------------------------------------------

/// Aggregation weights of a patch: `(r − ‖o‖)²` normalized to sum to one.
/// Members exactly on the boundary get zero weight; if every member does, the
/// plain mean is used instead.
pub fn kernel_weights(patch: &Patch) -> Vec<f64> {
    let r = patch.radius;
    let k: Vec<f64> = patch
        .offsets
        .iter()
        .map(|o| {
            let dist = (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt();
            if dist < r {
                (r - dist) * (r - dist)
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = k.iter().sum();
    if total > 0.0 {
        k.iter().map(|x| x / total).collect()
    } else {
        vec![1.0 / k.len() as f64; k.len()]
    }
}

#[derive(Debug, Clone)]
pub struct EncoderPass {
    /// Member row offsets per patch (length `B + 1`).
    pub starts: Vec<usize>,
    enc_w: Vec<[f64; 6]>,
    agg_w: Vec<f64>,
    g: Vec<f64>,
    bn1_xhat: Vec<f64>,
    /// Pre-ReLU batch-norm output, `M × 256`.
    bn1_y: Vec<f64>,
    /// Kernel-weighted member aggregate per patch, `B × 256`.
    pub aggregate: Vec<f64>,
    bn2_xhat: Vec<f64>,
    /// Latent vectors, `B × v`.
    pub latents: Vec<f64>,
    pub bn1: BnStats,
    pub bn2: BnStats,
}

pub fn encode(model: &AutoencoderModel, patches: &[&Patch], mode: Mode) -> EncoderPass {
    let lay = model.layout();
    let p = &model.params;
    let d = lay.attr_dim;
    let mut starts = vec![0];
    let mut enc_w = Vec::new();
    let mut agg_w = Vec::new();
    let mut g = Vec::new();
    let mut z1 = Vec::new();
    for patch in patches {
        assert_eq!(patch.attr_dim, d, "patch attribute dimension");
        assert!(!patch.is_empty(), "empty patch");
        agg_w.extend(kernel_weights(patch));
        for j in 0..patch.len() {
            let w = member_weights(&patch.offsets[j]);
            let x = patch.attribute_row(j);
            let mut gj = vec![0.0; DIR_WIDTH];
            for (b, &wb) in w.iter().enumerate() {
                if wb == 0.0 {
                    continue;
                }
                let mut t = affine(p, &lay.enc_dir[b], x);
                t.iter_mut().for_each(|v| *v *= wb);
                gj.iter_mut().zip(&t).for_each(|(a, v)| *a += v);
            }
            z1.extend(affine(p, &lay.enc_fc1, &gj));
            g.extend(gj);
            enc_w.push(w);
        }
        starts.push(enc_w.len());
    }
    let m = enc_w.len();
    let bn1 = bn_forward(model, &lay.bn1, &z1, m, mode);
    let mut aggregate = vec![0.0; patches.len() * HIDDEN];
    for (bi, agg) in aggregate.chunks_exact_mut(HIDDEN).enumerate() {
        for j in starts[bi]..starts[bi + 1] {
            let a = agg_w[j];
            for (s, &y) in agg.iter_mut().zip(&bn1.y[j * HIDDEN..(j + 1) * HIDDEN]) {
                *s += a * y.max(0.0);
            }
        }
    }
    let mut z2 = Vec::with_capacity(patches.len() * lay.latent_dim);
    for s in aggregate.chunks_exact(HIDDEN) {
        z2.extend(affine(p, &lay.enc_fc2, s));
    }
    let bn2 = bn_forward(model, &lay.bn2, &z2, patches.len(), mode);
    EncoderPass {
        starts,
        enc_w,
        agg_w,
        g,
        bn1_xhat: bn1.xhat,
        bn1_y: bn1.y,
        aggregate,
        bn2_xhat: bn2.xhat,
        latents: bn2.y,
        bn1: bn1.stats,
        bn2: bn2.stats,
    }
}

// --- decoder ------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DecoderPass {
    dec_w: Vec<[f64; 6]>,
    bn3_xhat: Vec<f64>,
    bn3_y: Vec<f64>,
    /// Sigmoid outputs, `M × (3 + d)`: three rel-position channels, then attributes.
    pub outputs: Vec<f64>,
    pub bn3: BnStats,
}

pub fn decode(model: &AutoencoderModel, patches: &[&Patch], latents: &[f64], mode: Mode) -> DecoderPass {
    let lay = model.layout();
    let p = &model.params;
    let v = lay.latent_dim;
    let mut dec_w = Vec::new();
    let mut y = Vec::new();
    for (bi, patch) in patches.iter().enumerate() {
        let l = &latents[bi * v..(bi + 1) * v];
        // per-basis responses are shared by every member of the patch
        let responses: Vec<Vec<f64>> = lay.dec_dir.iter().map(|layer| affine(p, layer, l)).collect();
        for o in &patch.offsets {
            let w = reversed_weights(o);
            let mut yj = vec![0.0; HIDDEN];
            for (b, &wb) in w.iter().enumerate() {
                if wb != 0.0 {
                    yj.iter_mut().zip(&responses[b]).for_each(|(a, r)| *a += wb * r);
                }
            }
            y.extend(yj);
            dec_w.push(w);
        }
    }
    let m = dec_w.len();
    let bn3 = bn_forward(model, &lay.bn3, &y, m, mode);
    let mut outputs = Vec::with_capacity(m * lay.dec_out.rows);
    for row in bn3.y.chunks_exact(HIDDEN) {
        let h: Vec<f64> = row.iter().map(|x| x.max(0.0)).collect();
        outputs.extend(affine(p, &lay.dec_out, &h).into_iter().map(sigmoid));
    }
    DecoderPass {
        dec_w,
        bn3_xhat: bn3.xhat,
        bn3_y: bn3.y,
        outputs,
        bn3: bn3.stats,
    }
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub enc: EncoderPass,
    pub dec: DecoderPass,
}

impl Forward {
    /// Sign of every ReLU input in the pass. Two passes with the same pattern
    /// lie on the same linear piece of the network.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.enc.bn1_y.iter().chain(&self.dec.bn3_y).map(|&x| x > 0.0).collect()
    }
}

pub fn forward(model: &AutoencoderModel, patches: &[&Patch], mode: Mode) -> Forward {
    let enc = encode(model, patches, mode);
    let dec = decode(model, patches, &enc.latents, mode);
    Forward { enc, dec }
}

// --- loss ---------------------------------------------------------------------

fn channel_range(mode: LossMode, d: usize) -> std::ops::Range<usize> {
    match mode {
        LossMode::AttributesOnly => 3..3 + d,
        LossMode::AttributesAndPositions => 0..3 + d,
    }
}

/// Mean squared error of one patch's reconstruction (`n × (3+d)` rows).
pub fn patch_loss(recon: &[f64], patch: &Patch, mode: LossMode) -> f64 {
    let d = patch.attr_dim;
    let ch = channel_range(mode, d);
    let mut sum = 0.0;
    for (j, row) in recon.chunks_exact(3 + d).enumerate() {
        for c in ch.clone() {
            let t = if c < 3 { patch.rel_positions[j][c] } else { patch.attribute_row(j)[c - 3] };
            sum += (row[c] - t) * (row[c] - t);
        }
    }
    sum / (patch.len() * ch.len()) as f64
}

/// Batch loss (mean of per-patch losses) and its gradient w.r.t. the decoder outputs.
pub fn batch_loss(outputs: &[f64], patches: &[&Patch], starts: &[usize], mode: LossMode) -> (f64, Vec<f64>) {
    let d = patches[0].attr_dim;
    let width = 3 + d;
    let ch = channel_range(mode, d);
    let nb = patches.len() as f64;
    let mut grad = vec![0.0; outputs.len()];
    let mut total = 0.0;
    for (bi, patch) in patches.iter().enumerate() {
        let rows = &outputs[starts[bi] * width..starts[bi + 1] * width];
        total += patch_loss(rows, patch, mode);
        let scale = 2.0 / (nb * (patch.len() * ch.len()) as f64);
        for j in 0..patch.len() {
            for c in ch.clone() {
                let t = if c < 3 { patch.rel_positions[j][c] } else { patch.attribute_row(j)[c - 3] };
                let idx = (starts[bi] + j) * width + c;
                grad[idx] = scale * (outputs[idx] - t);
            }
        }
    }
    (total / nb, grad)
}

// --- backward -----------------------------------------------------------------

/// Gradient of the batch loss w.r.t. every parameter, given `d_out`
/// (gradient w.r.t. the sigmoid outputs) from a training-mode forward pass.
pub fn backward(model: &AutoencoderModel, patches: &[&Patch], fw: &Forward, d_out: &[f64]) -> Vec<f64> {
    let lay = model.layout();
    let p = &model.params;
    let mut grad = vec![0.0; lay.num_params];
    let v = lay.latent_dim;
    let width = lay.dec_out.rows;
    let starts = &fw.enc.starts;
    let m = fw.dec.dec_w.len();

    // output layer
    let mut d_bn3 = vec![0.0; m * HIDDEN];
    for j in 0..m {
        let o = &fw.dec.outputs[j * width..(j + 1) * width];
        let dpre: Vec<f64> = o
            .iter()
            .zip(&d_out[j * width..(j + 1) * width])
            .map(|(&y, &g)| g * y * (1.0 - y))
            .collect();
        let pre = &fw.dec.bn3_y[j * HIDDEN..(j + 1) * HIDDEN];
        let h: Vec<f64> = pre.iter().map(|x| x.max(0.0)).collect();
        outer_acc(&mut grad, &lay.dec_out, &dpre, &h, 1.0);
        let mut dh = vec![0.0; HIDDEN];
        gemv_t_acc(p, &lay.dec_out, &dpre, &mut dh);
        for k in 0..HIDDEN {
            d_bn3[j * HIDDEN + k] = if pre[k] > 0.0 { dh[k] } else { 0.0 };
        }
    }
    let dy = bn_backward(p, &mut grad, &lay.bn3, &d_bn3, &fw.dec.bn3_xhat, &fw.dec.bn3);

    // decoder directional stage: y_j = Σ_b w'_jb (V_b l + c'_b)
    let mut d_latent = vec![0.0; patches.len() * v];
    for bi in 0..patches.len() {
        let l = &fw.enc.latents[bi * v..(bi + 1) * v];
        let mut d_resp = vec![vec![0.0; HIDDEN]; NUM_BASES];
        for j in starts[bi]..starts[bi + 1] {
            let w = fw.dec.dec_w[j];
            for b in 0..NUM_BASES {
                if w[b] != 0.0 {
                    for (a, g) in d_resp[b].iter_mut().zip(&dy[j * HIDDEN..(j + 1) * HIDDEN]) {
                        *a += w[b] * g;
                    }
                }
            }
        }
        for b in 0..NUM_BASES {
            outer_acc(&mut grad, &lay.dec_dir[b], &d_resp[b], l, 1.0);
            gemv_t_acc(p, &lay.dec_dir[b], &d_resp[b], &mut d_latent[bi * v..(bi + 1) * v]);
        }
    }

    // latent batch norm and encoder output layer
    let dz2 = bn_backward(p, &mut grad, &lay.bn2, &d_latent, &fw.enc.bn2_xhat, &fw.enc.bn2);
    let mut d_bn1 = vec![0.0; starts[patches.len()] * HIDDEN];
    for bi in 0..patches.len() {
        let dz = &dz2[bi * v..(bi + 1) * v];
        outer_acc(&mut grad, &lay.enc_fc2, dz, &fw.enc.aggregate[bi * HIDDEN..(bi + 1) * HIDDEN], 1.0);
        let mut ds = vec![0.0; HIDDEN];
        gemv_t_acc(p, &lay.enc_fc2, dz, &mut ds);
        for j in starts[bi]..starts[bi + 1] {
            let a = fw.enc.agg_w[j];
            for k in 0..HIDDEN {
                if fw.enc.bn1_y[j * HIDDEN + k] > 0.0 {
                    d_bn1[j * HIDDEN + k] = a * ds[k];
                }
            }
        }
    }
    let dz1 = bn_backward(p, &mut grad, &lay.bn1, &d_bn1, &fw.enc.bn1_xhat, &fw.enc.bn1);

    // shared FC and directional stage of the encoder
    for (bi, patch) in patches.iter().enumerate() {
        for (jj, j) in (starts[bi]..starts[bi + 1]).enumerate() {
            let dz = &dz1[j * HIDDEN..(j + 1) * HIDDEN];
            outer_acc(&mut grad, &lay.enc_fc1, dz, &fw.enc.g[j * DIR_WIDTH..(j + 1) * DIR_WIDTH], 1.0);
            let mut dg = vec![0.0; DIR_WIDTH];
            gemv_t_acc(p, &lay.enc_fc1, dz, &mut dg);
            let x = patch.attribute_row(jj);
            for (b, &wb) in fw.enc.enc_w[j].iter().enumerate() {
                if wb != 0.0 {
                    outer_acc(&mut grad, &lay.enc_dir[b], &dg, x, wb);
                }
            }
        }
    }
    grad
}

/// Loss and gradient of one training batch.
pub fn loss_and_grad(model: &AutoencoderModel, patches: &[&Patch], mode: LossMode) -> (f64, Vec<f64>, Forward) {
    let fw = forward(model, patches, Mode::Train);
    let (loss, d_out) = batch_loss(&fw.dec.outputs, patches, &fw.enc.starts, mode);
    let grad = backward(model, patches, &fw, &d_out);
    (loss, grad, fw)
}

/// Batch loss only, for finite-difference checks.
pub fn batch_loss_value(model: &AutoencoderModel, patches: &[&Patch], mode: LossMode) -> f64 {
    let fw = forward(model, patches, Mode::Train);
    batch_loss(&fw.dec.outputs, patches, &fw.enc.starts, mode).0
}

// --- single-patch conveniences -------------------------------------------------

/// Kernel-weighted 256-wide member aggregate of one patch.
pub fn geoconv_forward(model: &AutoencoderModel, patch: &Patch, mode: Mode) -> Vec<f64> {
    encode(model, &[patch], mode).aggregate
}

/// Latent vector of one patch using the running batch-norm statistics.
pub fn encode_patch(model: &AutoencoderModel, patch: &Patch) -> Vec<f64> {
    encode(model, &[patch], Mode::Infer).latents
}

/// Per-member `(3+d)` reconstructions of `patch` from `latent`.
pub fn geodeconv_forward(model: &AutoencoderModel, latent: &[f64], patch: &Patch, mode: Mode) -> Vec<f64> {
    decode(model, &[patch], latent, mode).outputs
}

/// Encode then decode one patch with running statistics.
pub fn reconstruct(model: &AutoencoderModel, patch: &Patch) -> Vec<f64> {
    forward(model, &[patch], Mode::Infer).dec.outputs
}
