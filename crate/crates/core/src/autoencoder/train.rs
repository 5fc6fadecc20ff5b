use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::AutoencoderModel;
use super::net::{self, LossMode};
use crate::store::{self, particle_patch, ParticleFrame, Patch};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub sample_fraction: f64,
    pub loss_mode: LossMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            sample_fraction: 0.01,
            loss_mode: LossMode::AttributesOnly,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(Error::invalid(format!("sample fraction {} outside (0,1]", self.sample_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub frame_id: u64,
    /// Patch-weighted mean of the batch losses.
    pub mean_loss: f64,
    pub patches: usize,
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Training patches for every frame: one value-based sample per frame, drawn once.
pub fn training_patches(frames: &[ParticleFrame], radius: f64, fraction: f64, seed: u64) -> Result<Vec<Vec<Patch>>> {
    let samples = store::sample_frames(frames, fraction, seed)?;
    frames
        .iter()
        .zip(&samples)
        .map(|(f, s)| {
            s.indices
                .par_iter()
                .map(|&i| particle_patch(f, i, radius))
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

/// Splits shuffled indices into batches; a trailing single-patch batch is merged
/// into its predecessor since one-row batch statistics carry no signal.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().unwrap().len() == 1 {
        out.pop();
        let n = out.len();
        let start = (n - 1) * size;
        out[n - 1] = &order[start..];
    }
    out
}

/// Trains a fresh model. Epoch `e` covers the samples of frame `e mod F`.
pub fn train(
    frames: &[ParticleFrame],
    config: &TrainConfig,
    radius: f64,
    latent_dim: usize,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<AutoencoderModel> {
    if frames.is_empty() {
        return Err(Error::invalid("no frames to train on"));
    }
    let model = AutoencoderModel::new(frames[0].attr_dim(), latent_dim, radius, config.seed)?;
    train_model(model, frames, config, progress)
}

/// Continues training `model` on `frames`.
pub fn train_model(
    mut model: AutoencoderModel,
    frames: &[ParticleFrame],
    config: &TrainConfig,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<AutoencoderModel> {
    config.validate()?;
    if frames.is_empty() {
        return Err(Error::invalid("no frames to train on"));
    }
    for f in frames {
        if f.attr_dim() != model.attr_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.attr_dim(),
                got: f.attr_dim(),
            });
        }
    }
    let patches = training_patches(frames, model.radius, config.sample_fraction, config.seed)?;
    let mut adam = Adam::new(model.params.len(), config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_ba7c);
    let mut last_good = model.clone();
    let lay = model.layout().clone();
    for epoch in 0..config.epochs {
        let fi = epoch % frames.len();
        let set = &patches[fi];
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for batch in batches(&order, config.batch_size) {
            let refs: Vec<&Patch> = batch.iter().map(|&k| &set[k]).collect();
            let (loss, grad, fw) = net::loss_and_grad(&model, &refs, config.loss_mode);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    checkpoint: Box::new(last_good),
                });
            }
            adam.step(&mut model.params, &grad);
            net::update_running(&mut model, &lay.bn1, &fw.enc.bn1);
            net::update_running(&mut model, &lay.bn2, &fw.enc.bn2);
            net::update_running(&mut model, &lay.bn3, &fw.dec.bn3);
            weighted += loss * refs.len() as f64;
        }
        if !model.is_finite() {
            return Err(Error::Diverged {
                epoch,
                checkpoint: Box::new(last_good),
            });
        }
        progress(&EpochStats {
            epoch,
            frame_id: frames[fi].id(),
            mean_loss: weighted / set.len() as f64,
            patches: set.len(),
        });
        last_good.clone_from(&model);
    }
    model.quantize_all();
    Ok(model)
}
