//! Random search over the latent dimension under a fixed per-candidate budget.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::infer::psnr_frames;
use super::model::AutoencoderModel;
use super::train::{train, training_patches, TrainConfig};
use crate::store::{self, ParticleFrame};
use crate::{Error, Result};

/// Largest latent dimension ever proposed.
pub const MAX_LATENT_DIM: usize = 64;
/// Offset applied to the training seed when drawing the evaluation sample.
const EVAL_SEED_OFFSET: u64 = 0x9e37_79b9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub latent_dim: usize,
    pub psnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub best_latent_dim: usize,
    /// Sorted by PSNR, best first.
    pub table: Vec<Candidate>,
    /// Candidates whose training failed, with the error message.
    pub failures: Vec<(usize, String)>,
}

/// Upper end of the search range: the number of scalars in a typical input
/// patch, `(3 + d) × median member count`, capped at [`MAX_LATENT_DIM`].
pub fn latent_dim_cap(frames: &[ParticleFrame], radius: f64, fraction: f64, seed: u64) -> Result<usize> {
    let patches = training_patches(frames, radius, fraction, seed)?;
    let mut sizes: Vec<f64> = patches.iter().flatten().map(|p| p.len() as f64).collect();
    if sizes.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let d = frames[0].attr_dim();
    let dim = ((3 + d) as f64 * store::median(&mut sizes)).floor() as usize;
    Ok(dim.clamp(2, MAX_LATENT_DIM))
}

/// Trains one model per candidate and ranks them by PSNR on a held-out sample.
/// Returns the report and the best model.
pub fn evaluate_latent_dims(
    frames: &[ParticleFrame],
    radius: f64,
    dims: &[usize],
    config: &TrainConfig,
) -> Result<(SearchReport, AutoencoderModel)> {
    if dims.is_empty() {
        return Err(Error::invalid("no candidate latent dimensions"));
    }
    let eval = store::sample_frames(frames, config.sample_fraction, config.seed.wrapping_add(EVAL_SEED_OFFSET))?;
    let mut table = Vec::new();
    let mut failures = Vec::new();
    let mut best: Option<(f64, AutoencoderModel)> = None;
    for &v in dims {
        let result = train(frames, config, radius, v, &mut |_| {}).and_then(|m| Ok((psnr_frames(&m, frames, &eval)?, m)));
        match result {
            Ok((psnr, model)) => {
                table.push(Candidate { latent_dim: v, psnr });
                if best.as_ref().is_none_or(|(b, _)| psnr > *b) {
                    best = Some((psnr, model));
                }
            }
            Err(e) => failures.push((v, e.to_string())),
        }
    }
    let (_, model) = best.ok_or_else(|| Error::invalid(format!("every candidate failed: {failures:?}")))?;
    // stable: equal PSNR keeps evaluation order
    table.sort_by(|a, b| b.psnr.total_cmp(&a.psnr));
    Ok((
        SearchReport {
            best_latent_dim: model.latent_dim(),
            table,
            failures,
        },
        model,
    ))
}

/// Draws `budget` distinct latent dimensions uniformly from `2..=cap` (all of
/// them if the range is smaller) and evaluates each with `config`.
pub fn random_search_latent_dim(
    frames: &[ParticleFrame],
    radius: f64,
    budget: usize,
    config: &TrainConfig,
) -> Result<(SearchReport, AutoencoderModel)> {
    if budget == 0 {
        return Err(Error::invalid("search budget must be at least 1"));
    }
    if frames.is_empty() {
        return Err(Error::invalid("no frames"));
    }
    let cap = latent_dim_cap(frames, radius, config.sample_fraction, config.seed)?;
    let span = cap - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dims: Vec<usize> = index::sample(&mut rng, span, budget.min(span))
        .into_iter()
        .map(|k| k + 2)
        .collect();
    evaluate_latent_dims(frames, radius, &dims, config)
}
