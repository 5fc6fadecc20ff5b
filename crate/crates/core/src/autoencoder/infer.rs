use std::path::Path;

use rayon::prelude::*;

use super::model::{quantize, AutoencoderModel};
use super::net;
use crate::io::{write_atomic, Reader};
use crate::store::{particle_patch, ParticleFrame, SampleSet};
use crate::{Error, Result};

const LATENT_MAGIC: &[u8; 4] = b"LAT1";
/// Particles per parallel work item.
const CHUNK: usize = 256;

/// One latent vector per particle of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentField {
    pub frame_id: u64,
    pub latent_dim: usize,
    /// Row-major `N × v`.
    pub latents: Vec<f64>,
    pub model_digest: [u8; 32],
}

impl LatentField {
    pub fn len(&self) -> usize {
        self.latents.len() / self.latent_dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.latents[i * self.latent_dim..(i + 1) * self.latent_dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.latents.chunks_exact(self.latent_dim)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(44 + 4 * self.latents.len());
        out.extend_from_slice(LATENT_MAGIC);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.latent_dim as u32).to_le_bytes());
        out.extend_from_slice(&self.model_digest);
        for &x in &self.latents {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], frame_id: u64, path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        if r.bytes(4)? != LATENT_MAGIC {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                location: "byte 0".into(),
                message: "bad magic, expected LAT1".into(),
            });
        }
        let n = r.u32()? as usize;
        let v = r.u32()? as usize;
        if v == 0 {
            return Err(r.fail("latent dimension 0"));
        }
        let model_digest: [u8; 32] = r.bytes(32)?.try_into().unwrap();
        let count = n
            .checked_mul(v)
            .filter(|c| c * 4 == r.remaining())
            .ok_or_else(|| r.fail(format!("expected {n}×{v} floats, found {} bytes", r.remaining())))?;
        let mut latents = Vec::with_capacity(count);
        for _ in 0..count {
            let x = r.f32()?;
            if !x.is_finite() {
                return Err(r.fail("non-finite latent"));
            }
            latents.push(x as f64);
        }
        Ok(LatentField {
            frame_id,
            latent_dim: v,
            latents,
            model_digest,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path, frame_id: u64) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, frame_id, path)
    }
}

fn check_dims(model: &AutoencoderModel, frame: &ParticleFrame) -> Result<()> {
    if model.attr_dim() != frame.attr_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.attr_dim(),
            got: frame.attr_dim(),
        });
    }
    Ok(())
}

/// Latent vectors of the patches centered on `indices`, rounded to `f32`.
pub fn infer_latents_at(model: &AutoencoderModel, frame: &ParticleFrame, indices: &[usize]) -> Result<Vec<f64>> {
    check_dims(model, frame)?;
    let v = model.latent_dim();
    let chunks: Vec<Vec<f64>> = indices
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut out = Vec::with_capacity(chunk.len() * v);
            for &i in chunk {
                let patch = particle_patch(frame, i, model.radius)?;
                out.extend(net::encode_patch(model, &patch).into_iter().map(quantize));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

/// Latent vector of every particle's patch, inference-mode batch norms.
pub fn infer_latents(model: &AutoencoderModel, frame: &ParticleFrame) -> Result<LatentField> {
    let all: Vec<usize> = (0..frame.len()).collect();
    Ok(LatentField {
        frame_id: frame.id(),
        latent_dim: model.latent_dim(),
        latents: infer_latents_at(model, frame, &all)?,
        model_digest: model.digest(),
    })
}

/// `10·log10(1/mse)` for unit-peak data; `+∞` for a perfect reconstruction.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Sum of squared attribute errors and the number of attribute values over the
/// reconstructed patches centered on `indices`.
pub fn reconstruction_error(model: &AutoencoderModel, frame: &ParticleFrame, indices: &[usize]) -> Result<(f64, usize)> {
    check_dims(model, frame)?;
    let d = model.attr_dim();
    let parts: Vec<(f64, usize)> = indices
        .par_chunks(CHUNK)
        .map(|chunk| {
            let (mut sum, mut count) = (0.0, 0usize);
            for &i in chunk {
                let patch = particle_patch(frame, i, model.radius)?;
                let recon = net::reconstruct(model, &patch);
                for (j, row) in recon.chunks_exact(3 + d).enumerate() {
                    for (y, t) in row[3..].iter().zip(patch.attribute_row(j)) {
                        sum += (y - t) * (y - t);
                    }
                    count += d;
                }
            }
            Ok((sum, count))
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().fold((0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1)))
}

/// Reconstruction PSNR over the patches of `sample` (every particle if `None`),
/// pooled over all member attribute values.
pub fn psnr(model: &AutoencoderModel, frame: &ParticleFrame, sample: Option<&SampleSet>) -> Result<f64> {
    let all;
    let indices = match sample {
        Some(s) => &s.indices[..],
        None => {
            all = (0..frame.len()).collect::<Vec<_>>();
            &all[..]
        }
    };
    let (sum, count) = reconstruction_error(model, frame, indices)?;
    if count == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok(psnr_from_mse(sum / count as f64))
}

/// PSNR pooled over several frames, each evaluated on its own sample.
pub fn psnr_frames(model: &AutoencoderModel, frames: &[ParticleFrame], samples: &[SampleSet]) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for (f, s) in frames.iter().zip(samples) {
        let (a, b) = reconstruction_error(model, f, &s.indices)?;
        sum += a;
        count += b;
    }
    if count == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok(psnr_from_mse(sum / count as f64))
}
