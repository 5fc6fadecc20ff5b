//! Mean-shift tracking of a cubic region over histograms of PCA-reduced latents.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::analysis::{pca, Pca};
use crate::autoencoder::{infer_latents_at, AutoencoderModel, LatentField};
use crate::store::ParticleFrame;
use crate::{Error, Result};

pub const BINS: usize = 8;
pub const REDUCED_DIM: usize = 4;
pub const MIN_REGION_PARTICLES: usize = 16;
pub const SHIFT_TOL: f64 = 1e-3;
pub const MAX_ITERS: usize = 20;
/// Bin edges extend the projected range by this fraction on each side.
const EDGE_MARGIN: f64 = 0.1;
/// A backtracking step that has shrunk below this length is abandoned.
const MIN_HALVED_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub center: [f64; 3],
    pub half_extent: [f64; 3],
}

impl Region {
    pub fn new(center: [f64; 3], half_extent: [f64; 3]) -> Result<Self> {
        if half_extent.iter().any(|h| !(*h > 0.0)) || center.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("bad region: center {center:?}, half extent {half_extent:?}")));
        }
        Ok(Self { center, half_extent })
    }

    pub fn at(&self, center: [f64; 3]) -> Self {
        Self { center, ..*self }
    }

    /// Chebyshev membership in the axis-aligned cube.
    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|a| (p[a] - self.center[a]).abs() <= self.half_extent[a])
    }

    pub fn half_diagonal(&self) -> f64 {
        self.half_extent.iter().map(|h| h * h).sum::<f64>().sqrt()
    }

    pub fn members(&self, frame: &ParticleFrame) -> Vec<usize> {
        let mut m = frame.index().within_box(&self.center, &self.half_extent);
        m.retain(|&i| self.contains(frame.position(i)));
        m.sort_unstable();
        m
    }

    /// Epanechnikov weight of a position relative to the region center.
    pub fn kernel(&self, p: &[f64; 3]) -> f64 {
        let h2 = self.half_diagonal().powi(2);
        let d2: f64 = (0..3).map(|a| (p[a] - self.center[a]).powi(2)).sum();
        (1.0 - d2 / h2).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackTarget {
    pub pca: Pca,
    /// One row of `BINS + 1` increasing edges per reduced axis.
    pub edges: Vec<Vec<f64>>,
    /// `BINS^axes` bins, row-major with the first axis slowest; sums to 1.
    pub hist: Vec<f64>,
    pub half_extent: [f64; 3],
}

impl TrackTarget {
    /// Fits the reduction and histogram on the latents (row-major, `dim` wide)
    /// of the particles at `positions`, all of which must lie in `region`.
    pub fn build(positions: &[[f64; 3]], latents: &[f64], dim: usize, region: &Region) -> Result<Self> {
        if latents.len() != positions.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: positions.len() * dim,
                got: latents.len(),
            });
        }
        if positions.len() < MIN_REGION_PARTICLES {
            return Err(Error::InsufficientData {
                needed: MIN_REGION_PARTICLES,
                got: positions.len(),
            });
        }
        let axes = REDUCED_DIM.min(dim);
        let pca = pca(latents, dim, axes)?;
        let projected = pca.project_all(latents);
        let edges = (0..axes)
            .map(|a| {
                let (lo, hi) = projected
                    .iter()
                    .skip(a)
                    .step_by(axes)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
                let w = hi - lo;
                let (lo, hi) = if w > 0.0 {
                    (lo - EDGE_MARGIN * w, hi + EDGE_MARGIN * w)
                } else {
                    (lo - 0.5, hi + 0.5)
                };
                (0..=BINS).map(|k| lo + (hi - lo) * k as f64 / BINS as f64).collect()
            })
            .collect();
        let mut target = Self {
            pca,
            edges,
            hist: Vec::new(),
            half_extent: region.half_extent,
        };
        let bins = target.bins_of(&projected);
        let weights: Vec<f64> = positions.iter().map(|p| region.kernel(p)).collect();
        target.hist = histogram(&bins, &weights, target.num_bins())
            .ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
        Ok(target)
    }

    pub fn axes(&self) -> usize {
        self.edges.len()
    }

    pub fn num_bins(&self) -> usize {
        BINS.pow(self.axes() as u32)
    }

    /// Flat bin of each projected row; values outside the edges go to the edge bins.
    pub fn bins_of(&self, projected: &[f64]) -> Vec<usize> {
        projected
            .chunks_exact(self.axes())
            .map(|row| {
                row.iter().zip(&self.edges).fold(0, |acc, (&x, e)| {
                    let t = (x - e[0]) / (e[BINS] - e[0]) * BINS as f64;
                    acc * BINS + (t.floor().max(0.0) as usize).min(BINS - 1)
                })
            })
            .collect()
    }

    pub fn bins_of_latents(&self, latents: &[f64]) -> Vec<usize> {
        self.bins_of(&self.pca.project_all(latents))
    }
}

/// Normalized weighted histogram; `None` when every weight is zero.
pub fn histogram(bins: &[usize], weights: &[f64], num_bins: usize) -> Option<Vec<f64>> {
    let mut h = vec![0.0; num_bins];
    for (&b, &w) in bins.iter().zip(weights) {
        h[b] += w;
    }
    let total: f64 = h.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    h.iter_mut().for_each(|x| *x /= total);
    Some(h)
}

pub fn bhattacharyya(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum::<f64>().clamp(0.0, 1.0)
}

pub fn deviation(tracked: [f64; 3], truth: [f64; 3], feature_radius: f64) -> Result<f64> {
    if !(feature_radius > 0.0) {
        return Err(Error::invalid(format!("feature radius {feature_radius} must be positive")));
    }
    Ok((0..3).map(|a| (tracked[a] - truth[a]).powi(2)).sum::<f64>().sqrt() / feature_radius)
}

/// Latents for one frame, either precomputed or inferred on demand and cached.
pub struct FrameLatents<'a> {
    frame: &'a ParticleFrame,
    source: Source<'a>,
}

enum Source<'a> {
    Field(&'a LatentField),
    Model {
        model: &'a AutoencoderModel,
        cache: HashMap<usize, Vec<f64>>,
    },
}

impl<'a> FrameLatents<'a> {
    pub fn from_field(frame: &'a ParticleFrame, field: &'a LatentField) -> Result<Self> {
        if field.len() != frame.len() {
            return Err(Error::DimensionMismatch {
                expected: frame.len(),
                got: field.len(),
            });
        }
        Ok(Self {
            frame,
            source: Source::Field(field),
        })
    }

    pub fn from_model(frame: &'a ParticleFrame, model: &'a AutoencoderModel) -> Result<Self> {
        if model.attr_dim() != frame.attr_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.attr_dim(),
                got: frame.attr_dim(),
            });
        }
        Ok(Self {
            frame,
            source: Source::Model {
                model,
                cache: HashMap::new(),
            },
        })
    }

    pub fn frame(&self) -> &ParticleFrame {
        self.frame
    }

    pub fn dim(&self) -> usize {
        match &self.source {
            Source::Field(f) => f.latent_dim,
            Source::Model { model, .. } => model.latent_dim(),
        }
    }

    /// Number of particles whose latents were inferred so far.
    pub fn inferred(&self) -> usize {
        match &self.source {
            Source::Field(_) => 0,
            Source::Model { cache, .. } => cache.len(),
        }
    }

    /// Latents (row-major) of the particles in `region`, together with their indices.
    pub fn region(&mut self, region: &Region) -> Result<(Vec<usize>, Vec<f64>)> {
        let members = region.members(self.frame);
        let rows = match &mut self.source {
            Source::Field(f) => members.iter().flat_map(|&i| f.row(i).iter().copied()).collect(),
            Source::Model { model, cache } => {
                if members.iter().any(|i| !cache.contains_key(i)) {
                    // fill the cache for a margin around the cube so small shifts hit it
                    let r = model.radius;
                    let inflated = region.half_extent.map(|h| h + r);
                    let mut missing = self.frame.index().within_box(&region.center, &inflated);
                    missing.retain(|i| !cache.contains_key(i));
                    missing.sort_unstable();
                    let rows = infer_latents_at(model, self.frame, &missing)?;
                    let v = model.latent_dim();
                    for (&i, row) in missing.iter().zip(rows.chunks_exact(v)) {
                        cache.insert(i, row.to_vec());
                    }
                }
                members.iter().flat_map(|i| cache[i].iter().copied()).collect()
            }
        };
        Ok((members, rows))
    }
}

/// Builds the tracking target from the particles of `frame` inside `region`.
pub fn select_target(latents: &mut FrameLatents<'_>, region: &Region) -> Result<TrackTarget> {
    let (members, rows) = latents.region(region)?;
    let positions: Vec<[f64; 3]> = members.iter().map(|&i| *latents.frame().position(i)).collect();
    TrackTarget::build(&positions, &rows, latents.dim(), region)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub similarity: f64,
    /// Mean-shift location computed from this candidate.
    pub next: [f64; 3],
}

/// Candidate histogram at `y` compared with the target; `None` when the cube is
/// empty or every particle sits where the target has no mass.
pub fn evaluate(latents: &mut FrameLatents<'_>, target: &TrackTarget, y: [f64; 3]) -> Result<Option<Candidate>> {
    let region = Region {
        center: y,
        half_extent: target.half_extent,
    };
    let (members, rows) = latents.region(&region)?;
    if members.is_empty() {
        return Ok(None);
    }
    let bins = target.bins_of_latents(&rows);
    let positions: Vec<[f64; 3]> = members.iter().map(|&i| *latents.frame().position(i)).collect();
    let kernel: Vec<f64> = positions.iter().map(|p| region.kernel(p)).collect();
    let Some(p) = histogram(&bins, &kernel, target.num_bins()) else {
        return Ok(None);
    };
    let mut sum = [0.0; 3];
    let mut total = 0.0;
    for (pos, &b) in positions.iter().zip(&bins) {
        let w = if p[b] > 0.0 { (target.hist[b] / p[b]).sqrt() } else { 0.0 };
        total += w;
        for a in 0..3 {
            sum[a] += w * pos[a];
        }
    }
    if !(total > 0.0) {
        return Ok(None);
    }
    Ok(Some(Candidate {
        similarity: bhattacharyya(&target.hist, &p),
        next: sum.map(|s| s / total),
    }))
}

/// One mean-shift update from `y0`: the new center and the similarity at `y0`.
pub fn mean_shift_step(latents: &mut FrameLatents<'_>, target: &TrackTarget, y0: [f64; 3]) -> Result<([f64; 3], f64)> {
    evaluate(latents, target, y0)?.map(|c| (c.next, c.similarity)).ok_or(Error::Stall)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackStep {
    pub t: u64,
    pub center: [f64; 3],
    #[serde(rename = "iters")]
    pub iterations: usize,
    pub similarity: f64,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub stalled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackTrace {
    pub start: Region,
    pub start_frame: u64,
    pub target: TrackTarget,
    /// One entry per frame after the selection frame.
    pub steps: Vec<TrackStep>,
}

impl TrackTrace {
    pub fn to_json_lines(&self) -> String {
        self.steps
            .iter()
            .map(|s| serde_json::to_string(s).expect("track steps serialize") + "\n")
            .collect()
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
}

/// Runs mean shift in one frame starting from `y0`. A proposed move that lowers
/// the similarity is halved until it does not (or becomes negligible).
pub fn track_frame(latents: &mut FrameLatents<'_>, target: &TrackTarget, y0: [f64; 3]) -> Result<TrackStep> {
    let t = latents.frame().id();
    let Some(mut here) = evaluate(latents, target, y0)? else {
        return Ok(TrackStep {
            t,
            center: y0,
            iterations: 0,
            similarity: 0.0,
            converged: false,
            stalled: true,
        });
    };
    let mut y = y0;
    for iter in 1..=MAX_ITERS {
        let mut y1 = here.next;
        let mut there = evaluate(latents, target, y1)?;
        while there.is_none_or(|c| c.similarity < here.similarity) && dist(y, y1) > MIN_HALVED_STEP {
            y1 = [0, 1, 2].map(|a| 0.5 * (y[a] + y1[a]));
            there = evaluate(latents, target, y1)?;
        }
        let Some(there) = there.filter(|c| c.similarity >= here.similarity) else {
            // no uphill move left: this is a local maximum at the current resolution
            return Ok(TrackStep {
                t,
                center: y,
                iterations: iter,
                similarity: here.similarity,
                converged: true,
                stalled: false,
            });
        };
        let shift = dist(y, y1);
        y = y1;
        here = there;
        if shift < SHIFT_TOL {
            return Ok(TrackStep {
                t,
                center: y,
                iterations: iter,
                similarity: here.similarity,
                converged: true,
                stalled: false,
            });
        }
    }
    Ok(TrackStep {
        t,
        center: y,
        iterations: MAX_ITERS,
        similarity: here.similarity,
        converged: false,
        stalled: false,
    })
}

/// Tracks `selection` (in the first frame) through the remaining frames with a
/// fixed target. Each frame starts from the previous center.
pub fn track(latents: &mut [FrameLatents<'_>], selection: &Region) -> Result<TrackTrace> {
    let (first, rest) = latents
        .split_first_mut()
        .ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
    let target = select_target(first, selection)?;
    let mut center = selection.center;
    let mut steps = Vec::with_capacity(rest.len());
    for frame in rest {
        let step = track_frame(frame, &target, center)?;
        center = step.center;
        steps.push(step);
    }
    Ok(TrackTrace {
        start: *selection,
        start_frame: first.frame().id(),
        target,
        steps,
    })
}

/// Convenience wrapper inferring latents on demand with `model`.
pub fn track_with_model(frames: &[ParticleFrame], model: &AutoencoderModel, selection: &Region) -> Result<TrackTrace> {
    let mut latents = frames
        .iter()
        .map(|f| FrameLatents::from_model(f, model))
        .collect::<Result<Vec<_>>>()?;
    track(&mut latents, selection)
}
