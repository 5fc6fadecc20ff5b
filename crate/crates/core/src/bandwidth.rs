//! Patch radius selection by least-squares cross-validation of a
//! Nadaraya–Watson estimator that uses the patch distance kernel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::store::{self, ParticleFrame, SampleSet};
use crate::{Error, Result};

/// Distance kernel `(r − ‖p − q‖)²` inside the radius, zero outside.
#[inline]
pub fn distance_kernel(dist: f64, radius: f64) -> f64 {
    if dist < radius {
        let t = radius - dist;
        t * t
    } else {
        0.0
    }
}

/// Kernel-weighted mean of the attributes around `p`, optionally leaving out
/// one particle.
pub fn nw_estimate(
    frame: &ParticleFrame,
    p: [f64; 3],
    radius: f64,
    exclude: Option<usize>,
) -> Result<Vec<f64>> {
    let members = frame.index().within_radius(&p, radius);
    let d = frame.attr_dim();
    let mut weights = Vec::with_capacity(members.len());
    let mut used = Vec::with_capacity(members.len());
    for &q in &members {
        if Some(q) == exclude {
            continue;
        }
        let w = distance_kernel(store::kdtree::dist2(frame.position(q), &p).sqrt(), radius);
        if w > 0.0 {
            weights.push(w);
            used.push(q);
        }
    }
    if used.is_empty() {
        return Err(Error::UndefinedEstimate);
    }
    // accumulate deviations from the first neighbor so constant fields are exact
    let reference = frame.attribute_row(used[0]).to_vec();
    let mut acc = vec![0.0; d];
    let mut total = 0.0;
    for (&q, &w) in used.iter().zip(&weights) {
        total += w;
        for (a, (x, r)) in acc.iter_mut().zip(frame.attribute_row(q).iter().zip(&reference)) {
            *a += w * (x - r);
        }
    }
    Ok(reference
        .iter()
        .zip(&acc)
        .map(|(r, a)| r + a / total)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LscvScore {
    pub value: f64,
    /// Sample points whose leave-one-out neighborhood was empty.
    pub skipped: usize,
}

/// Leave-one-out squared prediction error at radius `r`, averaged over each
/// frame's sample points and then over frames.
pub fn lscv(frames: &[ParticleFrame], samples: &[SampleSet], r: f64) -> Result<LscvScore> {
    if frames.len() != samples.len() {
        return Err(Error::DimensionMismatch {
            expected: frames.len(),
            got: samples.len(),
        });
    }
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::invalid(format!("bandwidth {r} outside (0,1)")));
    }
    let mut frame_scores = Vec::with_capacity(frames.len());
    let mut skipped = 0;
    for (frame, sample) in frames.iter().zip(samples) {
        if sample.is_empty() {
            return Err(Error::invalid(format!("empty sample for frame {}", frame.id())));
        }
        let errs: Vec<Option<f64>> = sample
            .indices
            .par_iter()
            .map(|&i| match nw_estimate(frame, *frame.position(i), r, Some(i)) {
                Ok(est) => Some(
                    frame
                        .attribute_row(i)
                        .iter()
                        .zip(&est)
                        .map(|(x, m)| (x - m) * (x - m))
                        .sum(),
                ),
                Err(_) => None,
            })
            .collect();
        let mut sum = 0.0;
        let mut count = 0usize;
        for e in errs {
            match e {
                Some(v) => {
                    sum += v;
                    count += 1;
                }
                None => skipped += 1,
            }
        }
        if count > 0 {
            frame_scores.push(sum / count as f64);
        }
    }
    if frame_scores.is_empty() {
        return Err(Error::NoValidPoints { skipped });
    }
    Ok(LscvScore {
        value: frame_scores.iter().sum::<f64>() / frame_scores.len() as f64,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenResult {
    pub x: f64,
    pub fx: f64,
    pub evaluations: usize,
    /// Every `(x, f(x))` evaluated, in order.
    pub probes: Vec<(f64, f64)>,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section minimization of a unimodal `f` on `[lo, hi]`.
///
/// Each step shrinks the bracket by `1/φ` and reuses one interior evaluation.
/// Stops once the bracket is no wider than `tol` or after `max_iter` steps, and
/// returns the best point evaluated (smallest `x` among ties).
pub fn golden_section_min<F>(mut f: F, lo: f64, hi: f64, tol: f64, max_iter: usize) -> Result<GoldenResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(lo < hi) {
        return Err(Error::invalid(format!("empty bracket [{lo}, {hi}]")));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance {tol} must be positive")));
    }
    let mut probes = Vec::new();
    let mut eval = |x: f64, probes: &mut Vec<(f64, f64)>| -> Result<f64> {
        let v = f(x)?;
        if !v.is_finite() {
            return Err(Error::NonFinite { x, value: v });
        }
        probes.push((x, v));
        Ok(v)
    };
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = eval(x1, &mut probes)?;
    let mut f2 = eval(x2, &mut probes)?;
    let mut iter = 0;
    while b - a > tol && iter < max_iter {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = eval(x1, &mut probes)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = eval(x2, &mut probes)?;
        }
        iter += 1;
    }
    let (x, fx) = best_probe(&probes);
    Ok(GoldenResult {
        x,
        fx,
        evaluations: probes.len(),
        probes,
    })
}

fn best_probe(probes: &[(f64, f64)]) -> (f64, f64) {
    *probes
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)))
        .expect("at least one probe")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthOptions {
    pub sample_fraction: f64,
    pub seed: u64,
    /// Number of equally spaced radii probed before golden-section refinement.
    pub coarse_probes: usize,
    pub upper: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BandwidthOptions {
    fn default() -> Self {
        BandwidthOptions {
            sample_fraction: 0.01,
            seed: 0,
            coarse_probes: 8,
            upper: 0.5,
            tol: 1e-3,
            max_iter: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthReport {
    pub r_opt: f64,
    pub lscv_opt: f64,
    pub r_floor: f64,
    /// `(r, LSCV(r))` for every radius evaluated, in evaluation order.
    pub lscv_curve: Vec<(f64, f64)>,
    /// Skipped sample points per curve entry.
    pub skip_counts: Vec<usize>,
    pub samples_per_frame: usize,
    pub frames_used: Vec<u64>,
}

/// Picks the patch radius minimizing frame-averaged LSCV.
///
/// The search range is `[2 × median NN distance, upper]`: a coarse sweep of
/// `coarse_probes` radii locates the basin, then golden-section search refines
/// inside the bracket around the best coarse probe.
pub fn estimate_radius(frames: &[ParticleFrame], opts: &BandwidthOptions) -> Result<BandwidthReport> {
    if frames.is_empty() {
        return Err(Error::invalid("no frames"));
    }
    if opts.coarse_probes < 2 {
        return Err(Error::invalid("need at least two coarse probes"));
    }
    let samples = store::sample_frames(frames, opts.sample_fraction, opts.seed)?;
    let mut nn = Vec::new();
    for (f, s) in frames.iter().zip(&samples) {
        if let Some(d) = store::nn_distances(f, Some(&s.indices)) {
            nn.extend(d);
        }
    }
    let r_floor = (2.0 * store::median(&mut nn)).max(1e-6);
    if r_floor >= opts.upper {
        return Err(Error::invalid(format!(
            "particles too sparse: radius floor {r_floor} exceeds upper bound {}",
            opts.upper
        )));
    }

    let mut curve = Vec::new();
    let mut skips = Vec::new();
    let mut objective = |r: f64| -> Result<f64> {
        let s = lscv(frames, &samples, r)?;
        curve.push((r, s.value));
        skips.push(s.skipped);
        Ok(s.value)
    };

    let step = (opts.upper - r_floor) / (opts.coarse_probes - 1) as f64;
    let grid: Vec<f64> = (0..opts.coarse_probes)
        .map(|k| if k + 1 == opts.coarse_probes { opts.upper } else { r_floor + step * k as f64 })
        .collect();
    let mut coarse = Vec::with_capacity(grid.len());
    for &r in &grid {
        let v = objective(r)?;
        if !v.is_finite() {
            return Err(Error::NonFinite { x: r, value: v });
        }
        coarse.push((r, v));
    }
    let best = coarse
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.0.cmp(&b.0)))
        .unwrap()
        .0;
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];
    golden_section_min(&mut objective, lo, hi, opts.tol, opts.max_iter)?;

    let (r_opt, lscv_opt) = best_probe(&curve);
    Ok(BandwidthReport {
        r_opt,
        lscv_opt,
        r_floor,
        lscv_curve: curve,
        skip_counts: skips,
        samples_per_frame: samples.iter().map(SampleSet::len).max().unwrap_or(0),
        frames_used: frames.iter().map(ParticleFrame::id).collect(),
    })
}
