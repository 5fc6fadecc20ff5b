//! Value-based importance sampling: rare attribute values are drawn more often.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::frame::ParticleFrame;
use crate::{Error, Result};

/// Total histogram cells targeted by the joint attribute histogram.
const HISTOGRAM_CELLS: usize = 64;
/// Attributes beyond this many are ignored when binning.
const MAX_BINNED_ATTRIBUTES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub frame_id: u64,
    /// Unique particle indices, ascending.
    pub indices: Vec<usize>,
    /// Sampling weight of each selected particle.
    pub weights: Vec<f64>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Every particle of the frame, unit weights.
    pub fn all(frame: &ParticleFrame) -> Self {
        SampleSet {
            frame_id: frame.id(),
            indices: (0..frame.len()).collect(),
            weights: vec![1.0; frame.len()],
        }
    }
}

pub fn bins_per_dim(attr_dim: usize) -> usize {
    // smallest b with b^d' >= cells, i.e. ceil(cells^(1/d'))
    let dims = attr_dim.clamp(1, MAX_BINNED_ATTRIBUTES) as u32;
    (1..).find(|b: &usize| b.pow(dims) >= HISTOGRAM_CELLS).unwrap()
}

/// Joint histogram cell of every particle, plus the cell counts.
pub fn attribute_cells(frame: &ParticleFrame) -> (Vec<usize>, Vec<usize>) {
    let d = frame.attr_dim();
    let used = d.min(MAX_BINNED_ATTRIBUTES);
    let bins = bins_per_dim(d);
    let mut counts = vec![0usize; bins.pow(used as u32)];
    let cells: Vec<usize> = (0..frame.len())
        .map(|i| {
            let row = frame.attribute_row(i);
            let cell = row[..used].iter().fold(0usize, |acc, v| {
                let b = ((v * bins as f64) as usize).min(bins - 1);
                acc * bins + b
            });
            counts[cell] += 1;
            cell
        })
        .collect();
    (cells, counts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Keyed {
    // log of the Efraimidis–Spirakis key u^(1/w)
    log_key: f64,
    index: usize,
}

impl Eq for Keyed {}

impl Ord for Keyed {
    // reversed so BinaryHeap pops the smallest key
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .log_key
            .total_cmp(&self.log_key)
            .then(other.index.cmp(&self.index))
    }
}

impl PartialOrd for Keyed {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Weighted sampling of `k` items without replacement, one pass with
/// exponential jumps (A-ExpJ). Keys are kept in log space since weights can be
/// small enough for `u^(1/w)` to underflow.
pub fn weighted_reservoir(weights: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let k = k.min(weights.len());
    if k == 0 {
        return Vec::new();
    }
    let mut heap: BinaryHeap<Keyed> = BinaryHeap::with_capacity(k);
    for (i, &w) in weights.iter().enumerate().take(k) {
        heap.push(Keyed {
            log_key: open_unit(rng).ln() / w,
            index: i,
        });
    }
    let mut i = k;
    while i < weights.len() {
        let threshold = heap.peek().unwrap().log_key;
        // weight to skip before the next replacement
        let mut jump = open_unit(rng).ln() / threshold;
        while i < weights.len() {
            jump -= weights[i];
            if jump <= 0.0 {
                break;
            }
            i += 1;
        }
        if i == weights.len() {
            break;
        }
        let w = weights[i];
        // key drawn uniformly from (threshold^w, 1)
        let t = (w * threshold).exp();
        let r = t + open_unit(rng) * (1.0 - t);
        heap.pop();
        heap.push(Keyed {
            log_key: r.ln() / w,
            index: i,
        });
        i += 1;
    }
    let mut out: Vec<usize> = heap.into_iter().map(|k| k.index).collect();
    out.sort_unstable();
    out
}

/// Draws `⌈fraction·N⌉` distinct particles with weight inversely proportional
/// to the population of their attribute-histogram cell.
pub fn value_based_sample(frame: &ParticleFrame, fraction: f64, seed: u64) -> Result<SampleSet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("sample fraction {fraction} outside (0,1]")));
    }
    let n = frame.len();
    let k = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let (cells, counts) = attribute_cells(frame);
    // scaled so the mean weight is 1
    let occupied = counts.iter().filter(|&&c| c > 0).count() as f64;
    let weights: Vec<f64> = cells
        .iter()
        .map(|&c| n as f64 / (occupied * counts[c] as f64))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = weighted_reservoir(&weights, k, &mut rng);
    let weights = indices.iter().map(|&i| weights[i]).collect();
    Ok(SampleSet {
        frame_id: frame.id(),
        indices,
        weights,
    })
}
