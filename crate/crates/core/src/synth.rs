//! Synthetic particle datasets with known ground truth.
//!
//! Every generator places particles inside the unit cube and adds two anchor
//! particles at `(0,0,0)` and `(1,1,1)`, so normalized coordinates equal raw
//! coordinates. Anchors are always the last two particles of a frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::store::RawFrame;
use crate::{Error, Result};

const ANCHORS: [[f64; 3]; 2] = [[0.0; 3], [1.0; 3]];

/// Label given to particles that belong to no archetype (anchors).
pub const NO_LABEL: i32 = -1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    /// Feature sphere moving at constant velocity.
    Blob {
        centers: Vec<[f64; 3]>,
        feature_radius: f64,
        velocity: [f64; 3],
    },
    /// Per-particle archetype label for every frame.
    Archetypes { labels: Vec<Vec<i32>>, names: Vec<String> },
    /// `sin(2π x / wavelength)` plus Gaussian noise.
    SinField {
        wavelength: f64,
        correlation_length: f64,
        noise: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub frames: Vec<(u64, RawFrame)>,
    pub truth: GroundTruth,
}

fn push_anchors(positions: &mut Vec<[f64; 3]>, attributes: &mut Vec<f64>, value: &[f64]) {
    for a in ANCHORS {
        positions.push(a);
        attributes.extend_from_slice(value);
    }
}

fn uniform_point(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    std::array::from_fn(|_| rng.random_range(lo..hi))
}

/// Uniform point in the ball of radius `r` around the origin.
fn ball_point(rng: &mut ChaCha8Rng, r: f64) -> [f64; 3] {
    loop {
        let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-r..r));
        if p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= r * r {
            return p;
        }
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobConfig {
    pub frames: usize,
    /// Background particle count (before removing those covered by the blob).
    pub background: usize,
    pub start: [f64; 3],
    pub velocity: [f64; 3],
    pub radius: f64,
    pub seed: u64,
}

impl Default for BlobConfig {
    fn default() -> Self {
        BlobConfig {
            frames: 11,
            background: 20_000,
            start: [0.3, 0.5, 0.5],
            velocity: [0.03, 0.0, 0.0],
            radius: 0.1,
            seed: 0,
        }
    }
}

/// A sphere of hot particles with a radial attribute profile, translating
/// through a static, cold, uniformly random background of equal density.
///
/// Attributes: `temperature` (hot core fading to the rim) and `density`
/// (a smooth background trend). The blob's particles keep their relative
/// arrangement, so the feature's latent signature is the same in every frame.
pub fn blob(cfg: &BlobConfig) -> Result<SynthDataset> {
    if cfg.frames == 0 || !(cfg.radius > 0.0 && cfg.radius < 0.5) {
        return Err(Error::invalid("blob needs ≥1 frame and radius in (0, 0.5)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let background: Vec<[f64; 3]> = (0..cfg.background).map(|_| uniform_point(&mut rng, 0.0, 1.0)).collect();
    let noise: Vec<f64> = (0..cfg.background).map(|_| rng.random_range(-0.02..0.02)).collect();
    let count = (cfg.background as f64 * 4.0 / 3.0 * std::f64::consts::PI * cfg.radius.powi(3)).round() as usize;
    let members: Vec<[f64; 3]> = (0..count.max(1)).map(|_| ball_point(&mut rng, cfg.radius)).collect();
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut centers = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        let c: [f64; 3] = std::array::from_fn(|a| cfg.start[a] + cfg.velocity[a] * t as f64);
        if c.iter().any(|&x| x - cfg.radius < 0.0 || x + cfg.radius > 1.0) {
            return Err(Error::invalid(format!("blob leaves the unit cube at frame {t}")));
        }
        let mut positions = Vec::new();
        let mut attributes = Vec::new();
        for (p, n) in background.iter().zip(&noise) {
            if dist(p, &c) > cfg.radius {
                positions.push(*p);
                attributes.extend([0.1 + n, 0.3 + 0.4 * p[1]]);
            }
        }
        for m in &members {
            let p = [c[0] + m[0], c[1] + m[1], c[2] + m[2]];
            let s = dist(m, &[0.0; 3]) / cfg.radius;
            positions.push(p);
            attributes.extend([0.9 - 0.5 * s * s, 0.3 + 0.4 * p[1]]);
        }
        push_anchors(&mut positions, &mut attributes, &[0.1, 0.5]);
        frames.push((
            t as u64,
            RawFrame {
                positions,
                attributes,
                attr_names: vec!["temperature".into(), "density".into()],
            },
        ));
        centers.push(c);
    }
    Ok(SynthDataset {
        frames,
        truth: GroundTruth::Blob {
            centers,
            feature_radius: cfg.radius,
            velocity: cfg.velocity,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchetypeKind {
    /// Dense islands with a hot attribute vs sparse islands with a cold one.
    HotCold,
    /// Islands of equal density and mean whose attribute ramps along `+x`
    /// or along `−x`.
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeConfig {
    pub kind: ArchetypeKind,
    pub frames: usize,
    /// Islands per axis; islands sit on a regular grid.
    pub grid: usize,
    pub island_radius: f64,
    /// Particles per island (dense islands in `HotCold` get twice as many).
    pub per_island: usize,
    pub seed: u64,
}

impl Default for ArchetypeConfig {
    fn default() -> Self {
        ArchetypeConfig {
            kind: ArchetypeKind::Gradient,
            frames: 1,
            grid: 5,
            island_radius: 0.04,
            per_island: 30,
            seed: 0,
        }
    }
}

/// Well-separated spherical islands of two archetypes in a checkerboard layout.
/// Label of every island particle is its archetype (0 or 1).
pub fn archetypes(cfg: &ArchetypeConfig) -> Result<SynthDataset> {
    if cfg.frames == 0 || cfg.grid == 0 || cfg.per_island == 0 {
        return Err(Error::invalid("archetypes need ≥1 frame, grid and island size"));
    }
    let spacing = 1.0 / cfg.grid as f64;
    if !(cfg.island_radius > 0.0 && 2.0 * cfg.island_radius < spacing) {
        return Err(Error::invalid("islands overlap: need 2·island_radius < 1/grid"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut frames = Vec::new();
    let mut labels = Vec::new();
    for t in 0..cfg.frames {
        let mut positions = Vec::new();
        let mut attributes = Vec::new();
        let mut lab = Vec::new();
        for i in 0..cfg.grid {
            for j in 0..cfg.grid {
                for k in 0..cfg.grid {
                    let c = [i, j, k].map(|v| (v as f64 + 0.5) * spacing);
                    let label = ((i + j + k) % 2) as i32;
                    let n = match (cfg.kind, label) {
                        (ArchetypeKind::HotCold, 0) => 2 * cfg.per_island,
                        _ => cfg.per_island,
                    };
                    for _ in 0..n {
                        let o = ball_point(&mut rng, cfg.island_radius);
                        let value = match cfg.kind {
                            ArchetypeKind::HotCold => {
                                if label == 0 {
                                    0.8
                                } else {
                                    0.2
                                }
                            }
                            ArchetypeKind::Gradient => {
                                let s = if label == 0 { 1.0 } else { -1.0 };
                                0.5 + 0.4 * s * o[0] / cfg.island_radius
                            }
                        };
                        positions.push([c[0] + o[0], c[1] + o[1], c[2] + o[2]]);
                        attributes.push(value);
                        lab.push(label);
                    }
                }
            }
        }
        push_anchors(&mut positions, &mut attributes, &[0.5]);
        lab.extend([NO_LABEL, NO_LABEL]);
        frames.push((
            t as u64,
            RawFrame {
                positions,
                attributes,
                attr_names: vec!["value".into()],
            },
        ));
        labels.push(lab);
    }
    let names = match cfg.kind {
        ArchetypeKind::HotCold => vec!["dense_hot".into(), "sparse_cold".into()],
        ArchetypeKind::Gradient => vec!["ramp_plus_x".into(), "ramp_minus_x".into()],
    };
    Ok(SynthDataset {
        frames,
        truth: GroundTruth::Archetypes { labels, names },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinFieldConfig {
    pub frames: usize,
    /// Grid points per axis before jitter.
    pub grid: usize,
    pub wavelength: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SinFieldConfig {
    fn default() -> Self {
        SinFieldConfig {
            frames: 1,
            grid: 20,
            wavelength: 1.0,
            noise: 0.1,
            seed: 0,
        }
    }
}

/// Jittered grid carrying `sin(2π x / λ) + N(0, σ²)`.
///
/// The reported correlation length is `λ/4`, the distance over which the
/// field moves from a zero crossing to an extremum.
pub fn sin_field(cfg: &SinFieldConfig) -> Result<SynthDataset> {
    if cfg.frames == 0 || cfg.grid < 2 || !(cfg.wavelength > 0.0) || !(cfg.noise >= 0.0) {
        return Err(Error::invalid("sin field needs ≥1 frame, grid ≥ 2, positive wavelength"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).unwrap();
    let h = 1.0 / cfg.grid as f64;
    let mut frames = Vec::new();
    for t in 0..cfg.frames {
        let mut positions = Vec::new();
        let mut attributes = Vec::new();
        for i in 0..cfg.grid {
            for j in 0..cfg.grid {
                for k in 0..cfg.grid {
                    let p: [f64; 3] = std::array::from_fn(|a| {
                        let idx = [i, j, k][a] as f64;
                        (idx + 0.5 + rng.random_range(-0.3..0.3)) * h
                    });
                    let noise = if cfg.noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                    positions.push(p);
                    attributes.push((2.0 * std::f64::consts::PI * p[0] / cfg.wavelength).sin() + noise);
                }
            }
        }
        push_anchors(&mut positions, &mut attributes, &[0.0]);
        frames.push((
            t as u64,
            RawFrame {
                positions,
                attributes,
                attr_names: vec!["value".into()],
            },
        ));
    }
    Ok(SynthDataset {
        frames,
        truth: GroundTruth::SinField {
            wavelength: cfg.wavelength,
            correlation_length: cfg.wavelength / 4.0,
            noise: cfg.noise,
        },
    })
}
