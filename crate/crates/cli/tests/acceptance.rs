//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Run with `cargo test -p geolatent-cli --test acceptance`;
//! pass a substring to run only matching criteria.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use common::{fd_check, oracle, perturbed_model, random_patch, reference};
use geolatent::analysis::{dbscan, kmeans, pca, ClusterTree, ROOT};
use geolatent::autoencoder::net::{self, LossMode, Mode};
use geolatent::autoencoder::{self, dir_weights, infer_latents, psnr, train, LatentField, TrainConfig};
use geolatent::bandwidth::{estimate_radius, BandwidthOptions};
use geolatent::store::{frames_from_raw, neighborhood_mean, query_patch, write_dataset, ParticleFrame, Patch, RawFrame};
use geolatent::synth::{archetypes, blob, sin_field, ArchetypeConfig, ArchetypeKind, BlobConfig, GroundTruth, SinFieldConfig};
use geolatent::tracker::{deviation, track_with_model, Region};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_geolatent");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: [Criterion; 12] = [
        ("gradient_correctness", gradient_correctness),
        ("directional_partition", directional_partition),
        ("forward_oracles", forward_oracles),
        ("patch_query", patch_query),
        ("bandwidth_psnr_ordering", bandwidth_psnr_ordering),
        ("representation_purity", representation_purity),
        ("reconstruction_psnr", reconstruction_psnr),
        ("tracking", tracking),
        ("cluster_tree_fuzz", cluster_tree_fuzz),
        ("clustering_oracles", clustering_oracles),
        ("determinism", determinism),
        ("service_durability", service_durability),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, f) in criteria {
        if filter.as_deref().is_some_and(|s| !name.contains(s)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if result.pass { "PASS" } else { "FAIL" };
        if !result.pass {
            failed += 1;
        }
        println!("{tag} {name} ({:.1}s): {}", start.elapsed().as_secs_f64(), result.detail);
        std::io::stdout().flush().ok();
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

// --- autoencoder ---------------------------------------------------------------

/// Central differences (h = 1e-4) on every parameter block over 20 random
/// patches in five batches, tolerance max(1e-4, 1e-3·|g|).
fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut checked, mut kinks, mut patches_used, mut blocks_seen) = (0, 0, 0, 0);
    let mut failures = Vec::new();
    for batch in 0..5u64 {
        let d = 1 + batch as usize % 3;
        let mut m = perturbed_model(d, 3 + batch as usize, 0.1, 100 + batch);
        let patches: Vec<Patch> = (0..4).map(|k| { let n = 1 + rng.random_range(0..10); random_patch(&mut rng, n, d, 0.1, k % 2 == 0) }).collect();
        patches_used += patches.len();
        let refs: Vec<&Patch> = patches.iter().collect();
        let mode = if batch % 2 == 0 { LossMode::AttributesOnly } else { LossMode::AttributesAndPositions };
        let mut pick_rng = ChaCha8Rng::seed_from_u64(batch);
        let r = fd_check(&mut m, &refs, mode, 1e-4, |_, range| {
            let n = range.len();
            if n <= 24 {
                range.collect()
            } else {
                (0..24).map(|_| range.start + pick_rng.random_range(0..n)).collect()
            }
        });
        blocks_seen = blocks_seen.max(m.layout().param_blocks().len());
        checked += r.checked;
        kinks += r.kinks;
        failures.extend(r.failures);
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && patches_used >= 20 && elapsed < Duration::from_secs(60);
    outcome(
        pass,
        format!(
            "{checked} entries across {blocks_seen} parameter blocks on {patches_used} patches, {} outside tolerance, {kinks} excused ReLU kinks, {:.1}s (limit 60s){}",
            failures.len(),
            elapsed.as_secs_f64(),
            failures.first().map(|f| format!("; first: {f:?}")).unwrap_or_default()
        ),
    )
}

fn directional_partition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let u: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        if u == [0.0; 3] {
            continue;
        }
        let s: f64 = dir_weights(&u).iter().sum();
        worst = worst.max((s - 1.0).abs());
    }
    outcome(worst <= 1e-12, format!("max |Σ w_b − 1| = {worst:.2e} over 1e5 directions (limit 1e-12)"))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn forward_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for case in 0..20 {
        let d = 1 + case % 3;
        let v = 2 + case % 7;
        let mut m = perturbed_model(d, v, 0.1, case as u64);
        for x in m.buffers_mut() {
            *x = rng.random_range(0.1..0.9);
        }
        let patches: Vec<Patch> = (0..3).map(|k| { let n = 1 + rng.random_range(0..9); random_patch(&mut rng, n, d, 0.1, k != 1) }).collect();
        let refs: Vec<&Patch> = patches.iter().collect();
        for (mode, training) in [(Mode::Train, true), (Mode::Infer, false)] {
            let fw = net::forward(&m, &refs, mode);
            let want = oracle::forward(&m, &refs, training);
            worst = worst.max(max_diff(&fw.enc.aggregate, &want.aggregates.concat()));
            worst = worst.max(max_diff(&fw.enc.latents, &want.latents.concat()));
            worst = worst.max(max_diff(&fw.dec.outputs, &want.outputs.concat().concat()));
            cases += 1;
        }
        for p in &patches {
            let want = oracle::forward(&m, &[p], false);
            worst = worst.max(max_diff(&autoencoder::geoconv_forward(&m, p, Mode::Infer), &want.aggregates[0]));
            let y = autoencoder::geodeconv_forward(&m, &want.latents[0], p, Mode::Infer);
            worst = worst.max(max_diff(&y, &want.outputs[0].concat()));
        }
    }
    outcome(worst <= 1e-9, format!("{cases} batched cases + 60 single patches, max deviation {worst:.2e} (limit 1e-9)"))
}

// --- store ---------------------------------------------------------------------

fn patch_query() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    let mut total = 0;
    for f in 0..10u64 {
        let n = rng.random_range(200..3000);
        let scale: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.5..20.0));
        let raw = RawFrame {
            positions: (0..n).map(|_| std::array::from_fn(|a| rng.random_range(0.0..scale[a]))).collect(),
            attributes: (0..n).map(|_| rng.random()).collect(),
            attr_names: vec!["a".into()],
        };
        let frame = ParticleFrame::from_raw(f, &raw, None).unwrap();
        for _ in 0..100 {
            let center: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let r = rng.random_range(0.005..0.3);
            let brute: Vec<usize> = (0..frame.len())
                .filter(|&i| {
                    let p = frame.position(i);
                    (0..3).map(|a| (p[a] - center[a]).powi(2)).sum::<f64>().sqrt() <= r
                })
                .collect();
            let fast = query_patch(&frame, center, r).map(|p| p.members).unwrap_or_default();
            total += 1;
            if fast != brute {
                mismatches += 1;
            }
        }
    }
    outcome(mismatches == 0, format!("{total} queries over 10 frames, {mismatches} membership mismatches"))
}

// --- bandwidth -----------------------------------------------------------------

fn bandwidth_psnr_ordering() -> Outcome {
    let start = Instant::now();
    let ds = sin_field(&SinFieldConfig {
        frames: 1,
        grid: 12,
        noise: 1.0,
        ..Default::default()
    })
    .unwrap();
    let GroundTruth::SinField { correlation_length, .. } = ds.truth else { unreachable!() };
    let frames = frames_from_raw(ds.frames).unwrap();
    let report = estimate_radius(
        &frames,
        &BandwidthOptions {
            sample_fraction: 0.01,
            ..Default::default()
        },
    )
    .unwrap();
    let r = report.r_opt;
    let config = TrainConfig {
        epochs: 100,
        sample_fraction: 0.01,
        ..Default::default()
    };
    let scores: Vec<(f64, f64)> = [r, r / 5.0, 5.0 * r]
        .iter()
        .map(|&radius| {
            let m = train(&frames, &config, radius.min(1.0), 4, &mut |_| {}).unwrap();
            (radius, psnr(&m, &frames[0], None).unwrap())
        })
        .collect();
    let elapsed = start.elapsed();
    let at = scores[0].1;
    let pass = at > scores[1].1 && at > scores[2].1 && elapsed < Duration::from_secs(15 * 60);
    outcome(
        pass,
        format!(
            "L = {correlation_length:.3}, r_opt = {r:.4}; PSNR r_opt {at:.2} dB, r_opt/5 {:.2} dB, 5·r_opt {:.2} dB (need r_opt strictly best); {:.0}s (limit 900s)",
            scores[1].1,
            scores[2].1,
            elapsed.as_secs_f64()
        ),
    )
}

// --- representation quality ----------------------------------------------------

fn representation_purity() -> Outcome {
    let start = Instant::now();
    let ds = archetypes(&ArchetypeConfig {
        kind: ArchetypeKind::Gradient,
        grid: 4,
        ..Default::default()
    })
    .unwrap();
    let GroundTruth::Archetypes { labels, .. } = &ds.truth else { unreachable!() };
    let labels = labels[0].clone();
    let frames = frames_from_raw(ds.frames).unwrap();
    let f = &frames[0];
    let radius = 0.15;
    let keep: Vec<usize> = (0..f.len()).filter(|&i| labels[i] >= 0).collect();
    let truth: Vec<usize> = keep.iter().map(|&i| labels[i] as usize).collect();

    let means: Vec<f64> = keep.iter().flat_map(|&i| neighborhood_mean(f, *f.position(i), radius).unwrap()).collect();
    let baseline = reference::purity(&kmeans(&means, f.attr_dim(), 2, 0).unwrap().labels, &truth);

    let config = TrainConfig {
        epochs: 150,
        sample_fraction: 0.08,
        learning_rate: 5e-3,
        ..Default::default()
    };
    let v = 4;
    let model = train(&frames, &config, radius, v, &mut |_| {}).unwrap();
    let field = infer_latents(&model, f).unwrap();
    let data: Vec<f64> = keep.iter().flat_map(|&i| field.row(i).to_vec()).collect();
    let latent = reference::purity(&kmeans(&data, v, 2, 0).unwrap().labels, &truth);
    let elapsed = start.elapsed();
    let pass = latent >= 0.95 && baseline < 0.70 && elapsed < Duration::from_secs(600);
    outcome(
        pass,
        format!(
            "latent k-means purity {:.1}% (need ≥95%), neighborhood-mean purity {:.1}% (need <70%), {} particles, {:.0}s (limit 600s)",
            100.0 * latent,
            100.0 * baseline,
            keep.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn reconstruction_psnr() -> Outcome {
    let ds = archetypes(&ArchetypeConfig {
        kind: ArchetypeKind::HotCold,
        ..Default::default()
    })
    .unwrap();
    let frames = frames_from_raw(ds.frames).unwrap();
    let config = TrainConfig {
        epochs: 100,
        sample_fraction: 0.05,
        ..Default::default()
    };
    let model = train(&frames, &config, 0.05, 8, &mut |_| {}).unwrap();
    let db = psnr(&model, &frames[0], None).unwrap();
    outcome(db > 30.0, format!("PSNR {db:.2} dB after {} epochs over {} particles (need >30 dB within 200 epochs)", config.epochs, frames[0].len()))
}

// --- tracking ------------------------------------------------------------------

fn tracking() -> Outcome {
    let moving = blob(&BlobConfig {
        background: 8000,
        ..Default::default()
    })
    .unwrap();
    let GroundTruth::Blob {
        centers,
        feature_radius,
        velocity,
    } = moving.truth.clone()
    else {
        unreachable!()
    };
    let frames = frames_from_raw(moving.frames).unwrap();
    let config = TrainConfig {
        epochs: 20,
        sample_fraction: 0.02,
        learning_rate: 5e-3,
        seed: 1,
        ..Default::default()
    };
    let model = train(&frames, &config, 0.06, 4, &mut |_| {}).unwrap();
    let selection = Region::new(centers[0], [feature_radius; 3]).unwrap();
    let trace = track_with_model(&frames, &model, &selection).unwrap();
    let last = trace.steps.last().unwrap();
    let dev = deviation(last.center, centers[trace.steps.len()], feature_radius).unwrap();
    let speed = velocity.iter().map(|v| v * v).sum::<f64>().sqrt();

    let still = blob(&BlobConfig {
        background: 8000,
        velocity: [0.0; 3],
        ..Default::default()
    })
    .unwrap();
    let still_frames = frames_from_raw(still.frames).unwrap();
    let trace_still = track_with_model(&still_frames, &model, &selection).unwrap();
    let drift = trace_still
        .steps
        .iter()
        .map(|s| (0..3).map(|a| (s.center[a] - centers[0][a]).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    outcome(
        trace.steps.len() == 10 && dev < 1.0 && drift < 1e-6,
        format!(
            "velocity {:.2}×half-extent/step, {} steps, final d/r = {dev:.3} (need <1); static drift {drift:.2e} (need <1e-6)",
            speed / feature_radius,
            trace.steps.len()
        ),
    )
}

// --- analysis ------------------------------------------------------------------

fn latent_blobs(per: usize, dim: usize, sep: f64, seed: u64) -> LatentField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latents = (0..2 * per)
        .flat_map(|i| (0..dim).map(move |a| (i, a)))
        .map(|(i, a)| rng.random_range(-1.0..1.0) + if a == 0 { sep * (i % 2) as f64 } else { 0.0 })
        .collect();
    LatentField {
        frame_id: 0,
        latent_dim: dim,
        latents,
        model_digest: [0; 32],
    }
}

fn leaf_partition_ok(t: &ClusterTree, n: usize) -> bool {
    if t.validate().is_err() {
        return false;
    }
    let mut seen = vec![false; n];
    for leaf in t.leaves() {
        for &i in &t.node(leaf).unwrap().members {
            if std::mem::replace(&mut seen[i], true) {
                return false;
            }
        }
    }
    seen.iter().all(|&s| s)
}

fn cluster_tree_fuzz() -> Outcome {
    let f = latent_blobs(30, 3, 3.0, 7);
    let n = f.len();
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let (mut ops, mut restorations, mut violations) = (0, 0, 0);
    for _ in 0..1000 {
        let mut t = ClusterTree::new(&f).unwrap();
        let initial = t.structure_json();
        for _ in 0..rng.random_range(1..15) {
            ops += 1;
            let ids: Vec<u32> = t.nodes().map(|x| x.id).collect();
            let id = ids[rng.random_range(0..ids.len())];
            let before = t.structure_json();
            if rng.random_bool(0.6) {
                match t.split(id, rng.random_range(1..5), rng.random(), &f) {
                    Ok(_) if rng.random_bool(0.3) => {
                        restorations += 1;
                        violations += usize::from(t.revoke(id).is_err() || t.structure_json() != before);
                    }
                    Ok(_) => {}
                    Err(_) => violations += usize::from(t.structure_json() != before),
                }
            } else if t.revoke(id).is_err() {
                violations += usize::from(t.structure_json() != before);
            }
            violations += usize::from(!leaf_partition_ok(&t, n));
        }
        // unwind bottom-up: revoking every split restores the single-root tree
        loop {
            let Some(id) = t
                .nodes()
                .filter(|x| !x.children.is_empty() && x.children.iter().all(|c| t.node(*c).unwrap().children.is_empty()))
                .map(|x| x.id)
                .next()
            else {
                break;
            };
            restorations += 1;
            violations += usize::from(t.revoke(id).is_err() || !leaf_partition_ok(&t, n));
        }
        violations += usize::from(t.structure_json() != initial);
        let back: ClusterTree = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        violations += usize::from(back != t);
    }
    outcome(
        violations == 0,
        format!("1000 sequences, {ops} random operations, {restorations} revokes checked for exact restoration, {violations} invariant violations"),
    )
}

fn clustering_oracles() -> Outcome {
    let mut problems = Vec::new();
    // DBSCAN against the O(M²) reference
    let mut db_cases = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<[f64; 3]> = (0..300).map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0))).collect();
        for (eps, min_pts) in [(0.05, 1), (0.08, 4), (0.1, 8), (0.15, 20)] {
            db_cases += 1;
            if dbscan(&pts, eps, min_pts).unwrap() != reference::dbscan(&pts, eps, min_pts) {
                problems.push(format!("dbscan seed {seed} eps {eps}"));
            }
        }
    }
    // k-means: exhaustive optimum on small clustered sets, Lloyd fixed point on 300 points
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..10u64 {
        let data: Vec<f64> = (0..12)
            .flat_map(|i| [(i % 3) as f64 * 4.0, 0.0])
            .map(|c| c + rng.random_range(-1.0..1.0))
            .collect();
        let best = reference::optimal_inertia(&data, 2, 3);
        let got = kmeans(&data, 2, 3, case).unwrap().inertia;
        if (got - best).abs() > 1e-9 {
            problems.push(format!("kmeans optimum case {case}: {got} vs {best}"));
        }
    }
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 4;
        let data: Vec<f64> = (0..300 * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = kmeans(&data, dim, 2 + seed as usize % 5, seed).unwrap();
        for (i, x) in data.chunks(dim).enumerate() {
            let d: Vec<f64> = r.centroids.chunks(dim).map(|c| reference::sq(x, c)).collect();
            if d.iter().any(|&v| v < d[r.labels[i]] - 1e-12) {
                problems.push(format!("kmeans seed {seed}: point {i} not at nearest centroid"));
                break;
            }
        }
    }
    // PCA against the explicitly formed covariance
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, dim) = (300, 6);
        let data: Vec<f64> = (0..m * dim).map(|i| rng.random_range(-1.0..1.0) * (1 + i % dim) as f64).collect();
        let p = pca(&data, dim, dim).unwrap();
        let mean: Vec<f64> = (0..dim).map(|a| data.iter().skip(a).step_by(dim).sum::<f64>() / m as f64).collect();
        let c: Vec<f64> = (0..dim * dim)
            .map(|k| data.chunks(dim).map(|x| (x[k / dim] - mean[k / dim]) * (x[k % dim] - mean[k % dim])).sum::<f64>() / (m - 1) as f64)
            .collect();
        for k in 0..dim {
            let axis = &p.basis[k * dim..(k + 1) * dim];
            let residual = (0..dim)
                .map(|a| ((0..dim).map(|b| c[a * dim + b] * axis[b]).sum::<f64>() - p.variances[k] * axis[a]).abs())
                .fold(0.0, f64::max);
            if residual > 1e-8 {
                problems.push(format!("pca seed {seed} axis {k}: residual {residual:.2e}"));
            }
        }
    }
    outcome(
        problems.is_empty(),
        format!("{db_cases} DBSCAN, 20 k-means and 10 PCA instances (≤300 points); {} mismatches{}", problems.len(), problems.first().map(|p| format!(": {p}")).unwrap_or_default()),
    )
}

// --- CLI determinism -----------------------------------------------------------

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(BIN).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline(dir: &Path, data: &str) -> Result<BTreeMap<&'static str, Vec<u8>>, String> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    cli(&["--seed", "3", "estimate-bandwidth", "--data", data, "--fraction", "0.01", "--out", &p("bw.json")])?;
    cli(&["--seed", "3", "--threads", "1", "train", "--data", data, "--radius", "0.06", "--latent-dim", "4", "--epochs", "3", "--fraction", "0.02", "--out", &p("model.gae")])?;
    cli(&["infer", "--model", &p("model.gae"), "--data", data, "--frame", "0", "--out", &p("frame_0.lat1")])?;
    cli(&["--seed", "3", "cluster", "--latents", &p("frame_0.lat1"), "--k", "3", "--out", &p("labels.json")])?;
    cli(&["track", "--data", data, "--model", &p("model.gae"), "--start", "0", "--end", "4", "--center", "0.3,0.5,0.5", "--half-extent", "0.1", "--out", &p("trace.jsonl")])?;
    let mut files = BTreeMap::new();
    for name in ["bw.json", "model.gae", "frame_0.lat1", "labels.json", "trace.jsonl"] {
        files.insert(name, std::fs::read(dir.join(name)).map_err(|e| e.to_string())?);
    }
    Ok(files)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let data_s = data.to_string_lossy().into_owned();
    if let Err(e) = cli(&["--seed", "9", "synth", "blob", "--size", "4000", "--frames", "5", "--out", &data_s]) {
        return outcome(false, e);
    }
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|r| {
            let dir = tmp.path().join(r);
            std::fs::create_dir_all(&dir).unwrap();
            pipeline(&dir, &data_s)
        })
        .collect();
    match (&runs[0], &runs[1]) {
        (Ok(a), Ok(b)) => {
            let differing: Vec<&str> = a.keys().filter(|k| a[*k] != b[*k]).copied().collect();
            outcome(
                differing.is_empty(),
                format!("estimate-bandwidth, train (1 thread), infer, cluster, track run twice: {} of {} outputs differ {differing:?}", differing.len(), a.len()),
            )
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, e.clone()),
    }
}

// --- service durability --------------------------------------------------------

struct Server {
    child: Child,
    base: String,
}

impl Server {
    fn start(dir: &Path, port: u16) -> Server {
        let child = Command::new(BIN)
            .args(["serve", "--host", "127.0.0.1", "--port", &port.to_string(), "--session-dir"])
            .arg(dir)
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .expect("spawn server");
        let server = Server {
            child,
            base: format!("http://127.0.0.1:{port}"),
        };
        let http = reqwest::blocking::Client::new();
        for _ in 0..400 {
            if http.get(format!("{}/sessions", server.base)).send().is_ok_and(|r| r.status().is_success()) {
                return server;
            }
            std::thread::sleep(Duration::from_millis(25));
        }
        panic!("server did not come up");
    }

    /// SIGKILL: no shutdown hooks run.
    fn kill(mut self) {
        self.child.kill().ok();
        self.child.wait().ok();
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.child.kill().ok();
        self.child.wait().ok();
    }
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn wait_job(http: &reqwest::blocking::Client, base: &str, job: &Value) -> Value {
    let id = job["job"].as_u64().expect("job id");
    loop {
        let j: Value = http.get(format!("{base}/jobs/{id}")).send().unwrap().json().unwrap();
        if j["state"] == "done" || j["state"] == "failed" {
            return j;
        }
        std::thread::sleep(Duration::from_millis(25));
    }
}

fn service_durability() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let ds = blob(&BlobConfig {
        frames: 2,
        background: 3000,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    write_dataset(&data, &ds.frames).unwrap();
    let sessions: PathBuf = tmp.path().join("sessions");
    let port = free_port();
    let http = reqwest::blocking::Client::new();

    let mut server = Server::start(&sessions, port);
    let base = server.base.clone();
    let created: Value = http.post(format!("{base}/sessions")).json(&json!({ "dataset_dir": data })).send().unwrap().json().unwrap();
    let sid = created["id"].as_str().unwrap().to_string();
    let s = format!("{base}/sessions/{sid}");
    let job: Value = http
        .post(format!("{s}/train"))
        .json(&json!({ "radius": 0.06, "latent_dim": 4, "config": { "epochs": 2, "sample_fraction": 0.02 } }))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(wait_job(&http, &base, &job)["state"], "done");
    for frame in [0, 1] {
        let job: Value = http.post(format!("{s}/infer")).json(&json!({ "frame": frame })).send().unwrap().json().unwrap();
        assert_eq!(wait_job(&http, &base, &job)["state"], "done");
    }

    // acknowledged tree bytes per frame
    let mut expected: BTreeMap<u64, Vec<u8>> = BTreeMap::new();
    for frame in [0u64, 1] {
        expected.insert(frame, http.get(format!("{s}/tree/{frame}")).send().unwrap().bytes().unwrap().to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut acknowledged, mut rejected, mut restarts, mut lost) = (0, 0, 0, 0);
    for _ in 0..40 {
        let frame = rng.random_range(0..2u64);
        let tree: Value = serde_json::from_slice(&expected[&frame]).unwrap();
        let nodes = tree["nodes"].as_array().unwrap();
        let pick = |rng: &mut ChaCha8Rng| nodes[rng.random_range(0..nodes.len())]["id"].as_u64().unwrap();
        let (op, body) = if rng.random_bool(0.6) {
            ("split", json!({ "node": pick(&mut rng), "k": rng.random_range(2..5), "seed": rng.random::<u32>() }))
        } else {
            ("revoke", json!({ "node": pick(&mut rng) }))
        };
        let resp = http.post(format!("{s}/tree/{frame}/{op}")).json(&body).send().unwrap();
        if resp.status().is_success() {
            acknowledged += 1;
            expected.insert(frame, resp.bytes().unwrap().to_vec());
        } else {
            rejected += 1;
        }
        // kill between every pair of calls and verify nothing was lost
        server.kill();
        server = Server::start(&sessions, port);
        restarts += 1;
        for (f, want) in &expected {
            let got = http.get(format!("{s}/tree/{f}")).send().unwrap().bytes().unwrap();
            if got.as_ref() != want.as_slice() {
                lost += 1;
            }
        }
    }
    let root_ok = {
        let p: Value = http.get(format!("{s}/particles/0?node={ROOT}")).send().unwrap().json().unwrap();
        p["count"].as_u64() == Some(ds.frames[0].1.len() as u64)
    };
    drop(server);
    outcome(
        lost == 0 && acknowledged > 0 && root_ok,
        format!("{acknowledged} acknowledged and {rejected} rejected mutations, {restarts} SIGKILL restarts, {lost} lost or altered trees"),
    )
}
