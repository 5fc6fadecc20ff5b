use std::path::Path;

use anyhow::Context;
use geolatent::analysis::{dbscan, default_eps, kmeans, project_tsne, TsneParams, NOISE};
use geolatent::autoencoder::{infer_latents, psnr, random_search_latent_dim, train, AutoencoderModel, LatentField, LossMode, TrainConfig};
use geolatent::bandwidth::{estimate_radius, BandwidthOptions};
use geolatent::io::write_atomic;
use geolatent::store::frame::{frame_file_name, read_raw};
use geolatent::store::{load_dataset, load_frame, value_based_sample, write_dataset, write_pds, FrameFormat, ParticleFrame};
use geolatent::synth::{archetypes, blob, sin_field, ArchetypeConfig, ArchetypeKind, BlobConfig, SinFieldConfig};
use geolatent::tracker::{track_with_model, Region};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::{ArchetypeArg, Cli, CliError, Command, FrameArgs, SynthKind, TrainArgs};

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).context("serializing output")?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    Ok(())
}

fn print_json(value: serde_json::Value) {
    println!("{value}");
}

fn check_fraction(name: &str, f: f64) -> Result<()> {
    if f > 0.0 && f <= 1.0 {
        Ok(())
    } else {
        Err(usage(format!("--{name} must be in (0, 1], got {f}")))
    }
}

fn check_radius(r: f64) -> Result<()> {
    if r > 0.0 && r <= 1.0 {
        Ok(())
    } else {
        Err(usage(format!("--radius must be in (0, 1], got {r}")))
    }
}

fn load_frame_arg(args: &FrameArgs) -> Result<ParticleFrame> {
    match &args.data {
        Some(dir) => {
            let id: u64 = args
                .frame
                .parse()
                .map_err(|_| usage(format!("with --data, --frame takes a frame number, got {:?}", args.frame)))?;
            let frames = load_dataset(dir)?;
            frames
                .into_iter()
                .find(|f| f.id() == id)
                .ok_or_else(|| usage(format!("frame {id} not found in {}", dir.display())))
        }
        None => {
            let path = Path::new(&args.frame);
            let format = FrameFormat::from_path(path).ok_or_else(|| usage(format!("{}: expected a .pds or .csv file", path.display())))?;
            Ok(load_frame(path, format)?)
        }
    }
}

fn load_latents(path: &Path, frame_id: u64) -> Result<LatentField> {
    Ok(LatentField::load(path, frame_id)?)
}

/// `frame_<n>` file stems name their frame; anything else is frame 0.
fn frame_id_from_name(path: &Path) -> u64 {
    path.file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.strip_prefix("frame_"))
        .and_then(|s| s.split(|c: char| !c.is_ascii_digit()).next())
        .and_then(|s| s.parse().ok())
        .unwrap_or(0)
}

fn train_config(args: &TrainArgs, seed: u64) -> Result<TrainConfig> {
    let config = TrainConfig {
        epochs: args.epochs as usize,
        batch_size: args.batch_size as usize,
        learning_rate: args.learning_rate,
        sample_fraction: args.fraction,
        loss_mode: if args.with_positions {
            LossMode::AttributesAndPositions
        } else {
            LossMode::AttributesOnly
        },
        seed,
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

#[derive(Serialize, Deserialize)]
struct ClusterOutput {
    frame_id: u64,
    k: usize,
    seed: u64,
    inertia: f64,
    iterations: usize,
    centroids: Vec<f64>,
    labels: Vec<usize>,
}

pub fn run(cli: &Cli) -> Result<()> {
    let seed = cli.global.seed;
    match &cli.command {
        Command::Convert { input, out } => convert(input, out),

        Command::Synth {
            kind,
            out,
            frames,
            size,
            archetype,
            noise,
        } => {
            let (ds, config) = match kind {
                SynthKind::Blob => {
                    let mut c = BlobConfig { seed, ..Default::default() };
                    c.frames = frames.unwrap_or(c.frames);
                    c.background = size.unwrap_or(c.background);
                    (blob(&c)?, serde_json::to_value(&c))
                }
                SynthKind::Archetypes => {
                    let mut c = ArchetypeConfig {
                        seed,
                        kind: match archetype {
                            ArchetypeArg::Gradient => ArchetypeKind::Gradient,
                            ArchetypeArg::HotCold => ArchetypeKind::HotCold,
                        },
                        ..Default::default()
                    };
                    c.frames = frames.unwrap_or(c.frames);
                    c.grid = size.unwrap_or(c.grid);
                    (archetypes(&c)?, serde_json::to_value(&c))
                }
                SynthKind::SinField => {
                    let mut c = SinFieldConfig { seed, ..Default::default() };
                    c.frames = frames.unwrap_or(c.frames);
                    c.grid = size.unwrap_or(c.grid);
                    c.noise = noise.unwrap_or(c.noise);
                    (sin_field(&c)?, serde_json::to_value(&c))
                }
            };
            write_dataset(out, &ds.frames)?;
            let config = config.context("serializing config")?;
            write_json(&out.join("truth.json"), &json!({ "config": config, "truth": ds.truth }))?;
            print_json(json!({ "frames": ds.frames.len(), "particles": ds.frames[0].1.len() }));
            Ok(())
        }

        Command::EstimateBandwidth { data, fraction, upper, out } => {
            check_fraction("fraction", *fraction)?;
            let frames = load_dataset(data)?;
            let opts = BandwidthOptions {
                sample_fraction: *fraction,
                seed,
                upper: *upper,
                ..Default::default()
            };
            let report = estimate_radius(&frames, &opts)?;
            write_json(out, &report)?;
            print_json(json!({ "r_opt": report.r_opt, "lscv_opt": report.lscv_opt, "r_floor": report.r_floor }));
            Ok(())
        }

        Command::Train {
            data,
            radius,
            latent_dim,
            train: args,
            out,
            log,
        } => {
            check_radius(*radius)?;
            let config = train_config(args, seed)?;
            let frames = load_dataset(data)?;
            let mut lines = String::new();
            let model = train(&frames, &config, *radius, *latent_dim as usize, &mut |e| {
                tracing::info!(epoch = e.epoch, frame = e.frame_id, loss = e.mean_loss, "epoch");
                lines.push_str(&serde_json::to_string(e).expect("epoch stats serialize"));
                lines.push('\n');
            })?;
            model.save(out)?;
            if let Some(log) = log {
                write_atomic(log, lines.as_bytes())?;
            }
            print_json(json!({ "digest": model.digest_hex(), "params": model.params().len() }));
            Ok(())
        }

        Command::SearchLatentDim {
            data,
            radius,
            budget,
            train: args,
            out,
            report,
        } => {
            check_radius(*radius)?;
            let config = train_config(args, seed)?;
            let frames = load_dataset(data)?;
            let (rep, model) = random_search_latent_dim(&frames, *radius, *budget as usize, &config)?;
            if let Some(out) = out {
                model.save(out)?;
            }
            match report {
                Some(path) => write_json(path, &rep)?,
                None => println!("{}", serde_json::to_string(&rep).context("serializing report")?),
            }
            Ok(())
        }

        Command::Infer { model, frame, out } => {
            let model = AutoencoderModel::load(model)?;
            let frame = load_frame_arg(frame)?;
            let field = infer_latents(&model, &frame)?;
            field.save(out)?;
            print_json(json!({ "frame": frame.id(), "particles": field.len(), "latent_dim": field.latent_dim }));
            Ok(())
        }

        Command::Cluster { latents, k, out } => {
            let field = load_latents(latents, frame_id_from_name(latents))?;
            let km = kmeans(&field.latents, field.latent_dim, *k as usize, seed)?;
            let output = ClusterOutput {
                frame_id: field.frame_id,
                k: *k as usize,
                seed,
                inertia: km.inertia,
                iterations: km.iterations,
                centroids: km.centroids,
                labels: km.labels,
            };
            write_json(out, &output)?;
            print_json(json!({ "k": k, "inertia": output.inertia, "iterations": output.iterations }));
            Ok(())
        }

        Command::Dbscan {
            frame,
            labels,
            cluster,
            eps,
            min_pts,
            out,
        } => {
            let frame = load_frame_arg(frame)?;
            let indices: Vec<usize> = match (labels, cluster) {
                (Some(path), Some(c)) => {
                    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    let labels: ClusterOutput = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                    if labels.labels.len() != frame.len() {
                        return Err(usage(format!("{} has {} labels for {} particles", path.display(), labels.labels.len(), frame.len())));
                    }
                    (0..frame.len()).filter(|&i| labels.labels[i] == *c as usize).collect()
                }
                (None, Some(_)) => return Err(usage("--cluster requires --labels")),
                _ => (0..frame.len()).collect(),
            };
            let positions: Vec<[f64; 3]> = indices.iter().map(|&i| *frame.position(i)).collect();
            let eps = match eps {
                Some(e) => *e,
                None => default_eps(&positions)?,
            };
            let labels = dbscan(&positions, eps, *min_pts)?;
            let clusters = labels.iter().copied().max().map_or(0, |m| (m + 1).max(0)) as usize;
            let noise = labels.iter().filter(|&&l| l == NOISE).count();
            write_json(
                out,
                &json!({ "frame_id": frame.id(), "eps": eps, "min_pts": min_pts, "clusters": clusters, "noise": noise, "indices": indices, "labels": labels }),
            )?;
            print_json(json!({ "clusters": clusters, "noise": noise, "eps": eps }));
            Ok(())
        }

        Command::Project {
            latents,
            frame,
            fraction,
            perplexity,
            iterations,
            out,
        } => {
            check_fraction("fraction", *fraction)?;
            let frame = load_frame_arg(frame)?;
            let field = load_latents(latents, frame.id())?;
            if field.len() != frame.len() {
                return Err(usage(format!("latents cover {} particles but the frame has {}", field.len(), frame.len())));
            }
            let sample = value_based_sample(&frame, *fraction, seed)?;
            let params = TsneParams {
                perplexity: *perplexity,
                iterations: *iterations,
                seed,
            };
            let proj = project_tsne(&field, &sample, &params)?;
            write_json(out, &proj)?;
            print_json(json!({ "points": proj.indices.len() }));
            Ok(())
        }

        Command::Track {
            data,
            model,
            start,
            end,
            center,
            half_extent,
            out,
        } => {
            if end <= start {
                return Err(usage(format!("--end ({end}) must be after --start ({start})")));
            }
            let region = Region::new(*center, *half_extent).map_err(|e| usage(e.to_string()))?;
            let model = AutoencoderModel::load(model)?;
            let frames = load_dataset(data)?;
            let pos = |id: u64| frames.iter().position(|f| f.id() == id).ok_or_else(|| usage(format!("frame {id} not in dataset")));
            let (a, b) = (pos(*start)?, pos(*end)?);
            let trace = track_with_model(&frames[a..=b], &model, &region)?;
            write_atomic(out, trace.to_json_lines().as_bytes())?;
            let last = trace.steps.last().map(|s| s.center);
            print_json(json!({ "steps": trace.steps.len(), "final_center": last }));
            Ok(())
        }

        Command::Psnr { model, frame, fraction } => {
            let model = AutoencoderModel::load(model)?;
            let frame = load_frame_arg(frame)?;
            let sample = match fraction {
                Some(f) => {
                    check_fraction("fraction", *f)?;
                    Some(value_based_sample(&frame, *f, seed)?)
                }
                None => None,
            };
            let db = psnr(&model, &frame, sample.as_ref())?;
            let evaluated = sample.as_ref().map_or(frame.len(), |s| s.len());
            print_json(json!({ "frame": frame.id(), "psnr": db, "particles": evaluated }));
            Ok(())
        }

        Command::Serve { host, port, session_dir } => {
            let addr: std::net::SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| usage(format!("bad bind address {host}:{port}: {e}")))?;
            let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
            rt.block_on(geolatent_service::serve(addr, session_dir.clone()))
                .with_context(|| format!("serving on {addr}"))?;
            Ok(())
        }
    }
}

fn convert(input: &Path, out: &Path) -> Result<()> {
    if input.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(input)
            .with_context(|| format!("reading {}", input.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| FrameFormat::from_path(p) == Some(FrameFormat::Csv))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(usage(format!("no .csv files in {}", input.display())));
        }
        let named = files.iter().all(|p| p.file_stem().and_then(|s| s.to_str()).is_some_and(|s| s.starts_with("frame_")));
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        for (k, path) in files.iter().enumerate() {
            let id = if named { frame_id_from_name(path) } else { k as u64 };
            let raw = read_raw(path, FrameFormat::Csv)?;
            write_pds(&out.join(frame_file_name(id)), &raw)?;
        }
        print_json(json!({ "frames": files.len() }));
    } else {
        let raw = read_raw(input, FrameFormat::Csv)?;
        write_pds(out, &raw)?;
        print_json(json!({ "particles": raw.len(), "attributes": raw.attr_names }));
    }
    Ok(())
}
