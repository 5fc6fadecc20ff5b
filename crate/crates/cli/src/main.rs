//! `geolatent` command-line tool.
//!
//! Exit codes: 0 success, 2 usage error, 1 runtime error. Every output file is
//! written to a temporary sibling and renamed into place.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "geolatent", version, about = "Local latent representations for particle data")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Seed for every random choice (sampling, initialization, k-means, t-SNE).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 0 uses every core. Use 1 for bit-reproducible training.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Log progress to standard error.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    /// Report errors as single-line JSON on standard error.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Convert CSV frames (x,y,z,attr...) to PDS; a directory converts every CSV in it.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset plus ground truth (truth.json).
    Synth {
        #[arg(value_enum)]
        kind: SynthKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        frames: Option<usize>,
        /// Background particles (blob), islands per axis (archetypes) or grid points per axis (sin-field).
        #[arg(long)]
        size: Option<usize>,
        /// Gradient or hot/cold islands (archetypes only).
        #[arg(long, value_enum, default_value_t = ArchetypeArg::Gradient)]
        archetype: ArchetypeArg,
        /// Noise amplitude (sin-field only).
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Choose a patch radius by minimizing leave-one-out cross-validation error.
    EstimateBandwidth {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        fraction: f64,
        #[arg(long, default_value_t = 0.5)]
        upper: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an autoencoder on every frame of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        radius: f64,
        #[arg(long, value_parser = positive)]
        latent_dim: u64,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch losses as JSON lines.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Random search over latent dimensions; keeps the model with the best PSNR.
    SearchLatentDim {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        radius: f64,
        #[arg(long, value_parser = positive)]
        budget: u64,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Encode every particle of one frame.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        frame: FrameArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// One-shot k-means over a latent field.
    Cluster {
        #[arg(long)]
        latents: PathBuf,
        #[arg(long, value_parser = positive)]
        k: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// DBSCAN over particle positions, optionally restricted to one k-means cluster.
    Dbscan {
        #[command(flatten)]
        frame: FrameArgs,
        /// labels.json written by `cluster`.
        #[arg(long, requires = "cluster")]
        labels: Option<PathBuf>,
        #[arg(long)]
        cluster: Option<u32>,
        /// Neighborhood radius in normalized units; defaults to twice the mean NN distance.
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = geolatent::analysis::DEFAULT_MIN_PTS)]
        min_pts: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// t-SNE projection of a value-based sample of a latent field.
    Project {
        #[arg(long)]
        latents: PathBuf,
        #[command(flatten)]
        frame: FrameArgs,
        #[arg(long, default_value_t = 0.01)]
        fraction: f64,
        #[arg(long, default_value_t = 30.0)]
        perplexity: f64,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Follow a selected region through frames by mean shift in latent space.
    Track {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        start: u64,
        #[arg(long)]
        end: u64,
        /// Region center x,y,z in normalized coordinates.
        #[arg(long, value_parser = parse_vec3)]
        center: [f64; 3],
        /// Half edge length of the region cube (or hx,hy,hz).
        #[arg(long, value_parser = parse_extent)]
        half_extent: [f64; 3],
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruction PSNR of a model on one frame.
    Psnr {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        frame: FrameArgs,
        /// Evaluate on a value-based sample instead of every particle.
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = geolatent_service::DEFAULT_HOST)]
        host: String,
        #[arg(long, default_value_t = geolatent_service::DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "sessions")]
        session_dir: PathBuf,
    },
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 50, value_parser = positive)]
    pub epochs: u64,
    #[arg(long, default_value_t = 32, value_parser = positive)]
    pub batch_size: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.01)]
    pub fraction: f64,
    /// Also penalize reconstructed positions.
    #[arg(long)]
    pub with_positions: bool,
}

/// A frame is either `--data DIR --frame ID` (normalized with the dataset's
/// pooled attribute ranges) or `--frame FILE` alone.
#[derive(Args, Debug, Clone)]
pub struct FrameArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub frame: String,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum SynthKind {
    Blob,
    Archetypes,
    SinField,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum ArchetypeArg {
    Gradient,
    HotCold,
}

fn positive(s: &str) -> Result<u64, String> {
    match s.parse::<u64>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_floats(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect()
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let v = parse_floats(s)?;
    v.try_into().map_err(|_| "expected three comma-separated numbers".to_string())
}

fn parse_extent(s: &str) -> Result<[f64; 3], String> {
    let v = parse_floats(s)?;
    match v.as_slice() {
        [h] => Ok([*h; 3]),
        [x, y, z] => Ok([*x, *y, *z]),
        _ => Err("expected one or three comma-separated numbers".into()),
    }
}

/// Errors split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] geolatent::Error),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            _ => "runtime",
        }
    }
}

fn report(err: &CliError, json: bool) {
    if json {
        let line = serde_json::json!({ "error": err.kind(), "message": err.to_string() });
        eprintln!("{line}");
    } else {
        eprintln!("error: {err}");
    }
}

fn main() -> ExitCode {
    let wants_json = std::env::args().any(|a| a == "--json");
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            if wants_json {
                report(&CliError::Usage(e.kind().to_string() + ": " + e.render().to_string().lines().next().unwrap_or("")), true);
            } else {
                let _ = e.print();
            }
            return ExitCode::from(2);
        }
    };
    if cli.global.verbose {
        tracing_subscriber::fmt().with_writer(std::io::stderr).with_target(false).init();
    }
    if cli.global.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.global.threads).build_global() {
            report(&CliError::Other(e.into()), cli.global.json);
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e, cli.global.json);
            ExitCode::from(e.exit_code())
        }
    }
}
