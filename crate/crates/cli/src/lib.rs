//! Command-line front end: dataset generation, matching, evaluation,
//! parameter sweeps and match visualization.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "scalematch", version, about = "Scale-aware coarse-to-fine image matching")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic homography pairs with ground truth.
    Gen(GenArgs),
    /// Match one image pair, or every scene of a dataset.
    Match(MatchArgs),
    /// Evaluate the matcher on a generated dataset.
    Eval(EvalArgs),
    /// Aggregate evaluation over a range of one parameter.
    Sweep(SweepArgs),
    /// Render matches side by side as a PPM image.
    Viz(VizArgs),
}

/// Tunables shared by every command that runs the matcher. Flags override
/// the config file, which overrides the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra config assignment; repeatable.
    #[arg(long, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub theta_e: Option<f64>,
    #[arg(long)]
    pub theta_m: Option<f64>,
    #[arg(long)]
    pub max_window: Option<usize>,
    /// Coarse matcher to run instead of the configured one (`amnn` or `mnn`).
    #[arg(long, value_name = "MATCHER")]
    pub baseline: Option<String>,
    /// RANSAC seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    pub threads: Option<usize>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v)?;
        }
        let p = &mut cfg.pipeline;
        if let Some(v) = self.temperature {
            p.temperature = v;
        }
        if let Some(v) = self.theta_e {
            p.theta_e = v;
        }
        if let Some(v) = self.theta_m {
            p.theta_m = v;
        }
        if let Some(v) = self.max_window {
            p.max_window = v;
        }
        if let Some(m) = &self.baseline {
            p.matcher = config::parse_matcher(m)?;
        }
        if let Some(v) = self.seed {
            p.ransac.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Profile {
    /// Every scene uses the geometry given by the flags.
    #[default]
    Fixed,
    /// Scale cycles through 1..3 with random rotation, shift and perspective.
    Mixed,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    /// Seed of the first scene; scene k uses seed + k.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, value_enum, default_value_t = Profile::Fixed)]
    pub profile: Profile,
    /// Length scale of A relative to B.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Rotation in degrees.
    #[arg(long, default_value_t = 0.0)]
    pub rotation: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub tx: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub ty: f64,
    /// Perspective terms in units of one image extent.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub px: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub py: f64,
    /// Noise standard deviation on B, in gray levels.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 1.0)]
    pub richness: f64,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct MatchArgs {
    #[arg(long, requires = "b", conflicts_with_all = ["scene", "dataset"])]
    pub a: Option<PathBuf>,
    #[arg(long, requires = "a")]
    pub b: Option<PathBuf>,
    /// Scene directory holding imageA.pgm and imageB.pgm.
    #[arg(long, conflicts_with = "dataset")]
    pub scene: Option<PathBuf>,
    /// Match every scene of a dataset into `out/<scene>/`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Per-scene CSV.
    #[arg(long)]
    pub report: PathBuf,
    /// Aggregate JSON; defaults to the report path with a `.json` extension.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Also run the MNN baseline and add paired columns.
    #[arg(long)]
    pub compare: bool,
    /// Score the outputs of `match --dataset` instead of running the matcher.
    #[arg(long, conflicts_with = "compare")]
    pub matches: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    ThetaE,
    Scale,
    Resolution,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Comma-separated values. Resolution values are the longest image edge.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub values: Vec<f64>,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Pair every run with the MNN baseline.
    #[arg(long)]
    pub compare: bool,
    /// Stop after coarse matching; flow and homography columns are NaN.
    #[arg(long)]
    pub coarse_only: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Args)]
pub struct VizArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Match file written by `match`.
    #[arg(long)]
    pub matches: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Certainty file to render as a heat image.
    #[arg(long, requires = "heat")]
    pub certainty: Option<PathBuf>,
    #[arg(long, requires = "certainty")]
    pub heat: Option<PathBuf>,
}

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(CliError::usage("--threads must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::internal(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen(args) => commands::gen::run(&args),
        Command::Match(args) => commands::matching::run(&args),
        Command::Eval(args) => commands::eval::run(&args),
        Command::Sweep(args) => commands::sweep::run(&args),
        Command::Viz(args) => commands::viz::run(&args),
    }
}
