//! The `fdiag` command line: argument parsing, config resolution and
//! dispatch to the engine.

pub mod commands;
pub mod config;
pub mod report;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use config::{Config, Overrides, Precision};
use fdiag::Real;
use report::RunReport;
use std::ffi::OsString;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "fdiag", version, about = "Train, explain and benchmark multi-branch 1-D CNN fault classifiers")]
pub struct Cli {
    /// TOML config; flags below override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub precision: Option<PrecisionArg>,
    /// Dataset container to use instead of the configured source.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PrecisionArg {
    #[value(name = "32")]
    P32,
    #[value(name = "64")]
    P64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate or ingest a dataset and write it as a container.
    GenData,
    /// Train a model and save its checkpoint.
    Train,
    /// Train a student against a frozen teacher.
    Distill {
        #[arg(long)]
        teacher: PathBuf,
    },
    /// Rank channels with three estimators and fuse the rankings.
    SelectChannels {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        overrides: Option<PathBuf>,
    },
    /// Build the attribution evidence chain for one class.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        class: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Run a detector and a fault classifier as a two-stage cascade.
    Cascade {
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        stage2: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Precision and recall of a binary detector over a threshold grid.
    SweepThreshold {
        #[arg(long)]
        model: PathBuf,
    },
    /// Parameter, FLOP and single-thread latency comparison.
    Bench,
    /// Train one model per variant and compare them.
    Ablate {
        #[command(subcommand)]
        study: Study,
    },
}

#[derive(Debug, Subcommand)]
pub enum Study {
    Branches,
    Augment,
    KdGrid {
        /// Existing teacher; otherwise one is trained first.
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    Depth,
    Kernel,
}

impl Command {
    pub fn name(&self) -> String {
        match self {
            Command::GenData => "gen-data".into(),
            Command::Train => "train".into(),
            Command::Distill { .. } => "distill".into(),
            Command::SelectChannels { .. } => "select-channels".into(),
            Command::Explain { .. } => "explain".into(),
            Command::Cascade { .. } => "cascade".into(),
            Command::SweepThreshold { .. } => "sweep-threshold".into(),
            Command::Bench => "bench".into(),
            Command::Ablate { study } => format!(
                "ablate {}",
                match study {
                    Study::Branches => "branches",
                    Study::Augment => "augment",
                    Study::KdGrid { .. } => "kd-grid",
                    Study::Depth => "depth",
                    Study::Kernel => "kernel",
                }
            ),
        }
    }
}

/// Parses `args` and runs the command. Returns the process exit code:
/// 0 on success, 1 on a runtime failure, 2 on a usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

/// The config a command line resolves to.
pub fn resolve_config(cli: &Cli) -> Result<Config> {
    let base = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        precision: cli.precision.map(|p| match p {
            PrecisionArg::P32 => Precision::F32,
            PrecisionArg::P64 => Precision::F64,
        }),
    };
    let mut cfg = base.resolve(&overrides)?;
    if let Some(d) = &cli.data {
        cfg.data.dataset = Some(d.clone());
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let resolved = cfg.to_toml()?;
    print!("{resolved}");
    let out = cfg.run.out.clone();
    std::fs::create_dir_all(&out).with_context(|| format!("creating output directory {}", out.display()))?;
    std::fs::write(out.join("config.toml"), &resolved)?;
    let mut report = RunReport::new(&cli.command.name(), &cfg)?;
    match cfg.run.precision {
        Precision::F32 => dispatch::<f32>(&cli.command, &cfg, &mut report)?,
        Precision::F64 => dispatch::<f64>(&cli.command, &cfg, &mut report)?,
    }
    report.write(&out)?;
    log::info!("report written to {}", out.display());
    Ok(())
}

fn dispatch<R: Real>(cmd: &Command, cfg: &Config, report: &mut RunReport) -> Result<()> {
    use commands as c;
    match cmd {
        Command::GenData => c::gen_data(cfg, report),
        Command::Train => c::train::<R>(cfg, report),
        Command::Distill { teacher } => c::distill::<R>(cfg, teacher, report),
        Command::SelectChannels { model, overrides } => c::select_channels::<R>(cfg, model, overrides.as_deref(), report),
        Command::Explain { model, class, samples } => c::explain::<R>(cfg, model, *class, *samples, report),
        Command::Cascade { stage1, stage2, threshold } => c::cascade::<R>(cfg, stage1, stage2, *threshold, report),
        Command::SweepThreshold { model } => c::sweep_threshold::<R>(cfg, model, report),
        Command::Bench => c::bench::<R>(cfg, report),
        Command::Ablate { study } => match study {
            Study::Branches => c::ablate_branches::<R>(cfg, report),
            Study::Augment => c::ablate_augment::<R>(cfg, report),
            Study::KdGrid { teacher } => c::ablate_kd_grid::<R>(cfg, teacher.as_deref(), report),
            Study::Depth => c::ablate_depth::<R>(cfg, report),
            Study::Kernel => c::ablate_kernel::<R>(cfg, report),
        },
    }
}
