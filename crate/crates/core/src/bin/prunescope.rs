use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use prunescope::experiment::pipeline::VARIANTS;
use prunescope::experiment::{configure_threads, emit_plots, ExperimentConfig, Pipeline};
use prunescope::{Error, Result};

/// Iterative magnitude pruning and loss-landscape analysis.
#[derive(Parser)]
#[command(name = "prunescope", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Artifact directory; falls back to the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the train and test sets.
    GenData(RunArgs),
    /// Dense training: initialization, rewind point and level 0.
    Train(RunArgs),
    /// IMP with weight rewinding through every level.
    Imp(RunArgs),
    /// Train a comparison variant at the final sparsity.
    Variant {
        #[arg(value_enum)]
        name: VariantName,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run one landscape analysis.
    Analyze {
        #[arg(value_enum)]
        kind: Analysis,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Every stage, resuming from the artifact directory.
    Pipeline(RunArgs),
    /// Render SVG figures from an existing artifact directory.
    Plot {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantName {
    OneShot,
    FineTune,
    RandomReinit,
    RandomPrune1,
    RandomPrune2,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Analysis {
    Eigen,
    Radius,
    Interp,
    Surface,
    Geometry,
    Taylor,
    Postprune,
    Summary,
}

fn open(args: &RunArgs) -> Result<Pipeline> {
    let (cfg, base) = match &args.config {
        Some(p) => {
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (ExperimentConfig::load(p)?, base)
        }
        None => (ExperimentConfig::default(), PathBuf::from(".")),
    };
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))?;
    Pipeline::open(cfg, &out, &base)
}

fn run(cli: Cli) -> Result<()> {
    let threads = configure_threads()?;
    log::info!("using {threads} threads");
    match cli.command {
        Command::GenData(a) => open(&a)?.data(),
        Command::Train(a) => {
            let mut p = open(&a)?;
            p.data()?;
            p.dense()
        }
        Command::Imp(a) => {
            let mut p = open(&a)?;
            p.data()?;
            p.imp()
        }
        Command::Variant { name, run } => {
            let mut p = open(&run)?;
            p.data()?;
            match name {
                VariantName::All => p.all_variants(),
                v => {
                    let i = v as usize;
                    p.variant(VARIANTS[i])?;
                    p.write_manifest().map(drop)
                }
            }
        }
        Command::Analyze { kind, run } => {
            let mut p = open(&run)?;
            match kind {
                Analysis::Eigen => p.eigen(),
                Analysis::Radius => p.radius(),
                Analysis::Interp => p.interp(),
                Analysis::Surface => p.surface(),
                Analysis::Geometry => p.geometry(),
                Analysis::Taylor => p.taylor(),
                Analysis::Postprune => p.postprune(),
                Analysis::Summary => p.summary().map(drop),
            }
        }
        Command::Pipeline(a) => {
            let mut p = open(&a)?;
            p.run_all().map(drop)
        }
        Command::Plot { dir } => {
            for f in emit_plots(&dir)? {
                println!("{}", dir.join(f).display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
