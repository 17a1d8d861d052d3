use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crowd_rom::pipeline::{Pipeline, PipelineConfig, PipelineOptions, StageReport};
use crowd_rom::Error;

#[derive(Parser)]
#[command(name = "crowd-rom", version, about = "Reduced-order models for crowd flow around an obstacle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Root directory for stage outputs.
    #[arg(long, default_value = "stages")]
    stage_dir: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Recompute even if outputs are up to date.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the crowd simulations for every split.
    Simulate(Common),
    /// Subsample training snapshots, fit POD and diffusion maps, write the baseline report.
    BuildManifold(Common),
    /// Fit latent autoregressive models.
    TrainRom(Common),
    /// Forecast held-out runs and score them.
    ForecastEvaluate(Common),
    /// Write plot data for one artifact.
    Export {
        #[command(flatten)]
        common: Common,
        /// Artifact id, e.g. snapshot:3:100, latent:dmaps_d10:3, errors:test:pod_d14, spectra.
        #[arg(long)]
        what: String,
    },
}

fn print_report(r: &StageReport) {
    if r.skipped {
        println!("{}: up to date", r.stage);
        return;
    }
    for n in &r.notes {
        println!("{}: {n}", r.stage);
    }
    for f in &r.failures {
        eprintln!("{}: failed: {f}", r.stage);
    }
}

fn exit_for(e: &Error) -> ExitCode {
    match e {
        Error::Config(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, what) = match cli.command {
        Command::Simulate(ref c)
        | Command::BuildManifold(ref c)
        | Command::TrainRom(ref c)
        | Command::ForecastEvaluate(ref c) => (c, None),
        Command::Export { ref common, ref what } => (common, Some(what.clone())),
    };
    let config = match PipelineConfig::load(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let options = PipelineOptions {
        workers: common.workers,
        force: common.force,
    };
    let pipeline = match Pipeline::new(config, &common.stage_dir, options) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_for(&e);
        }
    };
    let result = match cli.command {
        Command::Simulate(_) => pipeline.simulate(),
        Command::BuildManifold(_) => pipeline.build_manifold(),
        Command::TrainRom(_) => pipeline.train_rom(),
        Command::ForecastEvaluate(_) => pipeline.forecast_evaluate(),
        Command::Export { .. } => match pipeline.export(what.as_deref().unwrap_or_default()) {
            Ok(paths) => {
                for p in paths {
                    println!("{}", p.display());
                }
                return ExitCode::SUCCESS;
            }
            Err(e) => {
                eprintln!("error: {e}");
                return exit_for(&e);
            }
        },
    };
    match result {
        Ok(report) => {
            print_report(&report);
            if report.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}
