//! `ewel` — the Euler weak-error laboratory CLI.
//!
//! Exit codes: 0 ok, 1 acceptance-threshold miss, 2 config error,
//! 3 numerical fault.

use clap::{Parser, Subcommand};
use ewel_lab::config::{model_catalog, ExperimentConfig};
use ewel_lab::error::LabError;
use ewel_lab::report::read_sweep_csv;
use ewel_lab::{effective_seed, run_experiment};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "ewel", version, about = "Euler weak-error laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its artifacts.
    Run {
        config: PathBuf,
        /// Output directory (default: the config's output_dir or "out/<name>").
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker count; results are independent of it.
        #[arg(long, default_value_t = default_jobs())]
        jobs: usize,
        /// Record wall-clock timestamps in the manifest (omitted by default
        /// so reruns are byte-identical).
        #[arg(long)]
        timestamps: bool,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
    /// List the built-in coefficient models.
    ListModels,
    /// Re-fit and plot an existing sweep CSV.
    Plot {
        csv: PathBuf,
        #[arg(long, default_value = "plot.svg")]
        out: PathBuf,
    },
}

fn default_jobs() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32, LabError> {
    match cli.command {
        Command::Run { config, out, jobs, timestamps } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            let env_seed = std::env::var("EWEL_SEED").ok();
            cfg.experiment.seed = effective_seed(cfg.experiment.seed, env_seed.as_deref())?;
            let out_dir = out
                .or_else(|| cfg.experiment.output_dir.clone().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from(format!("out/{}", cfg.experiment.name)));
            let outcome = run_experiment(&cfg, jobs, &out_dir, timestamps)?;
            for check in &outcome.acceptance {
                println!(
                    "[{}] {}: {}",
                    if check.pass { "pass" } else { "FAIL" },
                    check.name,
                    check.detail
                );
            }
            println!(
                "wrote {} artifacts to {}",
                outcome.manifest.outputs.len(),
                out_dir.display()
            );
            if outcome.failed_jobs > 0 {
                eprintln!("{} job(s) failed; see manifest.json", outcome.failed_jobs);
                return Ok(3);
            }
            if !outcome.acceptance_ok() {
                return Ok(1);
            }
            Ok(0)
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            println!(
                "ok: {} ({:?}), seed {}, hash {}",
                cfg.experiment.name,
                cfg.experiment.kind,
                cfg.experiment.seed,
                &cfg.hash()[..16]
            );
            Ok(0)
        }
        Command::ListModels => {
            for (name, desc) in model_catalog() {
                println!("{name:20} {desc}");
            }
            Ok(0)
        }
        Command::Plot { csv, out } => {
            let points = read_sweep_csv(&csv)?;
            let fit = ewel_core::weak_error::fit_rate(
                &points.iter().map(|&(h, e, se)| (h, e.abs(), se)).collect::<Vec<_>>(),
            )
            .ok();
            ewel_lab::plot::emit_plot(
                &out,
                csv.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep"),
                &points,
                fit.as_ref(),
                &[0.25, 0.5, 1.0],
            )?;
            println!("wrote {}", out.display());
            Ok(0)
        }
    }
}
