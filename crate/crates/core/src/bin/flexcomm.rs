use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use flexcomm::cli;
use flexcomm::netsched::Preset;
use flexcomm::sweep::{write_sweep, SweepTable};
use flexcomm::Error;

#[derive(Parser)]
#[command(name = "flexcomm", version, about = "Collective cost planning and compressed-training simulation")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print modeled collective costs and the selected collective.
    Plan {
        #[arg(long)]
        alpha_ms: f64,
        #[arg(long)]
        bandwidth_gbps: f64,
        #[arg(long)]
        model_bytes: f64,
        #[arg(long)]
        workers: usize,
        #[arg(long)]
        cr: f64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run a training simulation from a TOML config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Compare cost-model predictions with the bundled measurements.
    Sweep {
        #[arg(long, value_parser = parse_table)]
        table: SweepTable,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a network trace for a preset schedule.
    TraceGen {
        #[arg(long, value_parser = parse_preset)]
        preset: Preset,
        #[arg(long)]
        epochs: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_table(s: &str) -> std::result::Result<SweepTable, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn create(path: &PathBuf) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn execute(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Plan { alpha_ms, bandwidth_gbps, model_bytes, workers, cr, csv } => {
            let report = cli::plan(alpha_ms, bandwidth_gbps, model_bytes, workers, cr).map_err(|e| match e {
                Error::SingleWorker => {
                    anyhow::Error::new(e).context("plan needs --workers >= 2")
                }
                other => other.into(),
            })?;
            print!("{report}");
            if let Some(path) = csv {
                report.write_csv(create(&path)?)?;
            }
        }
        Cmd::Simulate { config, out, threads } => {
            if !config.exists() {
                return Err(anyhow::Error::new(Error::Config(format!("config {} not found", config.display()))));
            }
            let summary = cli::simulate(&config, &out, cli::seed_from_env()?, threads)?;
            println!(
                "{} steps, final loss {:.6}, accuracy {:.4}, simulated {:.3} s; artifacts in {}",
                summary.steps,
                summary.final_loss,
                summary.final_accuracy,
                summary.simulated_seconds.get("total").copied().unwrap_or(0.0),
                out.display()
            );
        }
        Cmd::Sweep { table, out } => {
            let rows = write_sweep(table, create(&out)?)?;
            println!("{table}: {rows} rows written to {}", out.display());
        }
        Cmd::TraceGen { preset, epochs, out } => {
            let text = cli::trace_gen(preset, epochs)?;
            std::fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::Config(_)
            | Error::InvalidRatio(_)
            | Error::InvalidNetwork(_)
            | Error::InvalidMessage(_)
            | Error::InvalidSchedule(_)
            | Error::TraceParse { .. }
            | Error::SingleWorker
            | Error::BadRank { .. },
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match execute(args.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
