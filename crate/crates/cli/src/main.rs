use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use leki_core::harness::{
    aggregate_summaries, check::self_check, format_reports, load_with_preset, read_trials_csv,
    run_experiment, write_outputs, write_summary_csv, PRESET_NAMES,
};
use leki_core::Error;

/// Overrides the default output directory.
const OUT_DIR_ENV: &str = "LEKI_OUT_DIR";

#[derive(Parser)]
#[command(name = "solve", version, about = "Localized ensemble Kalman inversion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch experiment and write per-iteration records and summaries.
    Run {
        /// TOML experiment config; layered over --preset when both are given.
        config: Option<PathBuf>,
        /// Output root [default: $LEKI_OUT_DIR, else ./results].
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads [default: available cores].
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, value_parser = PRESET_NAMES)]
        preset: Option<String>,
        /// Also write a JSON mirror of every CSV.
        #[arg(long)]
        json: bool,
    },
    /// Re-aggregate one or more trials.csv files.
    Aggregate {
        #[arg(required = true)]
        records: Vec<PathBuf>,
        /// Write the summary CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the summary as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run the built-in property suites.
    Check,
}

fn fail(e: Error) -> ExitCode {
    eprintln!("solve: {e}");
    match e {
        Error::Config(_) => ExitCode::from(2),
        _ => ExitCode::FAILURE,
    }
}

fn run(
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    workers: Option<usize>,
    preset: Option<String>,
    json: bool,
) -> Result<(), Error> {
    let mut cfg = load_with_preset(preset.as_deref(), config.as_deref())?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let workers = workers
        .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
        .unwrap_or(1);
    if workers == 0 {
        return Err(Error::Config("--workers must be at least 1".into()));
    }
    let root = out
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"));
    let output = run_experiment(&cfg, workers)?;
    let files = write_outputs(&output, &root, json)?;
    if json {
        let text = serde_json::to_string_pretty(&output.reports).map_err(|e| Error::Usage(e.to_string()))?;
        println!("{text}");
    } else {
        print!("{}", format_reports(&output.reports));
        println!("wrote {} records to {}", files.records.len(), files.dir.display());
    }
    Ok(())
}

fn aggregate(records: Vec<PathBuf>, out: Option<PathBuf>, json: bool) -> Result<(), Error> {
    let mut rows = Vec::new();
    for p in &records {
        rows.extend(read_trials_csv(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?);
    }
    let reports = aggregate_summaries(&rows);
    if let Some(p) = out {
        write_summary_csv(&p, &reports, false)?;
    }
    if json {
        let text = serde_json::to_string_pretty(&reports).map_err(|e| Error::Usage(e.to_string()))?;
        println!("{text}");
    } else {
        print!("{}", format_reports(&reports));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            workers,
            preset,
            json,
        } => run(config, out, seed, workers, preset, json),
        Command::Aggregate { records, out, json } => aggregate(records, out, json),
        Command::Check => match self_check() {
            Ok(outcomes) => {
                for o in &outcomes {
                    println!("{o}");
                }
                if outcomes.iter().all(|o| o.passed) {
                    Ok(())
                } else {
                    return ExitCode::FAILURE;
                }
            }
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}
