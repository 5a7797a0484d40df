use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hetfx_cli::config::PipelineConfig;
use hetfx_cli::pipeline::{format_summary_table, run_diagnose, run_pipeline, run_synth, selection_table};
use hetfx_cli::{Error, StageError};

#[derive(Parser)]
#[command(
    name = "hetfx",
    version,
    about = "Heterogeneous treatment effect pipeline: split, fit, bootstrap, interpret"
)]
struct Cli {
    /// Worker threads (overrides HETFX_THREADS; default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write all reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the configured synthetic cohort as a CSV file.
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Destination CSV path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Load the configured data and write only the balance report.
    Diagnose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn init_threads(flag: Option<usize>) -> Result<(), Error> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("HETFX_THREADS") {
            Ok(v) => Some(v.parse::<usize>().map_err(|_| {
                Error::Config(format!("HETFX_THREADS must be a thread count, got `{v}`"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::Config("thread count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot configure thread pool: {e}")))?;
    }
    Ok(())
}

/// Record a machine-readable failure summary next to any partial artifacts.
fn write_error_json(out_dir: Option<&PathBuf>, err: &StageError) {
    if let Some(dir) = out_dir {
        let _ = std::fs::create_dir_all(dir);
        let doc = serde_json::json!({ "stage": err.stage, "error": err.source.to_string() });
        if let Ok(text) = serde_json::to_string_pretty(&doc) {
            let _ = std::fs::write(dir.join("error.json"), text);
        }
    }
}

fn load(config: &PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<PipelineConfig, Error> {
    PipelineConfig::from_path(config)?.resolve(seed, out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads(cli.threads) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }

    match cli.command {
        Command::Run { config, seed, out } => {
            let config = match load(&config, seed, out) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            match run_pipeline(&config) {
                Ok(report) => {
                    println!("{}", format_summary_table(&selection_table(&report)));
                    println!(
                        "\nbest estimator: {} (validation r2 {:.4})",
                        report.best,
                        report
                            .estimators
                            .iter()
                            .find(|f| f.name == report.best)
                            .map(|f| f.r2_valid)
                            .unwrap_or(f64::NAN)
                    );
                    if let Some(o) = &config.output {
                        println!("reports written to {}", o.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    write_error_json(config.output.as_ref(), &e);
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Synth { config, out, seed } => {
            let config = match load(&config, seed, None) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            match run_synth(&config, &out) {
                Ok(summary) => {
                    println!(
                        "wrote {} rows across {} schools to {}",
                        summary.n_rows,
                        summary.n_schools,
                        out.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Diagnose { config, seed, out } => {
            let config = match load(&config, seed, out) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            match run_diagnose(&config) {
                Ok((report, path)) => {
                    let max_smd = report
                        .features
                        .iter()
                        .map(|f| f.smd.abs())
                        .fold(0.0, f64::max);
                    println!(
                        "group mmd^2 {:.6} (sigma {:.4}); max |smd| {:.4} over {} features",
                        report.mmd.mmd2,
                        report.mmd.sigma,
                        max_smd,
                        report.features.len()
                    );
                    println!("balance report written to {}", path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    write_error_json(config.output.as_ref(), &e);
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
