//! Benchmark CLI for sketched kernel machines.
//!
//! Subcommands:
//! - `bench run --config <path.json|toml>`: execute an experiment sweep,
//!   writing `<stem>.record.json`, `<stem>.metrics.csv`, `<stem>.timings.csv`.
//! - `bench report --format {csv,markdown,plotdata} <records...>`: aggregate
//!   record files into a table or plot data.
//! - `bench sketch-diag --config <path>`: spectral certification diagnostics
//!   for the configured sketches.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 when every
//! replicate of a run failed. `SKETCH_BENCH_THREADS` caps the worker pool.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sketched_kernels::bench::{
    render_report, run_experiment, sketch_diagnostics, write_outputs, ExperimentConfig,
    ReportFormat, RunRecord,
};

#[derive(Parser)]
#[command(name = "bench", about = "Benchmarks for sketched kernel machines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output stem; overrides the config's `output` field.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Aggregate one or more record.json files into a report.
    Report {
        #[arg(long, value_enum)]
        format: Format,
        /// `*.record.json` files produced by `bench run`.
        records: Vec<PathBuf>,
        /// Write to this file instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check K-satisfiability of the configured sketches on the training
    /// Gram matrix.
    SketchDiag {
        #[arg(long)]
        config: PathBuf,
        /// Largest number of training rows used for the spectral profile.
        #[arg(long, default_value_t = 2000)]
        max_n: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Markdown,
    Plotdata,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Markdown => ReportFormat::Markdown,
            Format::Plotdata => ReportFormat::Plotdata,
        }
    }
}

const EXIT_CONFIG: u8 = 2;
const EXIT_ALL_FAILED: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(threads) = std::env::var("SKETCH_BENCH_THREADS") {
        match threads.parse::<usize>() {
            Ok(t) if t >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build_global();
            }
            _ => {
                eprintln!("SKETCH_BENCH_THREADS must be a positive integer, got '{threads}'");
                return ExitCode::from(EXIT_CONFIG);
            }
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run { config, output } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            if let Some(stem) = output {
                cfg.output = Some(stem);
            }
            let record = run_experiment(&cfg)?;
            for agg in &record.aggregates {
                let metric = record.primary_metric();
                match agg.metric_means.get(metric) {
                    Some(mean) => println!(
                        "{}: {metric} = {:.6} ± {:.6}, fit {:.3}s ({} ok, {} failed)",
                        agg.entry,
                        mean,
                        agg.metric_sds[metric],
                        agg.fit_seconds_mean,
                        agg.replicates_ok,
                        agg.replicates_failed
                    ),
                    None => println!(
                        "{}: no successful replicates ({} failed)",
                        agg.entry, agg.replicates_failed
                    ),
                }
            }
            if let Some(stem) = &record.config.output {
                let written = write_outputs(&record, stem)?;
                for path in written {
                    println!("wrote {}", path.display());
                }
            }
            if record.all_failed() {
                for row in record.rows.iter().filter(|r| r.error.is_some()) {
                    eprintln!(
                        "entry {} replicate {}: {}",
                        row.entry,
                        row.replicate,
                        row.error.as_deref().unwrap_or("")
                    );
                }
                return Ok(ExitCode::from(EXIT_ALL_FAILED));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Report {
            format,
            records,
            output,
        } => {
            if records.is_empty() {
                anyhow::bail!("no record files given");
            }
            let mut loaded: Vec<RunRecord> = Vec::new();
            for path in &records {
                let text = std::fs::read_to_string(path)?;
                loaded.push(serde_json::from_str(&text)?);
            }
            let report = render_report(&loaded, format.into())?;
            match output {
                Some(path) => std::fs::write(path, report)?,
                None => print!("{report}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::SketchDiag { config, max_n } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let report = sketch_diagnostics(&cfg, max_n)?;
            print!("{}", report.to_text());
            Ok(ExitCode::SUCCESS)
        }
    }
}
