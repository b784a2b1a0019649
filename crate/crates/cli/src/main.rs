use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use junctionsim::config::{load_config, ScenarioConfig, OUT_ENV};
use junctionsim::experiment::{run_matrix, write_report, ExperimentMatrix};
use junctionsim::scenario::{self, RunResult};
use junctionsim::SimError;

#[derive(Parser)]
#[command(name = "simulate", version, about = "Signalized-junction cellular network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Run {
        /// Flat key=value config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides as --key=value, applied after the file.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run a preset experiment matrix.
    Matrix {
        #[arg(long, value_enum)]
        preset: Preset,
        /// Seeds per cell.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Base config shared by every cell.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run one scenario estimating congestion from a recorded presence trace.
    ReplayTrace {
        #[arg(long)]
        trace_in: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY=VALUE")]
        overrides: Vec<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    PaperRepro,
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>, SimError> {
    raw.iter()
        .map(|a| {
            a.strip_prefix("--")
                .and_then(|kv| kv.split_once('='))
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| SimError::config(a.as_str(), "expected --key=value"))
        })
        .collect()
}

fn report_run(cfg: &ScenarioConfig, result: &RunResult, secs: f64) -> Result<(), SimError> {
    let dir = cfg.resolve_out_dir();
    result.write_outputs(&dir)?;
    println!("wrote {} ({:.2} s, {} events)", dir.display(), secs, result.stats.events);
    for r in &result.summary.rows {
        println!(
            "{:<9} {:<10} {} {} per-user {:>10.0} b/s  latency {:>8.2} ms  delivery {:.4}",
            r.level, r.policy, r.class, r.direction, r.per_user_throughput_bps, r.mean_latency_ms, r.delivery_ratio
        );
    }
    if let Some(bad) = result.conservation.iter().find(|c| !c.holds()) {
        return Err(SimError::Fault {
            time: cfg.warmup + cfg.horizon,
            target: junctionsim::engine::ModuleId::Metrics,
            kind: "conservation",
            message: format!("{bad:?}"),
        });
    }
    Ok(())
}

fn single(config: Option<PathBuf>, mut overrides: Vec<(String, String)>, trace_in: Option<PathBuf>) -> Result<(), SimError> {
    if let Some(t) = trace_in {
        overrides.push(("trace_in".into(), t.display().to_string()));
    }
    let cfg = load_config(config.as_deref(), &overrides)?;
    let start = Instant::now();
    let result = scenario::run(&cfg)?;
    report_run(&cfg, &result, start.elapsed().as_secs_f64())
}

fn matrix(seeds: u64, config: Option<PathBuf>, overrides: Vec<(String, String)>) -> Result<(), SimError> {
    if seeds == 0 {
        return Err(SimError::config("seeds", "must be at least 1"));
    }
    let base = load_config(config.as_deref(), &overrides)?;
    let root = base
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
        .join("paper-repro");
    let m = ExperimentMatrix::paper_repro(base, seeds);
    let start = Instant::now();
    let report = run_matrix(&m);
    write_report(&m, &report, &root)?;
    println!(
        "wrote {} ({} runs, {} failed, {:.1} s)",
        root.display(),
        m.runs(),
        report.failures(),
        start.elapsed().as_secs_f64()
    );
    if report.failures() > 0 {
        let first = report.outcomes.iter().find_map(|o| o.result.as_ref().err()).cloned().unwrap_or_default();
        return Err(SimError::Fault {
            time: junctionsim::SimTime::ZERO,
            target: junctionsim::engine::ModuleId::Harness,
            kind: "matrix",
            message: format!("{} run(s) failed; first: {first}", report.failures()),
        });
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, overrides } => parse_overrides(&overrides).and_then(|o| single(config, o, None)),
        Command::Matrix { preset: Preset::PaperRepro, seeds, config, overrides } => {
            parse_overrides(&overrides).and_then(|o| matrix(seeds, config, o))
        }
        Command::ReplayTrace { trace_in, config, overrides } => {
            parse_overrides(&overrides).and_then(|o| single(config, o, Some(trace_in)))
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
