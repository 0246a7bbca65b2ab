//! `solitons`: run a scenario file and write trajectories, a manifest and a
//! lemma-check report.

mod config;
mod error;
mod report;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::Parser;
use serde_json::json;

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "solitons", version, about = "Self-similar curve shortening solitons: scenarios and lemma checks")]
struct Cli {
    /// Scenario file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Fail on report-only findings too.
    #[arg(long)]
    strict: bool,
    /// Seed for randomized seed grids; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(dir.join(name), bytes)?;
    Ok(())
}

fn main_inner(cli: &Cli) -> CliResult<u8> {
    let text = std::fs::read_to_string(&cli.config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", cli.config.display())))?;
    let cfg = config::parse(&text)?;
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    let outcome = run::execute(&cfg, seed)?;

    std::fs::create_dir_all(&cli.out)?;
    let mut names = Vec::new();
    for a in &outcome.artifacts {
        write(&cli.out, &a.name, &a.bytes)?;
        names.push(a.name.clone());
    }
    let hard = outcome.report.hard_failures();
    let soft = outcome.report.soft_failures();
    let passed = hard == 0 && (!cli.strict || soft == 0);
    let report = json!({
        "mode": cfg.mode,
        "passed": passed,
        "hard_failures": hard,
        "soft_failures": soft,
        "checks": outcome.report.checks,
        "details": outcome.report.details,
    });
    write(&cli.out, "report.json", &serde_json::to_vec_pretty(&report)?)?;
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let manifest = json!({
        "metadata": {
            "created_unix": created,
            "tool": "solitons",
            "code_version": env!("CARGO_PKG_VERSION"),
        },
        "mode": cfg.mode,
        "seed": seed,
        "strict": cli.strict,
        "tolerances": {
            "integrator_tol": cfg.integrator.tol,
            "sample_spacing": cfg.integrator.spacing,
            "norm_cap": cfg.integrator.norm_cap,
        },
        "config": cfg,
        "outputs": names,
        "report": "report.json",
    });
    write(&cli.out, "manifest.json", &serde_json::to_vec_pretty(&manifest)?)?;
    for c in outcome.report.checks.iter().filter(|c| !c.passed) {
        eprintln!(
            "{} {} on {}: measured {:.3e}, threshold {:.3e}",
            if c.hard { "FAIL" } else { "WARN" },
            c.name,
            c.subject,
            c.measured,
            c.threshold
        );
    }
    Ok(if passed { 0 } else { 1 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
