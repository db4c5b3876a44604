use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Parser;
use sparsedom::verify::{run, Config, Experiment};

/// Runs one numerical experiment and writes report.csv and summary.json.
#[derive(Parser, Debug)]
#[command(name = "verify", version)]
struct Args {
    /// Experiment id, E1 to E8.
    #[arg(long)]
    experiment: String,
    /// Flat JSON config; unknown keys are rejected.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `out`, then `out/<id>`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Also write one SVG per plot.
    #[arg(long)]
    plot: bool,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<bool> {
    let args = Args::parse();
    let experiment: Experiment = args.experiment.parse()?;
    let mut config = Config::load(&args.config)?;
    if args.seed.is_some() {
        config.seed = args.seed;
    }
    if args.threads.is_some() {
        config.threads = args.threads;
    }
    let out = args
        .out
        .or_else(|| config.out.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(experiment.to_string()));

    let start = Instant::now();
    let report = run(experiment, &config).with_context(|| format!("running {experiment}"))?;
    let files = report
        .write(&out, args.plot)
        .with_context(|| format!("writing to {}", out.display()))?;
    for row in report.checks() {
        let verdict = if row.pass == Some(true) { "PASS" } else { "FAIL" };
        println!("{verdict} {experiment} {}", row.params);
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    println!(
        "{experiment}: {} ({} rows, {:.1}s)",
        if report.passed() { "passed" } else { "FAILED" },
        report.rows.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(report.passed())
}
