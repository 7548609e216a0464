use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use naca_core::harness::{adversary_suite, bench, run_file, to_csv, BenchMode};

#[derive(Parser)]
#[command(
    name = "naca",
    version,
    about = "Access-controlled north-bound pipeline: scenarios, adversary campaigns and overhead benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a JSON scenario and evaluate its expectations.
    Run {
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the audit trail (JSON lines) here.
        #[arg(long)]
        audit: Option<PathBuf>,
        /// Print the full report as JSON instead of one line per check.
        #[arg(long)]
        json: bool,
    },
    /// Seeded adversarial campaigns checked against the soundness oracle.
    Adversary {
        #[arg(long, default_value_t = 1000)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time the pipeline with and without enforcement.
    Bench {
        /// compile, submit, submit-withdraw or all.
        #[arg(long, default_value = "all")]
        mode: String,
        #[arg(long, default_value_t = 40)]
        runs: usize,
        /// Also write the CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            audit,
            json,
        } => {
            let report = run_file(&scenario, seed).with_context(|| format!("running {}", scenario.display()))?;
            if let Some(path) = audit {
                std::fs::write(&path, &report.audit_jsonl).with_context(|| format!("writing {}", path.display()))?;
            }
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                for c in &report.checks {
                    let status = if c.passed { "ok  " } else { "FAIL" };
                    println!("{status} #{} {}: {}", c.event, c.check, c.detail);
                }
                let failed = report.checks.iter().filter(|c| !c.passed).count();
                println!(
                    "{}: {} checks, {failed} failed (seed {})",
                    report.name,
                    report.checks.len(),
                    report.seed
                );
            }
            Ok(report.passed())
        }
        Command::Adversary { runs, seed } => {
            let s = adversary_suite(seed, runs);
            println!("{}", serde_json::to_string_pretty(&s)?);
            Ok(s.violations.is_empty() && s.tamper_accepted == 0)
        }
        Command::Bench { mode, runs, csv } => {
            anyhow::ensure!(runs > 0, "--runs must be positive");
            let modes = if mode == "all" {
                BenchMode::ALL.to_vec()
            } else {
                vec![mode.parse::<BenchMode>()?]
            };
            let reports: Vec<_> = modes.into_iter().map(|m| bench(m, runs)).collect();
            let out = to_csv(&reports);
            print!("{out}");
            if let Some(path) = csv {
                std::fs::write(&path, &out).with_context(|| format!("writing {}", path.display()))?;
            }
            let over: Vec<_> = reports
                .iter()
                .filter(|r| r.overhead_pct >= 100.0)
                .map(|r| r.mode.as_str())
                .collect();
            if !over.is_empty() {
                eprintln!("mean overhead at or above 100% for {}", over.join(", "));
            }
            Ok(over.is_empty())
        }
    }
}
