//! Batch front-end: construct → zeta → saddle → perron, discretize → count,
//! then verify and report. Every command writes into `--out` and merges
//! its outputs into manifest.json.

mod artifacts;
mod config;
mod report;
mod stages;
mod verify;

use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "beurling-lab", version, about = "Beurling prime system laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Build the sequence table (A_k, B_k, C_k, τ_k, x_k).
    Construct,
    /// Residues and log ζ near 1 + iτ_K.
    Zeta,
    /// Certify saddles, trace the steepest paths, s_0 contribution.
    Saddle,
    /// Shifted-contour decomposition and the closed-loop Cauchy test.
    Perron,
    /// Sample a discrete prime system and its gap statistics.
    Discretize,
    /// Enumerate generalized integers of the sampled system.
    Count,
    /// Run the invariant suites; exit status 1 on any failure.
    Verify,
    /// Markdown summary of the artifacts in the output directory.
    Report,
    /// Print the effective configuration as JSON.
    Config,
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("BEURLING_LAB_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("BEURLING_LAB_THREADS = {v:?} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    init_threads()?;
    let cfg = RunConfig::load(&cli.overrides)?;
    match cli.command {
        Command::Construct => {
            let t = stages::construct(&cfg)?;
            for r in &t.rows {
                println!("k={} log B = {:.6} log tau = {:.6} log x = {:.6}", r.k, r.log_b_f, r.log_tau, r.log_x_f);
            }
        }
        Command::Zeta => stages::zeta(&cfg)?,
        Command::Saddle => {
            let a = stages::saddle(&cfg)?;
            println!("{} saddles certified, s_0 sign {} (expected {})", a.saddles.len(), a.s0.sign, a.s0.expected_sign);
        }
        Command::Perron => {
            let a = stages::perron(&cfg)?;
            println!("near margin {:.3} nat, return margin {:.3} nat", a.report.near_margin, a.report.return_margin);
            if let Some(r) = a.closed_loop_residual {
                println!("closed-loop relative residual {r:.3e}");
            }
        }
        Command::Discretize => {
            let r = stages::discretize_stage(&cfg)?;
            println!("{} primes, sup deviation {:.4}, D-hat {:.4}", r.primes, r.sup_pi_deviation, r.gap.d_hat);
        }
        Command::Count => {
            let c = stages::count(&cfg)?;
            println!("{} integers up to log x = {:.4}", c.integers, c.exact_to);
        }
        Command::Verify => {
            let r = verify::verify(&cfg)?;
            for c in &r.checks {
                println!("{} {}/{}: {:.3e} (limit {:.3e}) {}", if c.pass { "PASS" } else { "FAIL" }, c.suite, c.name, c.value, c.limit, c.note);
            }
            println!("{} passed, {} failed", r.passed, r.failed);
            if r.failed > 0 {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Report => print!("{}", report::report(&cfg)?),
        Command::Config => println!("{}", serde_json::to_string_pretty(&cfg)?),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
