//! `term`: command-line front end for tilted ERM solves, sweeps, superquantile
//! reports and the bundled experiment recipes.

mod commands;
mod config;
mod source;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use term_core::TermError;

use crate::commands::Artifacts;

#[derive(Debug, Parser)]
#[command(name = "term", version, about = "Tilted empirical risk minimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one tilted problem and write its trace.
    Solve(RunArgs),
    /// Solve over a grid of tilts and check the monotonicity properties.
    Sweep(RunArgs),
    /// Superquantile bound chain over a tilt grid.
    Superquantile(RunArgs),
    /// Run a named experiment recipe.
    Experiment {
        /// point-estimation, robust-regression, class-imbalance, annotators, fair-pca or hierarchical
        name: String,
        #[command(flatten)]
        args: RunArgs,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Root tilt.
    #[arg(long, allow_hyphen_values = true)]
    pub t: Option<f64>,
    /// Sample-level tilt inside groups (second tree level).
    #[arg(long, allow_hyphen_values = true)]
    pub tau: Option<f64>,
    /// Comma-separated tilts, e.g. "-2,0,2".
    #[arg(long, allow_hyphen_values = true)]
    pub t_grid: Option<String>,
    /// Comma-separated superquantile thresholds.
    #[arg(long, allow_hyphen_values = true)]
    pub a: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Corrupted fraction for synthetic data.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Flat key-value TOML file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "TERM_OUT_DIR", default_value = "term-out")]
    pub out: PathBuf,
    /// Load data from a CSV file.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Synthetic data: toy, point-estimation, linear-regression, logistic-desk, annotators, fair-pca.
    #[arg(long)]
    pub scenario: Option<String>,
    /// squared, logistic, squared-distance or pca:<rank>.
    #[arg(long)]
    pub loss: Option<String>,
    /// Use the minibatch solver.
    #[arg(long)]
    pub stochastic: bool,
}

fn exit_code(e: &TermError) -> u8 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

fn write_outputs(
    out: &std::path::Path,
    report: serde_json::Value,
    artifacts: Artifacts,
    seconds: f64,
) -> Result<(), TermError> {
    std::fs::create_dir_all(out)?;
    let mut names: Vec<String> = artifacts.iter().map(|(n, _)| n.clone()).collect();
    names.push("report.json".into());
    names.push("timing.json".into());
    let mut report = report;
    report["artifacts"] = json!(names);
    for (name, body) in &artifacts {
        std::fs::write(out.join(name), body)?;
    }
    let text =
        serde_json::to_string_pretty(&report).map_err(|e| TermError::Input(e.to_string()))? + "\n";
    std::fs::write(out.join("report.json"), &text)?;
    let timing =
        serde_json::to_string_pretty(&json!({ "seconds": seconds })).unwrap_or_default() + "\n";
    std::fs::write(out.join("timing.json"), timing)?;
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<Option<String>, TermError> {
    let start = Instant::now();
    let (args, outcome) = match &cli.command {
        Command::Solve(a) => (a, commands::solve(a)?),
        Command::Sweep(a) => (a, commands::sweep(a)?),
        Command::Superquantile(a) => (a, commands::superquantile(a)?),
        Command::Experiment { name, args } => (args, commands::experiment(name, args)?),
    };
    write_outputs(
        &args.out,
        outcome.report,
        outcome.artifacts,
        start.elapsed().as_secs_f64(),
    )?;
    Ok(outcome.partial_failure)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(failure)) => {
            eprintln!("error: numerical failure in part of the run: {failure}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
