use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Args, Parser, Subcommand};
use roughavg_cli::{run, Command, ExperimentConfig};

/// Fast-slow rough differential equations and averaging experiments.
#[derive(Parser)]
#[command(name = "roughavg", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample fBm and Brownian paths on the fine grid.
    Sample(Common),
    /// Build a mixed lift and check Chen and symmetry residuals.
    LiftCheck(Common),
    /// Compare the fractional-calculus and compensated Riemann integrals.
    IntegrateXcheck(Common),
    /// Solve one fast-slow replica and its averaged equation.
    Solve(Common),
    /// Estimate or tabulate the averaged drift.
    Fbar(Common),
    /// Autocovariance decay of the frozen fast dynamics.
    Probe(Common),
    /// Run the convergence experiment over the eps schedule.
    Converge(Common),
    /// Regenerate CSV series from a saved report.json.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    hurst: Option<f64>,
    /// Comma-separated, strictly decreasing.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Saved report for `report`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Any config key, e.g. `--set fbar.points=33`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        let quote = |p: &PathBuf| format!("{:?}", p.to_string_lossy());
        if let Some(v) = &self.output {
            out.push(("output_dir".into(), quote(v)));
        }
        if let Some(v) = &self.preset {
            out.push(("preset".into(), format!("{v:?}")));
        }
        if let Some(v) = self.seed {
            out.push(("seed".into(), v.to_string()));
        }
        if let Some(v) = self.replicas {
            out.push(("replicas".into(), v.to_string()));
        }
        if let Some(v) = self.hurst {
            out.push(("hurst".into(), format!("{v:?}")));
        }
        if let Some(v) = &self.eps {
            let items: Vec<String> = v.iter().map(|e| format!("{e:?}")).collect();
            out.push(("eps_schedule".into(), format!("[{}]", items.join(", "))));
        }
        if let Some(v) = &self.input {
            out.push(("input".into(), quote(v)));
        }
        for s in &self.set {
            let (k, v) = s.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{s}`"))?;
            out.push((k.trim().into(), v.trim().into()));
        }
        Ok(out)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match &cli.command {
        Cmd::Sample(c) => (Command::Sample, c),
        Cmd::LiftCheck(c) => (Command::LiftCheck, c),
        Cmd::IntegrateXcheck(c) => (Command::IntegrateXcheck, c),
        Cmd::Solve(c) => (Command::Solve, c),
        Cmd::Fbar(c) => (Command::Fbar, c),
        Cmd::Probe(c) => (Command::Probe, c),
        Cmd::Converge(c) => (Command::Converge, c),
        Cmd::Report(c) => (Command::Report, c),
    };
    let config = match common.overrides().and_then(|o| ExperimentConfig::load(common.config.as_deref(), &o)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match run(command, &config) {
        Ok(manifest) => {
            println!("{}: wrote {} files to {}", command.name(), manifest.files.len(), config.output_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
