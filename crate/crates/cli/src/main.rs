use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use varda::driver::{emit_report, oracle, run_experiment, verify, ExperimentConfig, Route};

#[derive(Parser)]
#[command(name = "varda", version, about = "Incremental 4DVar twin experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Run a twin experiment and write summary.json and inner.csv.
    Run { config: PathBuf },
    /// Adjoint, Taylor and gradient checks for a configured model.
    Verify { config: Option<PathBuf> },
    /// Compare every solver route with a dense solve on a small instance.
    Oracle { config: PathBuf },
}

#[derive(Args)]
struct Overrides {
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Report directory for `run`.
    #[arg(long, global = true, default_value = "varda-out")]
    out: PathBuf,
    #[arg(long, global = true, value_parser = parse_route)]
    route: Option<Route>,
    #[arg(long, global = true)]
    max_inner: Option<usize>,
    #[arg(long, global = true)]
    outer: Option<usize>,
}

fn parse_route(s: &str) -> std::result::Result<Route, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|_| {
        format!(
            "unknown route `{s}` (expected primal-pcg, primal-cgls, dual-rpcg, dual-gmres, \
             saddle-minres or saddle-gmres)"
        )
    })
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            cfg.experiment.seed = seed;
        }
        if let Some(route) = self.route {
            cfg.solver.route = route;
        }
        if let Some(k) = self.max_inner {
            cfg.solver.max_inner = k;
        }
        if let Some(k) = self.outer {
            cfg.experiment.outer = k;
        }
    }
}

fn load(path: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::from_file(p)
            .with_context(|| format!("reading config {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let o = &cli.overrides;
    match &cli.command {
        Command::Run { config } => {
            let cfg = load(Some(config), o)?;
            let summary = run_experiment(&cfg)?;
            let paths = emit_report(&summary, &o.out)
                .with_context(|| format!("writing reports to {}", o.out.display()))?;
            println!(
                "outer {}  inner {}  cost {:.6e}  background error {:.4}  analysis error {:.4}",
                summary.outer.len(),
                summary.total_inner_iterations,
                summary.final_cost.unwrap_or(f64::NAN),
                summary.background_error.unwrap_or(f64::NAN),
                summary.analysis_error.unwrap_or(f64::NAN),
            );
            if let Some(reason) = &summary.halted {
                eprintln!("halted: {reason}");
            }
            println!("{}\n{}", paths.summary.display(), paths.inner.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { config } => {
            let cfg = load(config.as_deref(), o)?;
            let report = verify(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Oracle { config } => {
            let cfg = load(Some(config), o)?;
            let report = oracle(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}
