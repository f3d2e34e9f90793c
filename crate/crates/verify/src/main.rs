use std::path::PathBuf;
use std::process::ExitCode;

use caxial_verify::{run_suite, ConfigError, Report, RunConfig, Suite};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "caxial", version, about = "Verification harness for block-averaged lattice gauge fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run verification suites and write a JSON report.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct VerifyArgs {
    /// JSON run configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    /// Block side (odd, at least 3).
    #[arg(long = "L")]
    block_side: Option<usize>,
    /// Number of blocking levels N.
    #[arg(long)]
    levels: Option<usize>,
    /// Comma-separated suites, or `all`.
    #[arg(long)]
    suite: Option<String>,
    /// Identity tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report path.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Directory for decay CSV files and flow traces.
    #[arg(long)]
    artifacts: Option<PathBuf>,
    /// Only run checks whose id contains this string (repeatable).
    #[arg(long)]
    filter: Vec<String>,
    /// Resource cap on the ambient dimension (CAXIAL_MAX_DIM overrides it).
    #[arg(long)]
    max_dim: Option<usize>,
    /// Do not print the per-check table.
    #[arg(long)]
    quiet: bool,
}

fn resolve(args: &VerifyArgs) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    if args.dim.is_some() || args.block_side.is_some() || args.levels.is_some() {
        cfg.instances.clear();
        cfg.dim = args.dim.or(cfg.dim);
        cfg.block_side = args.block_side.or(cfg.block_side);
        cfg.levels = args.levels.or(cfg.levels);
    }
    if let Some(s) = &args.suite {
        cfg.suites = Suite::parse_list(s)?;
    }
    if let Some(t) = args.tol {
        cfg.tolerances.identity_tol = t;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(r) = &args.report {
        cfg.report = Some(r.clone());
    }
    if let Some(a) = &args.artifacts {
        cfg.artifacts = Some(a.clone());
    }
    if !args.filter.is_empty() {
        cfg.filter = args.filter.clone();
    }
    if let Some(m) = args.max_dim {
        cfg.max_dim = m;
    }
    cfg.apply_env()?;
    cfg.validate()?;
    Ok(cfg)
}

fn write_report(report: &Report, path: &Option<PathBuf>) -> bool {
    match path {
        Some(p) => match report.write(p) {
            Ok(()) => true,
            Err(e) => {
                eprintln!("cannot write report to {}: {e}", p.display());
                false
            }
        },
        None => true,
    }
}

fn verify(args: VerifyArgs) -> ExitCode {
    let cfg = match resolve(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            let mut partial = Report::new(RunConfig::default(), Vec::new());
            partial.aborted = Some(e.to_string());
            write_report(&partial, &args.report);
            return ExitCode::from(2);
        }
    };
    let report = match run_suite(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            let mut partial = Report::new(cfg.clone(), Vec::new());
            partial.aborted = Some(e.to_string());
            write_report(&partial, &cfg.report);
            return ExitCode::from(2);
        }
    };
    if !args.quiet {
        print!("{}", report.table());
    }
    if !write_report(&report, &cfg.report) {
        return ExitCode::from(2);
    }
    if cfg.report.is_none() && args.quiet {
        match report.to_json() {
            Ok(s) => println!("{s}"),
            Err(e) => eprintln!("{e}"),
        }
    }
    if report.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Verify(args) => verify(args),
    }
}
