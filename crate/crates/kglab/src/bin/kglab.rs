//! Thin command-line front end: every subcommand maps onto a library driver
//! in `kglab::lab`, prints the per-check summary, and writes the JSON report
//! (plus traces/checkpoints) under the output directory.
//!
//! Exit codes: 0 all checks passed, 1 check failure, 2 configuration error,
//! 3 blow-up, 4 shooting bracket failure.

use clap::{Parser, Subcommand};
use kglab::config::RunConfig;
use kglab::{lab, Error};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "kglab",
    about = "Numerical laboratory for the quadratic Klein-Gordon soliton",
    version
)]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed for randomized probe suites (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Initial-state preset for evolve (overrides the config).
    #[arg(long, global = true)]
    preset: Option<String>,

    /// Print the default configuration as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Verify the closed-form spectral data at N and its refinement.
    Eigencheck,
    /// Verify the resonance constant and the transformed-profile identities.
    Fgr,
    /// Run the transformation suite: conjugation, inverses, expansions, probes.
    Darboux,
    /// Evolve a preset initial state and stream the diagnostic trace.
    Evolve,
    /// Track the center-stable manifold across the amplitude sweep.
    Shoot,
    /// Replay the exact identities against a stored trace.
    TraceCheck {
        /// Trace CSV produced by evolve or shoot.
        trace: Option<PathBuf>,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Precondition(_) => 2,
        Error::BlowUp { .. } => 3,
        Error::BracketFailure(_) => 4,
        _ => 1,
    }
}

fn run() -> Result<bool, Error> {
    let cli = Cli::parse();
    if cli.print_config {
        print!("{}", RunConfig::defaults_toml());
        return Ok(true);
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(preset) = cli.preset {
        cfg.evolve.preset = preset;
    }
    cfg.validate()?;

    let command = cli.command.ok_or_else(|| {
        Error::Config("missing subcommand; see kglab --help".into())
    })?;
    let started = std::time::Instant::now();
    let report = match command {
        Command::Eigencheck => lab::run_eigencheck(&cfg)?,
        Command::Fgr => lab::run_fgr(&cfg)?,
        Command::Darboux => lab::run_darboux(&cfg)?,
        Command::Evolve => {
            let (report, trace_path) = lab::run_evolve(&cfg)?;
            eprintln!("trace written to {}", trace_path.display());
            report
        }
        Command::Shoot => {
            let (report, trace_path) = lab::run_shoot(&cfg)?;
            eprintln!("trace written to {}", trace_path.display());
            report
        }
        Command::TraceCheck { trace } => lab::run_trace_check(&cfg, trace)?,
    };
    let path = report.write(&cfg.output_dir)?;
    report.print_summary();
    eprintln!(
        "report written to {} ({:.2} s)",
        path.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(report.pass)
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
