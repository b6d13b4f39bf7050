//! `hypershell` command-line runner.
//!
//! Exit codes: 0 success, 1 unexpected I/O failure, 2 invalid configuration,
//! 3 surface not hyperbolic on the requested region, 4 solver failure,
//! 5 Korn basis not saturated within budget, 6 appendix check failed.

mod commands;
mod config;
mod expr;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "hypershell", version, about = "Strain equations and Korn constants on hyperbolic surfaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Grid override: samples per axis, chart nodes, quadrature nodes or
    /// oracle grid depending on the command.
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// Tolerance override for the command's pass/fail threshold.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Seed override for randomized fields and synthetic noise.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
pub enum Command {
    /// Curvature range, hyperbolicity and principal/asymptotic samples.
    SurfaceInfo,
    /// Build an asymptotic chart and solve the strain equation on it.
    SolveStrain,
    /// Korn quotients over a thickness schedule and the fitted exponent.
    KornScale,
    /// Principal-curvature limits and the principal-frame obstruction.
    AppendixVerify,
    /// Oracle suite for the characteristic solver.
    RegionSelftest,
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Failure::new(2, message)
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        Failure::new(1, format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

/// Exit code of a library error raised while running a solver.
pub fn solver_failure(e: hypershell::Error) -> Failure {
    use hypershell::Error as E;
    let code = match e {
        E::NotHyperbolic(..) => 3,
        E::Unsaturated(_) => 5,
        E::InvalidShell(_) | E::Invalid(_) | E::InvalidCurve(_) | E::IncompatibleCurves(_) => 2,
        E::Io(_) => 1,
        _ => 4,
    };
    Failure::new(code, e.to_string())
}

/// Output directory with deterministic JSON and CSV writers.
pub struct Out {
    pub dir: PathBuf,
}

impl Out {
    pub fn create(dir: &Path) -> Result<Self, Failure> {
        std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
        Ok(Out { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn json(&self, name: &str, value: &impl Serialize) -> Result<(), Failure> {
        let p = self.path(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::io(&p, e))?;
        text.push('\n');
        std::fs::write(&p, text).map_err(|e| Failure::io(&p, e))
    }

    /// Runs a library writer against a fresh file.
    pub fn write(&self, name: &str, f: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> hypershell::Result<()>) -> Result<(), Failure> {
        let p = self.path(name);
        let file = std::fs::File::create(&p).map_err(|e| Failure::io(&p, e))?;
        let mut w = std::io::BufWriter::new(file);
        f(&mut w).map_err(|e| Failure::io(&p, e))?;
        std::io::Write::flush(&mut w).map_err(|e| Failure::io(&p, e))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("hypershell {}: {}", command_name(cli.command), f.message);
            ExitCode::from(f.code)
        }
    }
}

fn command_name(c: Command) -> &'static str {
    match c {
        Command::SurfaceInfo => "surface-info",
        Command::SolveStrain => "solve-strain",
        Command::KornScale => "korn-scale",
        Command::AppendixVerify => "appendix-verify",
        Command::RegionSelftest => "region-selftest",
    }
}
