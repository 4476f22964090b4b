//! Command-line front end: `run` executes one configuration, `sweep` a
//! family of runs along one knob, `check` re-validates a finished run
//! directory offline, and `constants` prints the certified continuation
//! constants of a configuration without running it.
//!
//! Exit codes: 0 success, 2 rejected input (including a failed offline
//! check), 3 physics guard abort, 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bubblebox::driver::{
    check, constants_for, load_config, load_sweep, run, sweep, RunOutcome,
};
use bubblebox::{SimError, SimResult};

/// Print one line to stdout. A closed pipe (`bubblebox constants c.json |
/// head`) ends the process quietly with success — all files are already
/// flushed by the time anything prints; any other write failure is a real
/// I/O error.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let mut out = std::io::stdout().lock();
        if let Err(e) = writeln!(out, $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
            eprintln!("error: cannot write to stdout: {e}");
            std::process::exit(4);
        }
    }};
}

#[derive(Parser)]
#[command(
    name = "bubblebox",
    version,
    about = "Desk-scale simulator of one spherical bubble in a compressible viscous fluid"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one run configuration into an output directory.
    Run {
        /// Path to the run configuration (JSON).
        config: PathBuf,
        /// Directory receiving tables, reports, and dumps.
        #[arg(long, default_value = "bubblebox_run")]
        out: PathBuf,
    },
    /// Execute a parameter sweep (one run per value, failures recorded).
    Sweep {
        /// Path to the sweep description (JSON with `base` and `spec`).
        sweep: PathBuf,
        /// Directory receiving one run_NNN subdirectory per value.
        #[arg(long, default_value = "bubblebox_sweep")]
        out: PathBuf,
    },
    /// Re-validate the tables of a finished run directory offline.
    Check {
        /// A directory previously written by `run`.
        run_dir: PathBuf,
    },
    /// Print the certified constants of a configuration without running it.
    Constants {
        /// Path to the run configuration (JSON).
        config: PathBuf,
    },
}

fn print_run_summary(outcome: &RunOutcome) {
    let steps = outcome.times.len().saturating_sub(1);
    let t_end = outcome.times.last().copied().unwrap_or(0.0);
    let excursion = outcome.residual.iter().cloned().fold(0.0, f64::max);
    let last = outcome.bubble.last().expect("a run has at least the initial state");
    say!("completed {steps} steps to t = {t_end}");
    say!(
        "  energy: E(0) = {:.6e}, E(T) = {:.6e}, residual excursion = {:.3e}",
        outcome.energy[0].reduced_energy(),
        outcome.energy.last().unwrap().reduced_energy(),
        excursion
    );
    say!(
        "  bubble: center = [{:.6}, {:.6}, {:.6}], radius = {:.6}",
        last.x_b[0], last.x_b[1], last.x_b[2], last.r_b
    );
}

fn execute(cli: Cli) -> SimResult<ExitCode> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = load_config(&config)?;
            let outcome = run(&cfg, &out)?;
            print_run_summary(&outcome);
            say!("  tables in {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { sweep: path, out } => {
            let file = load_sweep(&path)?;
            let result = sweep(&file, &out)?;
            for (i, entry) in result.summary.entries.iter().enumerate() {
                match &entry.error {
                    None => say!("run_{i:03}: value = {:e}, completed", entry.value),
                    Some(msg) => {
                        say!("run_{i:03}: value = {:e}, FAILED: {msg}", entry.value)
                    }
                }
            }
            for (name, slope) in &result.summary.slopes {
                say!("slope[{name}] = {slope:.4}");
            }
            say!("summary in {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { run_dir } => {
            let report = check(&run_dir)?;
            let mut failures = 0usize;
            for c in &report.checks {
                if c.ok {
                    say!("PASS {}", c.bound);
                } else {
                    failures += 1;
                    let detail = c.detail.as_deref().unwrap_or("violated");
                    say!("FAIL {} — {detail}", c.bound);
                }
            }
            if failures == 0 {
                say!("all {} checks passed", report.checks.len());
                Ok(ExitCode::SUCCESS)
            } else {
                say!("{failures} of {} checks failed", report.checks.len());
                Ok(ExitCode::from(2))
            }
        }
        Command::Constants { config } => {
            let cfg = load_config(&config)?;
            let constants = constants_for(&cfg)?;
            let text = serde_json::to_string_pretty(&constants)
                .map_err(|e| SimError::ConfigParse(e.to_string()))?;
            say!("{text}");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
