//! Command-line front end: run scenario files against the simulated
//! hardware, validate them without running, or list the available
//! experiments.
//!
//! Exit codes: 0 — everything ran and all bounds passed; 1 — everything ran
//! but at least one bound failed; 2 — a scenario could not be loaded or a
//! pipeline failed at runtime.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hipnav::scenario::{run_scenario, Report, ScenarioConfig, ScenarioError};

#[derive(Parser)]
#[command(
    name = "hipnav",
    version,
    about = "Simulation bench for an image-guided hip-replacement robot"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenario files and write raw/summary/report files.
    Run {
        /// Scenario JSON files.
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        /// Output directory for the report files.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Replace the seed of every scenario.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Replace the repeat count of every scenario.
        #[arg(long)]
        repeats: Option<u32>,
        /// Run the scenario files concurrently, one thread each. Reports
        /// are identical either way; only wall-clock time changes.
        #[arg(long)]
        parallel: bool,
    },
    /// Parse and validate scenario files without running anything.
    Validate {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
    },
    /// List the experiment ids a scenario's `tests` array can reference.
    ListTests,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            scenarios,
            out_dir,
            seed_override,
            repeats,
            parallel,
        } => run(&scenarios, &out_dir, seed_override, repeats, parallel),
        Command::Validate { scenarios } => validate(&scenarios),
        Command::ListTests => {
            print!("{}", test_listing());
            ExitCode::SUCCESS
        }
    }
}

fn run(
    scenarios: &[PathBuf],
    out_dir: &Path,
    seed_override: Option<u64>,
    repeats: Option<u32>,
    parallel: bool,
) -> ExitCode {
    let outcomes: Vec<(String, Result<Report, ScenarioError>)> = if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = scenarios
                .iter()
                .map(|path| scope.spawn(move || run_one(path, seed_override, repeats)))
                .collect();
            scenarios
                .iter()
                .zip(handles)
                .map(|(path, h)| {
                    (
                        path.display().to_string(),
                        h.join().expect("scenario thread panicked"),
                    )
                })
                .collect()
        })
    } else {
        scenarios
            .iter()
            .map(|path| (path.display().to_string(), run_one(path, seed_override, repeats)))
            .collect()
    };

    let mut any_error = false;
    let mut any_failed = false;
    for (path, outcome) in outcomes {
        match outcome {
            Ok(report) => {
                print!("{}", report.text_report());
                match report.write_files(out_dir) {
                    Ok(files) => {
                        for f in files {
                            println!("wrote {}", f.display());
                        }
                    }
                    Err(e) => {
                        eprintln!("error: {path}: {e}");
                        any_error = true;
                    }
                }
                if !report.all_passed() {
                    any_failed = true;
                }
                println!();
            }
            Err(e) => {
                eprintln!("error: {path}: {e}");
                any_error = true;
            }
        }
    }
    if any_error {
        ExitCode::from(2)
    } else if any_failed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn run_one(
    path: &Path,
    seed_override: Option<u64>,
    repeats: Option<u32>,
) -> Result<Report, ScenarioError> {
    let mut config = ScenarioConfig::load(path)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    if let Some(r) = repeats {
        config.repeats = r;
        config.validate()?;
    }
    run_scenario(&config)
}

fn validate(scenarios: &[PathBuf]) -> ExitCode {
    let mut any_error = false;
    for path in scenarios {
        match ScenarioConfig::load(path) {
            Ok(config) => println!(
                "ok: {} ({} test{}, {} bound{}, {} repeat{})",
                path.display(),
                config.tests.len(),
                plural(config.tests.len()),
                config.bounds.len(),
                plural(config.bounds.len()),
                config.repeats,
                plural(config.repeats as usize),
            ),
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                any_error = true;
            }
        }
    }
    if any_error {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn plural(n: usize) -> &'static str {
    if n == 1 {
        ""
    } else {
        "s"
    }
}

fn test_listing() -> String {
    [
        "test1        hand-eye calibration dance plus positioning-accuracy validation",
        "test2        closed-loop cup-axis alignment through the tracker",
        "test3        grinding safety controller over randomized force profiles",
        "test4_neck   probe-based neck-length measurement and trial-head selection",
        "test4_legs   probe-based leg-length measurement under planted shifts",
    ]
    .iter()
    .map(|line| format!("{line}\n"))
    .collect()
}
