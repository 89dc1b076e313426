//! `pinn`: experiment runner and self-check front end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pinn_core::arith::Fault;
use pinn_core::experiment::{run_experiment, ExperimentConfig, RunReport, RunStatus};
use pinn_core::problems::{ProblemSpec, PROBLEM_NAMES};
use pinn_core::validate::{validate_suite, ValidateOptions};
use pinn_core::PinnError;

/// Environment variable that overrides the output root of `run`.
const OUT_ENV: &str = "PINN_OUT_DIR";
const DEFAULT_OUT: &str = "runs";

const EXIT_USAGE: u8 = 1;
const EXIT_FAILED: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "pinn", version, about = "Physics-informed neural network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train every (variant, seed) pair of an experiment file and write reports.
    Run {
        /// Experiment configuration (JSON).
        config: PathBuf,
        /// Comma-separated seeds, replacing the configured list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Iteration count, replacing the configured one.
        #[arg(long)]
        iterations: Option<usize>,
        /// Runs executed concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output root; beats the environment variable and the config file.
        #[arg(long, env = OUT_ENV)]
        out: Option<PathBuf>,
    },
    /// Run the training-free property checks and print a pass/fail table.
    Validate {
        /// Base seed of the fixtures.
        #[arg(long, default_value_t = 1234)]
        seed: u64,
        /// Inject a defect to confirm the checks catch it.
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<FaultArg>,
    },
    /// List the built-in problems.
    ListProblems,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FaultArg {
    TanhDerivative,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                PinnError::Numeric { .. } | PinnError::Accuracy(_) | PinnError::Solver(_) => EXIT_FAILED,
                _ => EXIT_USAGE,
            })
        }
    }
}

fn dispatch(command: Command) -> pinn_core::Result<ExitCode> {
    match command {
        Command::Run {
            config,
            seeds,
            iterations,
            jobs,
            out,
        } => run(config, seeds, iterations, jobs, out),
        Command::Validate { seed, inject_fault } => {
            let opts = ValidateOptions {
                seed,
                fault: inject_fault.map(|FaultArg::TanhDerivative| Fault::TanhDerivative),
                ..ValidateOptions::default()
            };
            let report = validate_suite(&opts);
            print!("{}", report.render());
            Ok(if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAILED)
            })
        }
        Command::ListProblems => {
            for name in PROBLEM_NAMES {
                let p = ProblemSpec::preset(name)?;
                println!(
                    "{name:<13} ({}, {}) in [{}, {}] x [{}, {}]  hidden {:?}  {} interior points  {} iterations",
                    p.axes[0], p.axes[1], p.lower[0], p.upper[0], p.lower[1], p.upper[1],
                    p.hidden, p.interior_points, p.iterations
                );
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn run(
    config: PathBuf,
    seeds: Option<Vec<u64>>,
    iterations: Option<usize>,
    jobs: usize,
    out: Option<PathBuf>,
) -> pinn_core::Result<ExitCode> {
    if jobs == 0 {
        return Err(PinnError::Usage("--jobs must be at least 1".into()));
    }
    let mut cfg = ExperimentConfig::load(&config)?;
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    if iterations.is_some() {
        cfg.iterations = iterations;
    }
    let exp = cfg.resolve()?;
    let root = out
        .or(cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    eprintln!(
        "{}: {} variants x {} seeds, {} iterations -> {}",
        exp.problem.name,
        exp.variants.len(),
        exp.seeds.len(),
        exp.iterations,
        root.join(&exp.problem.name).display()
    );
    let outcome = run_experiment(&exp, Some(&root), jobs, &progress)?;
    println!("model,iterations,runs,rel_l2_mean,rel_l2_std,rel_linf_mean,rel_linf_std");
    for s in &outcome.summaries {
        println!(
            "{},{},{},{:.4e},{:.4e},{:.4e},{:.4e}{}",
            s.model,
            s.iterations,
            s.runs.len(),
            s.rel_l2_mean,
            s.rel_l2_std,
            s.rel_linf_mean,
            s.rel_linf_std,
            if s.single_run { "  (single run, std set to 0)" } else { "" }
        );
    }
    let failed = outcome.failed();
    if failed > 0 {
        eprintln!("{failed} run(s) failed; see run.json in their directories");
        return Ok(ExitCode::from(EXIT_FAILED));
    }
    Ok(ExitCode::SUCCESS)
}

fn progress(r: &RunReport) {
    match &r.status {
        RunStatus::Completed => eprintln!(
            "  {} seed {}: rel_l2 {:.3e}, rel_linf {:.3e}, final loss {:.3e}",
            r.model,
            r.seed,
            r.rel_l2.unwrap_or(f64::NAN),
            r.rel_linf.unwrap_or(f64::NAN),
            r.final_total_loss.unwrap_or(f64::NAN)
        ),
        RunStatus::Failed { error } => eprintln!("  {} seed {}: FAILED: {error}", r.model, r.seed),
    }
}
