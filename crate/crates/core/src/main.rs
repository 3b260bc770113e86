use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ttriem::baselines::{bench_run, BenchConfig, Function, Method, Op, CSV_HEADER};
use ttriem::checks::{self, Demo};
use ttriem::io::tt_read;

#[derive(Parser)]
#[command(name = "ttriem", version, about = "Riemannian autodiff on tensor-train manifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the self-check suites; exits nonzero if any fails.
    Check {
        /// Only run suites whose name contains this string.
        #[arg(long)]
        filter: Option<String>,
    },
    /// Time one method on one generated instance and print a CSV row.
    Bench {
        #[arg(long, value_parser = parse_with::<Function>)]
        function: Function,
        #[arg(long, value_parser = parse_with::<Method>)]
        method: Method,
        #[arg(long, value_parser = parse_with::<Op>)]
        op: Op,
        #[arg(long, default_value_t = 4)]
        d: usize,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        rx: usize,
        #[arg(long, default_value_t = 3)]
        rz: usize,
        #[arg(long, default_value_t = 3)]
        ra: usize,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one of the descent demos and print its objective history.
    Demo {
        #[arg(value_enum)]
        which: DemoArg,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        step_size: Option<f64>,
        /// Starting point in TTv1 format.
        #[arg(long = "in")]
        input: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DemoArg {
    Solve,
    Eigen,
    Complete,
}

impl From<DemoArg> for Demo {
    fn from(d: DemoArg) -> Self {
        match d {
            DemoArg::Solve => Demo::Solve,
            DemoArg::Eigen => Demo::Eigen,
            DemoArg::Complete => Demo::Complete,
        }
    }
}

fn parse_with<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

fn check(filter: Option<&str>) -> ExitCode {
    let outcomes = checks::run(filter);
    if outcomes.is_empty() {
        eprintln!("no suite matches {:?}; known suites: {}", filter.unwrap_or(""), checks::SUITES.join(", "));
        return ExitCode::from(2);
    }
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} passed, {failed} failed", outcomes.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn demo(which: Demo, steps: Option<usize>, step_size: Option<f64>, input: Option<PathBuf>) -> ttriem::Result<bool> {
    let x0 = match input {
        Some(path) => tt_read(path)?,
        None => which.default_start()?,
    };
    let steps = steps.unwrap_or(which.default_steps());
    let step_size = step_size.unwrap_or(which.default_step_size());
    let report = checks::run_demo(which, &x0, steps, step_size)?;
    for (k, f) in report.history.iter().enumerate() {
        println!("{k:>5} {f:.12e}");
    }
    if report.diverged {
        eprintln!("warning: objective grew tenfold over its start; stopped early");
    }
    let (met, line) = checks::judge_demo(which, &report)?;
    println!("{line}");
    Ok(met)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Check { filter } => return check(filter.as_deref()),
        Command::Bench { function, method, op, d, n, rx, rz, ra, trials, seed, out } => {
            let cfg = BenchConfig { function, method, op, d, n, rx, rz, ra, trials, seed, out };
            bench_run(&cfg).map(|records| {
                println!("{CSV_HEADER}");
                for r in &records {
                    println!("{}", r.csv_row());
                    if let Some(why) = &r.note {
                        eprintln!("{method} unavailable: {why}");
                    }
                }
            })
        }
        Command::Demo { which, steps, step_size, input } => demo(which.into(), steps, step_size, input).map(|met| {
            if !met {
                eprintln!("demo did not reach its target");
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
