//! Command-line driver.
//!
//! Exit status: 0 when a run ends normally or on a limit, 2 on a timelock
//! or instantaneous divergence, 1 on tool errors (files, syntax, options).

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hytccp_core::check::check_program;
use hytccp_core::num::{parse_rational, Rational};
use hytccp_core::simulator::{
    explore, program_hash, run, ExploreOptions, Policy, RunOptions, DEFAULT_DIVERGENCE_BUDGET,
};
use hytccp_core::syntax::{parse_program, Program};

use crate::trace_format::{write_csv, write_jsonl, write_report};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_PATHOLOGY: i32 = 2;

pub const BUDGET_ENV: &str = "HYTCCP_DIVERGENCE_BUDGET";

#[derive(Parser, Debug)]
#[command(name = "hytccp", version, about = "Interpreter and simulator for Hy-tccp programs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a program and write its trace.
    Run(RunArgs),
    /// Enumerate reachable configurations breadth-first.
    Explore(RunArgs),
    /// Parse and run the static checks.
    Check { input: PathBuf },
    /// Parse and pretty-print.
    Parse { input: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    First,
    Random,
    Exhaustive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Jsonl,
    Csv,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = PolicyArg::First)]
    pub policy: PolicyArg,
    /// Exploration depth (exhaustive policy and `explore`).
    #[arg(long, default_value_t = 5)]
    pub depth: usize,
    /// Extra delays sampled inside each continuous step while exploring.
    #[arg(long, default_value_t = 0)]
    pub time_samples: usize,
    #[arg(long, value_parser = rational_arg, default_value = "36000")]
    pub max_time: Rational,
    #[arg(long, default_value_t = 1_000_000)]
    pub max_steps: usize,
    /// Longest single continuous step.
    #[arg(long, value_parser = rational_arg, default_value = "3600")]
    pub horizon: Rational,
    #[arg(long, value_enum, default_value_t = Format::Jsonl)]
    pub format: Format,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn rational_arg(s: &str) -> std::result::Result<Rational, String> {
    let q = parse_rational(s).ok_or_else(|| format!("`{}` is not a rational number", s))?;
    if q <= Rational::from_integer(0.into()) {
        return Err(format!("`{}` must be positive", s));
    }
    Ok(q)
}

fn divergence_budget() -> Result<usize> {
    match std::env::var(BUDGET_ENV) {
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| format!("{} must be a positive integer", BUDGET_ENV))?;
            if n == 0 {
                bail!("{} must be a positive integer", BUDGET_ENV);
            }
            Ok(n)
        }
        Err(_) => Ok(DEFAULT_DIVERGENCE_BUDGET),
    }
}

pub fn load(path: &Path) -> Result<Program> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_program(&text).map_err(|e| anyhow!("{}:{}", path.display(), e))
}

impl RunArgs {
    pub fn run_options(&self) -> Result<RunOptions> {
        let policy = match self.policy {
            PolicyArg::First => Policy::First,
            PolicyArg::Random => Policy::Random,
            PolicyArg::Exhaustive => Policy::Exhaustive { depth: self.depth },
        };
        Ok(RunOptions {
            max_time: self.max_time.clone(),
            max_steps: self.max_steps,
            horizon: self.horizon.clone(),
            policy,
            seed: self.seed,
            divergence_budget: divergence_budget()?,
        })
    }

    fn explore_options(&self) -> ExploreOptions {
        ExploreOptions {
            depth: self.depth,
            time_samples: self.time_samples,
            horizon: self.horizon.clone(),
            ..ExploreOptions::default()
        }
    }

    fn sink(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => {
                Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?))
            }
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }
}

fn cmd_run(args: &RunArgs) -> Result<i32> {
    if args.policy == PolicyArg::Exhaustive {
        return cmd_explore(args);
    }
    let program = load(&args.input)?;
    let options = args.run_options()?;
    let trace = run(&program, &options);
    let mut out = args.sink()?;
    match args.format {
        Format::Jsonl => write_jsonl(&mut out, &trace)?,
        Format::Csv => write_csv(&mut out, &trace)?,
    }
    out.flush()?;
    let kind = trace.terminal().expect("every trace ends with a terminal event");
    let end = trace.events.last().map(|e| e.clock().to_string()).unwrap_or_default();
    eprintln!("{}: {} after {} events at t={}", args.input.display(), kind, trace.events.len(), end);
    Ok(if kind.is_pathology() { EXIT_PATHOLOGY } else { EXIT_OK })
}

fn cmd_explore(args: &RunArgs) -> Result<i32> {
    if args.format == Format::Csv {
        bail!("exploration reports are written as jsonl only");
    }
    let program = load(&args.input)?;
    let report = explore(&program, &args.explore_options());
    let mut out = args.sink()?;
    write_report(&mut out, &program_hash(&program), &report)?;
    out.flush()?;
    eprintln!(
        "{}: {} states within depth {}{}",
        args.input.display(),
        report.states.len(),
        report.depth,
        if report.complete { "" } else { " (incomplete: state cap reached)" }
    );
    Ok(EXIT_OK)
}

fn cmd_check(input: &Path) -> Result<i32> {
    let program = load(input)?;
    let diags = check_program(&program);
    if diags.is_empty() {
        eprintln!("{}: ok", input.display());
        return Ok(EXIT_OK);
    }
    for d in &diags {
        eprintln!("{}: {}", input.display(), d);
    }
    Ok(EXIT_ERROR)
}

fn cmd_parse(input: &Path) -> Result<i32> {
    let program = load(input)?;
    print!("{}", program);
    Ok(EXIT_OK)
}

/// Runs the parsed command line and returns the exit status.
pub fn execute(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Explore(a) => cmd_explore(a),
        Command::Check { input } => cmd_check(input),
        Command::Parse { input } => cmd_parse(input),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {:#}", e);
            EXIT_ERROR
        }
    }
}

pub fn main() -> i32 {
    match Cli::try_parse() {
        Ok(cli) => execute(&cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}
