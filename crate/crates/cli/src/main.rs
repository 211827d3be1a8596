use clap::{Args, Parser, Subcommand};
use csbubble::config::{preset, RunConfig, PRESETS};
use csbubble::Error;
use std::path::PathBuf;
use std::process::ExitCode;

mod commands;

#[derive(Parser, Debug)]
#[command(name = "csbubble", version, about = "Multi-bubble solutions of a skew-symmetric Chern-Simons system on a flat torus")]
struct Cli {
    /// Worker threads for the numerical kernels.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Repeat for more log output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Input {
    /// TOML run configuration.
    #[arg(value_name = "CONFIG", required_unless_present = "preset", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration instead of a file.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    preset: Option<String>,
    /// Overrides `output`.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Overrides `grid.n`.
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Robin constant, splitting check and a grid table of G(·, p) at the first vortex.
    Green(Input),
    /// Critical points of G₁* + G₂* with their Hessian type and assumption flags.
    Critpoints(Input),
    /// 𝒟⁽²⁾ with its extrapolation table at every critical point (or at the configured centers).
    Dsq {
        #[command(flatten)]
        input: Input,
        /// Evaluate at `centers` only, without a search.
        #[arg(long)]
        at_centers: bool,
    },
    /// Reduced heights and the explicit approximate solution at `solve.eps`.
    Approx(Input),
    /// Full solve at `solve.eps`.
    Solve(Input),
    /// Continuation in ε with a checkpoint after every accepted step.
    Sweep {
        #[command(flatten)]
        input: Input,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this many accepted steps.
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Measured norm of the projected inverse for each μ in `linops.mus`.
    LinopsBound(Input),
    /// Sweep table, certificate and plots from a checkpoint.
    Report {
        #[command(flatten)]
        input: Input,
        /// Defaults to checkpoint.json in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Exit with status 1 unless every certificate flag passes.
        #[arg(long)]
        strict: bool,
    },
}

/// Failure classes mapped to exit codes 2 and 1.
pub enum Failure {
    Usage(Error),
    Computation(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e),
            other => Failure::Computation(other),
        }
    }
}

impl Input {
    /// Loads, applies the overrides and validates.
    pub fn load(&self) -> Result<RunConfig, Failure> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(p), _) => RunConfig::load(p).map_err(Failure::Usage)?,
            (None, Some(name)) => preset(name).map_err(Failure::Usage)?,
            (None, None) => unreachable!("clap requires one input"),
        };
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        if let Some(n) = self.grid {
            cfg.grid.n = n;
        }
        cfg.validate().map_err(|e| match e {
            Error::Config(m) if self.grid.is_some() => Failure::Usage(Error::Config(format!("{m} (--grid)"))),
            other => Failure::Usage(other),
        })?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: cannot start {} threads: {e}", cli.threads);
        return ExitCode::from(1);
    }
    let res = match &cli.command {
        Command::Green(i) => commands::green(i),
        Command::Critpoints(i) => commands::critpoints(i),
        Command::Dsq { input, at_centers } => commands::dsq(input, *at_centers),
        Command::Approx(i) => commands::approx(i),
        Command::Solve(i) => commands::solve(i),
        Command::Sweep { input, resume, max_steps } => commands::sweep(input, *resume, *max_steps),
        Command::LinopsBound(i) => commands::linops_bound(i),
        Command::Report { input, checkpoint, strict } => commands::report(input, checkpoint.as_deref(), *strict),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Computation(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
