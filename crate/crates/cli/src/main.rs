use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ias_core::fd::{fd_check, ipa_gradient};
use ias_core::output::{
    write_events_csv, write_fd_csv, write_gradient_csv, write_perturb_csv, write_sweep_csv,
    write_trajectory_csv,
};
use ias_core::sweep::{perturbation_study, replication_seeds, run_grid, sensitivity_at, thread_pool};
use ias_core::{
    default_config, load_config, run_sample_path, Error, GridRange, RunConfig, ThetaIndex, Tolerance,
    Verdict,
};

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

/// Simulate intermittent androgen suppression and estimate cost sensitivities.
#[derive(Parser, Debug)]
#[command(name = "ias-ipa", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON configuration file; the built-in example configuration if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Switch off every noise source.
    #[arg(long)]
    deterministic: bool,
    /// Worker threads; 0 reads IAS_IPA_THREADS, then uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write one sample path as a trajectory CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write the event log to this path.
        #[arg(long)]
        events: Option<PathBuf>,
        /// Record every n-th grid step (overrides record_stride).
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Write the IPA cost gradient, averaged over replications.
    Grad {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        reps: usize,
    },
    /// Compare IPA against common-random-number central differences.
    Fdcheck {
        #[command(flatten)]
        common: Common,
        /// Relative tolerance for deterministic runs [default: 0.05]. Noisy
        /// runs use the two-standard-error rule instead.
        #[arg(long)]
        tol: Option<f64>,
        /// Replications [default: 1 when deterministic, 100 otherwise].
        #[arg(long)]
        reps: Option<usize>,
        /// Parameter indices to check, 1..=6.
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4, 5, 6])]
        index: Vec<usize>,
        /// Perturbation size as a fraction of each parameter's value.
        #[arg(long, default_value_t = 1e-4)]
        rel_delta: f64,
    },
    /// Sensitivities over a (theta1, theta2) grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// theta1 range as lo:hi:step, or a single value.
        #[arg(long, default_value = "1.5:7.5:1.0")]
        theta1: GridRange,
        /// theta2 range as lo:hi:step, or a single value.
        #[arg(long, default_value = "8:15:1.0")]
        theta2: GridRange,
        #[arg(long, default_value_t = 10)]
        reps: usize,
    },
    /// Scenario map under percentage changes of model parameters.
    Perturb {
        #[command(flatten)]
        common: Common,
        /// Parameter indices to perturb, 3..=6.
        #[arg(long, value_delimiter = ',', default_values_t = [3, 4, 5, 6])]
        index: Vec<usize>,
        /// Percent changes from nominal.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true,
              default_values_t = [-30.0, -15.0, 0.0, 15.0, 30.0])]
        percents: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        reps: usize,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate { common, .. }
            | Command::Grad { common, .. }
            | Command::Fdcheck { common, .. }
            | Command::Sweep { common, .. }
            | Command::Perturb { common, .. } => common,
        }
    }
}

enum Failure {
    Core(Error),
    Validation(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version; a closed pipe is not an error here.
            let _ = write!(io::stdout(), "{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let mut lines = text.trim_end().lines();
            let first = lines.next().unwrap_or_default();
            eprintln!("ERROR:usage:{}", first.strip_prefix("error: ").unwrap_or(first));
            for line in lines {
                eprintln!("{line}");
            }
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("ERROR:{}:{e}", e.category());
            ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_USAGE })
        }
        Err(Failure::Validation(msg)) => {
            eprintln!("ERROR:validation:{msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    let common = command.common();
    let config = load(common)?;
    let threads = common.threads;
    let out = common.out.clone();
    let pool = thread_pool(threads)?;
    pool.install(|| dispatch(command, config, out, threads))
}

fn load(common: &Common) -> Result<RunConfig, Error> {
    let mut config = match &common.config {
        Some(path) => load_config(path)?,
        None => default_config(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if common.deterministic {
        config = config.deterministic();
    }
    Ok(config)
}

fn dispatch(command: Command, mut config: RunConfig, out: Option<PathBuf>, threads: usize) -> Result<(), Failure> {
    match command {
        Command::Simulate { events, stride, .. } => {
            if let Some(stride) = stride {
                config.record_stride = stride;
            }
            let traj = run_sample_path(&config, config.seed)?;
            emit(out, |w| write_trajectory_csv(w, &traj))?;
            if let Some(path) = events {
                emit(Some(path), |w| write_events_csv(w, &traj))?;
            }
        }
        Command::Grad { reps, .. } => {
            let grad = if reps == 1 {
                ipa_gradient(&config, config.seed)?
            } else {
                let s = sensitivity_at(&config, reps)?;
                if s.n_ok == 0 {
                    // Surface the first replication's own error.
                    ipa_gradient(&config, replication_seeds(config.seed, 1)[0])?;
                }
                if s.n_diverged > 0 {
                    eprintln!("WARN: {} of {reps} replications diverged and were excluded", s.n_diverged);
                }
                s.grad_mean
            };
            emit(out, |w| write_gradient_csv(w, &grad))?;
        }
        Command::Fdcheck { tol, reps, index, rel_delta, .. } => {
            let deterministic = config.noise.is_silent();
            let tolerance = if deterministic {
                Tolerance::Relative(tol.unwrap_or(5e-2))
            } else if tol.is_some() {
                return Err(Error::Config("--tol applies to deterministic runs only".into()).into());
            } else {
                Tolerance::StandardErrors(2.0)
            };
            let reps = reps.unwrap_or(if deterministic { 1 } else { 100 });
            if reps == 0 {
                return Err(Error::Config("reps >= 1 violated".into()).into());
            }
            if rel_delta.is_nan() || rel_delta <= 0.0 {
                return Err(Error::Config("rel_delta > 0 violated".into()).into());
            }
            let seeds = if deterministic { vec![config.seed; reps] } else { replication_seeds(config.seed, reps) };
            let mut reports = Vec::new();
            for i in index {
                let i = ThetaIndex::new(i)?;
                let delta = rel_delta * config.params.theta(i).abs();
                reports.extend(fd_check(&config, &[i], &seeds, Some(delta), tolerance)?);
            }
            emit(out, |w| write_fd_csv(w, &reports))?;
            let failed: Vec<String> = reports
                .iter()
                .filter(|r| r.verdict == Verdict::Fail)
                .map(|r| r.theta_index.to_string())
                .collect();
            if !failed.is_empty() {
                return Err(Failure::Validation(format!("IPA and FD disagree for theta {}", failed.join(", "))));
            }
        }
        Command::Sweep { theta1, theta2, reps, .. } => {
            let grid = run_grid(&config, &theta1, &theta2, reps, threads)?;
            emit(out, |w| write_sweep_csv(w, &grid.records))?;
            for a in &grid.argmin {
                eprintln!(
                    "argmin |dL/dtheta{}|: theta1 = {}, theta2 = {}, value = {:e}",
                    a.theta_index, a.theta1, a.theta2, a.value
                );
            }
        }
        Command::Perturb { index, percents, reps, .. } => {
            let mut rows = Vec::new();
            for i in index {
                rows.extend(perturbation_study(&config, ThetaIndex::new(i)?, &percents, reps)?);
            }
            emit(out, |w| write_perturb_csv(w, &rows))?;
        }
    }
    Ok(())
}

/// Writes through `f` to `path`, or to standard output.
fn emit<F>(path: Option<PathBuf>, f: F) -> Result<(), Failure>
where
    F: FnOnce(&mut dyn Write) -> ias_core::Result<()>,
{
    match path {
        Some(path) => {
            let file = File::create(&path)
                .map_err(|e| Error::Config(format!("cannot create {}: {e}", path.display())))?;
            let mut w = BufWriter::new(file);
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            f(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}
