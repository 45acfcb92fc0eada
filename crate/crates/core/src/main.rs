use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use fracpot::experiment::{
    run_forward, sweep, sweep_summary_csv, write_forward, write_report, ExperimentConfig, Method, Problem,
    ReconstructionReport, SweepParam,
};
use fracpot::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// Potential reconstruction for time-fractional subdiffusion from lateral
/// Cauchy data.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Seed for the noise generator; overrides the config.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Neumann and Dirichlet forward problems at the target potential.
    Forward {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct the potential from synthetic data.
    Invert {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// kv or ls; defaults to the config.
        #[arg(long)]
        method: Option<Method>,
    },
    /// Repeat the reconstruction over values of one parameter.
    Sweep {
        config: PathBuf,
        /// rho, alpha or epsilon.
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        method: Option<Method>,
    },
}

fn exit_for(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    if err.is_numerical() {
        ExitCode::from(EXIT_NUMERICAL)
    } else {
        ExitCode::from(EXIT_CONFIG)
    }
}

fn load(path: &Path, seed: u64, method: Option<Method>) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::load(path)?;
    config.seed = seed;
    if let Some(m) = method {
        config.method = m;
    }
    Ok(config)
}

fn summarize(report: &ReconstructionReport) {
    eprintln!(
        "{:?}: {} iterations, status {:?}, relative error {:.3e} (initial {:.3e}), {:.1} s",
        report.method, report.iterations, report.status, report.final_error, report.initial_error, report.wall_time_s
    );
}

fn forward(config: &Path, out: &Path, seed: u64) -> Result<ExitCode, Error> {
    let config = load(config, seed, None)?;
    let run = run_forward(&config)?;
    write_forward(&run, out)?;
    Ok(ExitCode::SUCCESS)
}

fn invert(config: &Path, out: &Path, seed: u64, method: Option<Method>) -> Result<ExitCode, Error> {
    let config = load(config, seed, method)?;
    let start = Instant::now();
    let problem = Problem::new(&config)?;
    let outcome = problem.reconstruct(config.method, &config.cg_options());
    let report = ReconstructionReport::from_outcome(&problem, config.method, outcome, start.elapsed().as_secs_f64());
    write_report(&report, out)?;
    summarize(&report);
    if report.status.is_failure() {
        eprintln!("error: reconstruction stopped with status {:?}", report.status);
        return Ok(ExitCode::from(EXIT_NUMERICAL));
    }
    Ok(ExitCode::SUCCESS)
}

fn run_sweep(
    config: &Path,
    param: SweepParam,
    values: &[f64],
    out: &Path,
    seed: u64,
    method: Option<Method>,
) -> Result<ExitCode, Error> {
    let config = load(config, seed, method)?;
    if values.is_empty() {
        return Err(Error::InvalidParameter("no sweep values given".into()));
    }
    let results = sweep(&config, param, values);
    std::fs::create_dir_all(out)?;
    let mut code = 0u8;
    for (value, result) in values.iter().zip(&results) {
        match result {
            Ok(report) => {
                write_report(report, &out.join(format!("{}_{value}", param.name())))?;
                summarize(report);
                if report.status.is_failure() && code == 0 {
                    code = EXIT_NUMERICAL;
                }
            }
            Err(err) => {
                eprintln!("error: {} = {value}: {err}", param.name());
                code = if err.is_numerical() && code != EXIT_CONFIG { EXIT_NUMERICAL } else { EXIT_CONFIG };
            }
        }
    }
    std::fs::write(out.join("summary.csv"), sweep_summary_csv(param, values, &results))?;
    Ok(ExitCode::from(code))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Forward { config, out } => forward(config, out, cli.seed),
        Command::Invert { config, out, method } => invert(config, out, cli.seed, *method),
        Command::Sweep { config, param, values, out, method } => {
            run_sweep(config, *param, values, out, cli.seed, *method)
        }
    };
    result.unwrap_or_else(|err| exit_for(&err))
}
