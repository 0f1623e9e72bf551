use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use asyncnet::cli::{
    command_moments, command_simulate, command_stability, command_verify, parse_config,
    CommandOutput, ExitStatus, Overrides, MOMENT_SAMPLES, SUITES,
};
use asyncnet::Error;
use clap::{Args, Parser, Subcommand};

/// Stability analysis and Monte-Carlo simulation of asynchronous diffusion
/// networks.
///
/// Exit status: 0 when every check passes, 1 when a stability condition or
/// bound check fails, 2 on usage or configuration errors. The worker count
/// for parallel trials is read from ASYNCNET_THREADS; it never changes the
/// results.
#[derive(Parser, Debug)]
#[command(name = "asyncnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's outputs.directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace run.base_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replace run.n_trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Replace run.horizon.
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate the stability conditions and bound constants.
    Stability(Common),
    /// Compare analytic and Monte-Carlo moments of the random matrices.
    Moments(Common),
    /// Run the Monte-Carlo experiment and check it against the bounds.
    Simulate(Common),
    /// Run a named verification suite.
    Verify {
        #[command(flatten)]
        common: Common,
        /// One of: moments, lemmas, recursion, bounds, scaling, fourth, all.
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

fn threads_from_env() -> Result<Option<usize>, String> {
    match std::env::var("ASYNCNET_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(format!(
                "ASYNCNET_THREADS must be a positive integer, got `{v}`"
            )),
            Ok(n) => Ok(Some(n)),
        },
    }
}

fn run(cli: Cli) -> Result<CommandOutput, Error> {
    let threads = threads_from_env().map_err(Error::Unsupported)?;
    let (common, suite) = match &cli.command {
        Command::Stability(c) | Command::Moments(c) | Command::Simulate(c) => (c, None),
        Command::Verify { common, suite } => (common, Some(suite.as_str())),
    };
    if let Some(s) = suite {
        if !SUITES.contains(&s) {
            return Err(Error::Unsupported(format!(
                "unknown suite `{s}` (expected one of {})",
                SUITES.join(", ")
            )));
        }
    }
    let overrides = Overrides {
        seed: common.seed,
        trials: common.trials,
        horizon: common.horizon,
        threads,
    };
    let mut exp = parse_config(&common.config)?;
    overrides.apply(&mut exp);
    let out = common.out.clone().unwrap_or_else(|| exp.output_dir());
    match cli.command {
        Command::Stability(_) => command_stability(&exp, &out),
        Command::Moments(_) => command_moments(&exp, &out, MOMENT_SAMPLES),
        Command::Simulate(_) => command_simulate(&exp, &out, &overrides),
        Command::Verify { suite, .. } => command_verify(&exp, &suite, &out, &overrides),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                ExitStatus::UsageError.code() as u8
            } else {
                0
            });
        }
    };
    match run(cli) {
        Ok(out) => {
            // a closed stdout (e.g. piped into `head`) must not abort the run
            let mut stdout = std::io::stdout().lock();
            let _ = write!(stdout, "{}", out.message);
            for f in &out.files {
                let _ = writeln!(stdout, "wrote {}", f.display());
            }
            ExitCode::from(out.status.code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            let status = match e {
                Error::Io(_) | Error::Csv { .. } | Error::ConditionFailed(_) => 1,
                _ => ExitStatus::UsageError.code(),
            };
            ExitCode::from(status as u8)
        }
    }
}
