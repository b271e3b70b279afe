use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mpjl::harness::{cmd_gen, cmd_report, cmd_verify, OutputFormat, RunConfig, Suite};
use mpjl::Error;

#[derive(Parser)]
#[command(
    name = "mpjl",
    version,
    about = "Verify Jacobians and measure factors of the Moore-Penrose inverse"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random rank-q instance with its SVD factors.
    Gen(RunArgs),
    /// Run a seeded verification suite.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Merge saved suite reports.
    Report {
        paths: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
        format: OutputFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    m: usize,
    /// Rank; defaults to min(n, m).
    #[arg(long)]
    q: Option<usize>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, env = "MPJL_DEFAULT_SEED", default_value_t = 0)]
    seed: u64,
    /// Override the suite's comparison tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long = "fd-step", default_value_t = 1e-5)]
    fd_step: f64,
    /// Explicit singular values, strictly decreasing.
    #[arg(long, value_delimiter = ',')]
    spectrum: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    format: OutputFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> RunConfig {
        RunConfig {
            n: self.n,
            m: self.m,
            q: self.q.unwrap_or(self.n.min(self.m)),
            trials: self.trials,
            seed: self.seed,
            tol: self.tol,
            fd_step: self.fd_step,
            spectrum: self.spectrum.clone(),
        }
    }
}

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_DEGENERATE: u8 = 3;

fn exit_code(err: &Error) -> u8 {
    if err.is_numerical_degeneracy() {
        EXIT_DEGENERATE
    } else {
        EXIT_INVALID
    }
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Gen(args) => {
            let instance = cmd_gen(&args.config())?;
            emit(&instance.to_json(), args.out.as_ref())?;
            Ok(0)
        }
        Command::Verify { suite, args } => {
            let result = cmd_verify(suite, &args.config())?;
            emit(&result.render(args.format), args.out.as_ref())?;
            eprintln!(
                "{}: {}/{} passed in {:.2?}",
                result.suite, result.summary.passed, result.summary.total, result.wall_time
            );
            Ok(if result.all_passed() {
                0
            } else {
                EXIT_CHECK_FAILED
            })
        }
        Command::Report { paths, format, out } => {
            let merged = cmd_report(&paths)?;
            emit(&merged.render(format), out.as_ref())?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
