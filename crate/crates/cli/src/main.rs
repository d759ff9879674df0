use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

use commands::{CliError, Context};

#[derive(Parser, Debug)]
#[command(name = "guide", version, about = "Likelihood-guided inverse design of response curves")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Replace a named seed, e.g. `design=7`. Repeatable.
    #[arg(long = "seed-override", value_name = "NAME=VALUE", global = true)]
    seed_override: Vec<String>,

    /// Output directory. Replaces `paths.dataset` for gen-data, the model
    /// directory for train and `paths.out_dir` otherwise.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Suppress progress and summary output.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample designs, run the oracle and write train/test tables.
    GenData,
    /// Fit the surrogate ensemble and write the model file.
    Train,
    /// Support search followed by posterior sampling for one target.
    Design {
        /// Target JSON; defaults to `paths.target`.
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Validate a design table against the oracle and report metrics.
    Evaluate {
        #[arg(long)]
        designs: PathBuf,
        /// Target JSON; defaults to `paths.target`.
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// GUIDe vs GA on targets drawn from the test split.
    Benchmark,
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("GUIDE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| CliError::usage(format!("GUIDE_THREADS must be a positive integer, got {v:?}")))?;
    if n == 0 {
        return Err(CliError::usage("GUIDE_THREADS must be a positive integer"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let config = cli
        .config
        .ok_or_else(|| CliError::usage("--config is required"))?;
    let ctx = Context::load(&config, &cli.seed_override, cli.out, cli.quiet)?;
    match cli.command {
        Command::GenData => commands::gen_data(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Design { target } => commands::design(&ctx, target),
        Command::Evaluate { designs, target } => commands::evaluate(&ctx, &designs, target),
        Command::Benchmark => commands::benchmark(&ctx),
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Refused) => ExitCode::from(10),
        Err(CliError::Failed { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
