use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand};

mod commands;
mod settings;

use settings::Settings;

/// Saliency detection with a fully convolutional network.
#[derive(Parser, Debug)]
#[command(name = "salnet", version, about)]
pub struct Cli {
    /// Worker threads for the numeric kernels; 1 gives bitwise-reproducible runs [default: all cores]
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// key=value file consulted for any option not given as a flag
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Only log warnings and errors
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on a manifest and write a checkpoint
    Train(commands::TrainArgs),
    /// Write one grayscale saliency map per input image
    Predict(commands::PredictArgs),
    /// Precision, recall, F-measure and MAE against ground-truth masks
    Eval(commands::EvalArgs),
    /// Dataset-averaged precision-recall curve
    PrCurve(commands::PrCurveArgs),
    /// Compare analytic and finite-difference gradients of every kernel
    Gradcheck(commands::GradcheckArgs),
}

/// What a command concluded, mapped onto the process exit code.
pub enum Outcome {
    Ok,
    /// A check ran to completion and failed.
    CheckFailed,
}

fn run(cli: Cli, matches: &ArgMatches) -> salnet_core::Result<Outcome> {
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    let mut s = Settings::new(sub, cli.config.as_deref())?;
    let threads = cli.threads.unwrap_or(0);
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| salnet_core::Error::Usage(format!("thread pool: {e}")))?;
    }
    log::info!("threads = {}", rayon::current_num_threads());
    match cli.command {
        Command::Train(a) => commands::train(a, &mut s),
        Command::Predict(a) => commands::predict(a, &mut s),
        Command::Eval(a) => commands::eval(a, &mut s),
        Command::PrCurve(a) => commands::pr_curve(a, &mut s),
        Command::Gradcheck(a) => commands::gradcheck(a, &mut s),
    }
}

fn main() -> ExitCode {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            // --help and --version land here too and exit 0
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli, &matches) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
