mod commands;
mod config;
mod error;
mod output;
mod svg;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CommandOutput, Context};
use config::{LoadedConfig, Strictness};
use error::{CliError, CliResult};

/// Zero-field ODMR of molecular triplets: spectra, kinetics, global fits and echo analysis.
///
/// Errors are reported as one JSON object on the last line of stderr. Exit code 2 means
/// a configuration or input problem, 3 a numerical failure. Nothing is written unless
/// the command succeeds.
#[derive(Parser, Debug)]
#[command(name = "odmr", version)]
struct Cli {
    /// Project configuration (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; defaults to paths.out or ./odmr-out.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed for noise injection and fit restarts.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Reject unknown keys in JSON inputs (default).
    #[arg(long, global = true, conflicts_with = "lenient")]
    strict: bool,
    /// Warn about unknown keys instead of rejecting them.
    #[arg(long, global = true)]
    lenient: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stick and broadened zero-field spectrum of `spin_system`.
    Spectrum,
    /// Simulate the 22-curve relaxation measurement plan for `kinetics`.
    Simulate,
    /// Global fit of a curve directory written by `simulate` (or laid out the same way).
    Fit {
        /// Directory holding plan.json and the curve files.
        #[arg(long, value_name = "DIR")]
        curves: Option<PathBuf>,
        /// all, A, B or comma-separated curve labels.
        #[arg(long, value_name = "SUBSET")]
        curves_subset: Option<String>,
    },
    /// Hahn-echo T2 and ESEEM analysis of a trace CSV (time_us, amplitude).
    Eseem {
        #[arg(long, value_name = "CSV")]
        trace: Option<PathBuf>,
    },
    /// Compare two sensitivity input files.
    Sensitivity {
        baseline: Option<PathBuf>,
        candidate: Option<PathBuf>,
    },
    /// List the built-in parameter presets.
    Presets,
}

fn fail(e: &CliError) -> ExitCode {
    log::debug!("{e}");
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code() as u8)
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    let strictness = if cli.lenient { Strictness::Lenient } else { Strictness::Strict };
    let cfg = LoadedConfig::load(cli.config.as_deref(), strictness)?;
    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.config.paths.out.as_ref().map(|p| cfg.resolve(p)));
    let ctx = Context {
        cfg,
        strictness,
        seed: cli.seed,
    };
    let out: CommandOutput = match &cli.command {
        Command::Spectrum => commands::spectrum::run(&ctx)?,
        Command::Simulate => commands::simulate::run(&ctx)?,
        Command::Fit { curves, curves_subset } => {
            commands::fit::run(&ctx, curves.as_ref(), curves_subset.as_deref())?
        }
        Command::Eseem { trace } => commands::eseem::run(&ctx, trace.as_ref())?,
        Command::Sensitivity { baseline, candidate } => {
            commands::sensitivity::run(&ctx, baseline.as_ref(), candidate.as_ref())?
        }
        Command::Presets => commands::presets::run(&ctx, out_dir.is_some())?,
    };
    if !out.files.is_empty() {
        let dir = out_dir.unwrap_or_else(|| PathBuf::from("odmr-out"));
        let n = out.files.len();
        let written = out.files.commit(&dir)?;
        log::info!("wrote {n} files under {}", dir.display());
        for p in written {
            log::debug!("  {}", p.display());
        }
    }
    if let Some(text) = out.stdout {
        let mut stdout = std::io::stdout().lock();
        let _ = stdout.write_all(text.as_bytes());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                e.exit();
            }
            return fail(&CliError::config(e.to_string().trim_end()));
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
