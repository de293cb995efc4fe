//! `dprc` command-line driver.
//!
//! Exit status: 0 success, 2 configuration or parse error, 3 numerical alarm,
//! 4 domain error. Failures print one `error kind=... msg=...` line on stderr.

mod commands;
mod config;
mod report;

use clap::{Parser, Subcommand};
use commands::*;
use config::{load, CliError, CliResult};
use std::io::Write as _;
use std::path::PathBuf;

const GLOBAL_KEYS: [&str; 3] = ["seed", "out", "format"];

#[derive(Parser, Debug)]
#[command(name = "dprc", version, about = "DP-SGD with randomized clipping: estimators, envelopes, accounting, costs")]
struct Cli {
    /// Flat TOML job file; flags override its keys
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Report path; stdout when absent
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Report format: csv | json [default: per subcommand]
    #[arg(long, global = true)]
    format: Option<String>,
    /// Worker threads [default: available parallelism]
    #[arg(long, global = true, env = "DPRC_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    Estimate(EstimateArgs),
    Envelope(EnvelopeArgs),
    Xplus(XplusArgs),
    Account(AccountArgs),
    Calibrate(CalibrateArgs),
    Train(TrainArgs),
    Cost(CostArgs),
}

fn merged<T: serde::de::DeserializeOwned + Default>(
    cli: &Cli,
    flags: T,
    merge: impl FnOnce(T, T) -> T,
) -> CliResult<(T, config::GlobalKeys)> {
    let (file, globals) = load::<T>(cli.config.as_deref(), &GLOBAL_KEYS)?;
    Ok((merge(flags, file), globals))
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Core(dprc::Error::Domain("--threads must be positive".into())));
        }
        rayon_init(n)?;
    }
    let (report, globals) = match &cli.command {
        Command::Estimate(a) => {
            let (a, g) = merged(&cli, a.clone(), EstimateArgs::merge)?;
            let (seed, fmt) = resolve(&cli, &g)?;
            (estimate(a, seed, fmt)?, g)
        }
        Command::Envelope(a) => {
            let (a, g) = merged(&cli, a.clone(), EnvelopeArgs::merge)?;
            let (_, fmt) = resolve(&cli, &g)?;
            (envelope_cmd(a, fmt)?, g)
        }
        Command::Xplus(a) => {
            let (a, g) = merged(&cli, a.clone(), XplusArgs::merge)?;
            let (_, fmt) = resolve(&cli, &g)?;
            (xplus(a, fmt)?, g)
        }
        Command::Account(a) => {
            let (a, g) = merged(&cli, a.clone(), AccountArgs::merge)?;
            let (_, fmt) = resolve(&cli, &g)?;
            (account(a, fmt)?, g)
        }
        Command::Calibrate(a) => {
            let (a, g) = merged(&cli, a.clone(), CalibrateArgs::merge)?;
            let (_, fmt) = resolve(&cli, &g)?;
            (calibrate(a, fmt)?, g)
        }
        Command::Train(a) => {
            let (a, g) = merged(&cli, a.clone(), TrainArgs::merge)?;
            let (seed, fmt) = resolve(&cli, &g)?;
            (train(a, seed, fmt)?, g)
        }
        Command::Cost(a) => {
            let (a, g) = merged(&cli, a.clone(), CostArgs::merge)?;
            let (_, fmt) = resolve(&cli, &g)?;
            (cost(a, fmt)?, g)
        }
    };
    match cli.out.clone().or(globals.out) {
        Some(path) => std::fs::write(&path, report)
            .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(report.as_bytes());
            Ok(())
        }
    }
}

fn resolve(cli: &Cli, g: &config::GlobalKeys) -> CliResult<(u64, Option<Format>)> {
    let seed = cli.seed.or(g.seed).unwrap_or(0);
    let fmt = cli.format.clone().or(g.format.clone()).map(|s| s.parse()).transpose()?;
    Ok((seed, fmt))
}

fn rayon_init(n: usize) -> CliResult<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::config(format!("thread pool: {e}")))
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("{}", e.line());
        std::process::exit(e.exit_code());
    }
}
