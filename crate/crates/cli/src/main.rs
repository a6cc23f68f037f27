use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use freezecast_cli::config::read_pairs;
use freezecast_cli::{commands, CliError, RunConfig};

#[derive(Parser)]
#[command(
    name = "freezecast",
    version,
    about = "Kaplan-Meier time-to-hard-freeze forecasts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    flags: Flags,
}

#[derive(Args)]
struct Flags {
    /// Flat `key = value` configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Initialization day, MM-DD
    #[arg(long, global = true)]
    init_date: Option<String>,
    #[arg(long, global = true)]
    horizon: Option<usize>,
    /// Freeze threshold in °C
    #[arg(long, global = true, allow_negative_numbers = true)]
    threshold: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; runs go to <out>/run-<stamp>
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate the synthetic scenario
    Synth,
    /// Post-process the raw ensemble
    Postprocess,
    /// Build survival curves
    Forecast,
    /// Score curves and rank calibration
    Verify,
    /// Emit plot tables (and SVG when `svg = true`)
    Plotdata,
    /// All stages in order
    Run,
}

fn resolve(flags: &Flags) -> Result<RunConfig, CliError> {
    let mut pairs = match &flags.config {
        Some(path) => read_pairs(path)?,
        None => BTreeMap::new(),
    };
    let mut set = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            pairs.insert(k.to_string(), v);
        }
    };
    set("init_date", flags.init_date.clone());
    set("horizon", flags.horizon.map(|h| h.to_string()));
    set("threshold", flags.threshold.map(|t| t.to_string()));
    set("seed", flags.seed.map(|s| s.to_string()));
    set("out", flags.out.as_ref().map(|p| p.display().to_string()));
    RunConfig::from_pairs(&pairs)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = resolve(&cli.flags).and_then(|cfg| match cli.command {
        Command::Synth => commands::cmd_synth(&cfg),
        Command::Postprocess => commands::cmd_postprocess(&cfg),
        Command::Forecast => commands::cmd_forecast(&cfg),
        Command::Verify => commands::cmd_verify(&cfg),
        Command::Plotdata => commands::cmd_plotdata(&cfg),
        Command::Run => commands::cmd_run(&cfg),
    });
    match result {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
