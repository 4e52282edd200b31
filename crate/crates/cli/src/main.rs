//! `easloc`: earliest-activation-site localization experiments.
//!
//! Exit codes: 0 success, 1 configuration error, 2 compute error,
//! 3 benchmark finished with failed runs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use easloc::experiment::{self, ExperimentConfig, Layout, Mode};
use easloc::Error;

#[derive(Parser, Debug)]
#[command(name = "easloc", version, about = "Earliest-activation-site localization with manifold Bayesian optimization")]
struct Cli {
    /// Experiment configuration (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the configured one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the HF and LF meshes.
    GenMesh,
    /// Compute eigenbases and lead fields for both fidelities.
    Preprocess {
        /// Recompute even when the artifacts are up to date.
        #[arg(long)]
        force: bool,
    },
    /// Simulate the reference ECG at the configured truth.
    GroundTruth,
    /// One BO run.
    Run {
        #[arg(long, value_enum)]
        mode: CliMode,
        /// Run seed; the configured `bo.seed` when omitted.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Matched-seed SF and MF runs over the configured seed list.
    Benchmark,
    /// Exhaustive LF loss over all nodes, certifying existing runs.
    LossMap,
    /// Print the effective configuration.
    ShowConfig,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CliMode {
    Sf,
    Mf,
}

impl From<CliMode> for Mode {
    fn from(m: CliMode) -> Mode {
        match m {
            CliMode::Sf => Mode::Sf,
            CliMode::Mf => Mode::Mf,
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    Ok(cfg)
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn execute(cli: &Cli) -> Result<ExitCode, Error> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::GenMesh => {
            let r = experiment::gen_mesh(&cfg)?;
            println!("{}", json(&r));
        }
        Command::Preprocess { force } => {
            let r = experiment::preprocess(&cfg, &Layout::new(&cfg.output.dir), *force)?;
            if r.up_to_date {
                println!("preprocess: up-to-date ({})", Layout::new(&cfg.output.dir).preprocess_dir().display());
            }
            println!("{}", json(&r));
        }
        Command::GroundTruth => {
            let r = experiment::ground_truth(&cfg)?;
            println!("{}", json(&r));
        }
        Command::Run { mode, seed } => {
            let r = experiment::run(&cfg, (*mode).into(), seed.unwrap_or(cfg.bo.seed))?;
            println!("{}", json(&r));
        }
        Command::Benchmark => {
            let r = experiment::benchmark(&cfg)?;
            println!("{}", json(&(&r.sf, &r.mf)));
            println!("wall time: {:.1} s", r.wall_seconds);
            if r.failures() > 0 {
                eprintln!("benchmark: {} of {} runs failed", r.failures(), r.rows.len());
                return Ok(ExitCode::from(3));
            }
        }
        Command::LossMap => {
            let r = experiment::loss_map(&cfg)?;
            println!("{}", json(&r));
        }
        Command::ShowConfig => print!("{}", cfg.to_toml()),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                log::error!("  caused by: {s}");
                src = s.source();
            }
            match e.root() {
                Error::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
