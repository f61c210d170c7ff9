//! `wiet`: solve single instances, run seeded sweeps, trace rate-energy
//! regions and run the verification suite.
//!
//! Exit status is 2 for configuration errors, 1 for failed verification or
//! runtime errors, 0 otherwise.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wiet_core::harness::{self, ExperimentConfig, HarnessError, RegionConfig, SolveConfig, VerifyConfig};
use wiet_core::Scheme;

#[derive(Parser, Debug)]
#[command(name = "wiet", version, about = "Transmit design for wireless information and energy transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated schemes, e.g. `Ideal,TDMS,PS`.
    #[arg(long, global = true, value_delimiter = ',', value_parser = parse_scheme)]
    scheme: Option<Vec<Scheme>>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; `WIET_THREADS` takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Solve one instance and print strategies and evaluations as JSON.
    Solve,
    /// Monte-Carlo sweep over an (eta, E) grid; writes CSV.
    Sweep,
    /// Ideal-scheme rate-energy region of one channel; writes CSV.
    Region,
    /// Cross-check solvers against oracles; nonzero exit on any violation.
    Verify,
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    s.parse::<Scheme>().map_err(|e| e.to_string())
}

enum Failure {
    Config(String),
    Run(String),
    Verification,
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Run(e.to_string())
        }
    }
}

fn io_run(e: io::Error) -> Failure {
    Failure::Run(e.to_string())
}

fn load<T: serde::de::DeserializeOwned>(path: Option<&Path>) -> Result<T, Failure> {
    let path = path.ok_or_else(|| Failure::Config("missing --config".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Ok(harness::parse_json(&text)?)
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Failure::Run(format!("{}: {e}", p.display())))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Solve => {
            let mut cfg: SolveConfig = load(cli.config.as_deref())?;
            if let (Some(seed), Some(g)) = (cli.seed, cfg.generate.as_mut()) {
                g.seed = seed;
            }
            if let Some(list) = &cli.scheme {
                cfg.schemes = list.clone();
            }
            let cs = cfg.channel_set()?;
            let results = harness::solve_all(&cs, &cfg.schemes, &cfg.options)?;
            let mut w = sink(cli.out.as_deref())?;
            serde_json::to_writer_pretty(&mut w, &results).map_err(|e| Failure::Run(e.to_string()))?;
            writeln!(w).and_then(|_| w.flush()).map_err(io_run)
        }
        Command::Sweep => {
            let mut cfg: ExperimentConfig = load(cli.config.as_deref())?;
            if let Some(seed) = cli.seed {
                cfg.base_seed = seed;
            }
            if let Some(list) = &cli.scheme {
                cfg.schemes = list.clone();
            }
            if cli.out.is_some() {
                cfg.output = cli.out.clone();
            }
            cfg.validate()?;
            let rows = harness::run_sweep(&cfg)?;
            let mut w = sink(cfg.output.as_deref())?;
            harness::write_sweep_csv(&rows, &mut w)?;
            w.flush().map_err(io_run)
        }
        Command::Region => {
            let mut cfg: RegionConfig = load(cli.config.as_deref())?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if cli.out.is_some() {
                cfg.output = cli.out.clone();
            }
            cfg.validate()?;
            let rows = harness::rate_energy_region(&cfg)?;
            let mut w = sink(cfg.output.as_deref())?;
            harness::write_region_csv(&cfg, &rows, &mut w)?;
            w.flush().map_err(io_run)
        }
        Command::Verify => {
            let mut cfg: VerifyConfig = match &cli.config {
                Some(p) => load(Some(p))?,
                None => VerifyConfig::default(),
            };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let report = harness::verify(&cfg)?;
            for c in &report.checks {
                eprintln!("{c}");
            }
            if let Some(p) = &cli.out {
                let mut w = sink(Some(p))?;
                serde_json::to_writer_pretty(&mut w, &report).map_err(|e| Failure::Run(e.to_string()))?;
                writeln!(w).and_then(|_| w.flush()).map_err(io_run)?;
            }
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Verification)
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let cli = Cli::parse();
    let threads = harness::thread_count(cli.threads);
    let outcome = match harness::with_threads(threads, || run(&cli)) {
        Ok(r) => r,
        Err(e) => Err(e.into()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Verification) => {
            eprintln!("verification failed");
            ExitCode::from(1)
        }
    }
}
