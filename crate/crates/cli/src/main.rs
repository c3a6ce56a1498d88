mod commands;
mod config;
mod plot;
mod table;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use commands::Report;
use config::{config_hash, FileConfig, DEFAULT_SEED};
use table::Provenance;

const EXIT_USAGE: u8 = 1;
const EXIT_FAILURE: u8 = 2;
const OUT_DIR_ENV: &str = "PRIVCOMM_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "privcomm",
    version,
    about = "Experiments on differentially-private agent communication"
)]
struct Cli {
    /// TOML configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory. Falls back to $PRIVCOMM_OUT_DIR, then stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for Monte-Carlo work.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: Option<u16>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Also write SVG plots (requires an output directory).
    #[arg(long, global = true)]
    plot: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Noise variance for a privacy budget over a grid of epsilons.
    Calibrate,
    /// Naive and de-biasing receivers in the binary sums game.
    BinarySums,
    /// Best-response dynamics in the two-player privacy game.
    Equilibrium,
    /// Potential-game check and equilibrium of the multi-round game.
    MultiRound,
    /// Noise-oblivious versus noise-aware Gaussian senders.
    Sender,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Calibrate => "calibrate",
            Command::BinarySums => "binary-sums",
            Command::Equilibrium => "equilibrium",
            Command::MultiRound => "multi-round",
            Command::Sender => "sender",
        }
    }
}

/// An error that maps to the oracle-failure exit code.
#[derive(Debug)]
struct OracleFailure(Vec<String>);

impl std::fmt::Display for OracleFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0.join("; "))
    }
}

impl std::error::Error for OracleFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<OracleFailure>().is_some() {
        return EXIT_FAILURE;
    }
    match err.downcast_ref::<privcomm::Error>() {
        Some(
            privcomm::Error::CalibrationInfeasible { .. }
            | privcomm::Error::InfeasibleOrder { .. }
            | privcomm::Error::Evaluation(_),
        ) => EXIT_FAILURE,
        _ => EXIT_USAGE,
    }
}

fn run_command<T: Serialize>(
    command: Command,
    seed: u64,
    section: &T,
    f: impl FnOnce() -> Result<Report>,
) -> Result<(Provenance, Report)> {
    let prov = Provenance {
        command: command.name().to_string(),
        config_sha256: config_hash(command.name(), seed, section)?,
        seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    Ok((prov, f()?))
}

fn execute(cli: &Cli) -> Result<(Provenance, Report)> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
    let c = cli.command;
    match c {
        Command::Calibrate => run_command(c, seed, &file.calibrate, || commands::calibrate(&file.calibrate)),
        Command::BinarySums => run_command(c, seed, &file.binary_sums, || {
            commands::binary_sums(&file.binary_sums, seed)
        }),
        Command::Equilibrium => run_command(c, seed, &file.equilibrium, || {
            commands::equilibrium(&file.equilibrium, seed)
        }),
        Command::MultiRound => run_command(c, seed, &file.multi_round, || {
            commands::multi_round(&file.multi_round, seed)
        }),
        Command::Sender => run_command(c, seed, &file.sender, || commands::sender(&file.sender)),
    }
}

fn write_outputs(cli: &Cli, prov: &Provenance, report: &Report, out_dir: Option<&Path>) -> Result<()> {
    let ext = match cli.format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            for t in &report.tables {
                let path = dir.join(format!("{}-{}.{ext}", prov.command, t.name));
                let mut buf = Vec::new();
                match cli.format {
                    Format::Csv => t.write_csv(prov, &mut buf)?,
                    Format::Json => {
                        serde_json::to_writer_pretty(&mut buf, &t.to_json(prov))?;
                        buf.push(b'\n');
                    }
                }
                std::fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))?;
            }
            if cli.plot {
                for (name, svg) in &report.plots {
                    let path = dir.join(format!("{}-{name}.svg", prov.command));
                    std::fs::write(&path, svg).with_context(|| format!("writing {}", path.display()))?;
                }
            }
        }
        None => {
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            match cli.format {
                Format::Csv => {
                    for (k, t) in report.tables.iter().enumerate() {
                        if k > 0 {
                            writeln!(out)?;
                        }
                        t.write_csv(prov, &mut out)?;
                    }
                }
                Format::Json => {
                    let all: Vec<_> = report.tables.iter().map(|t| t.to_json(prov)).collect();
                    serde_json::to_writer_pretty(&mut out, &all)?;
                    writeln!(out)?;
                }
            }
            out.flush()?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let out_dir = cli.out.clone().or_else(|| {
        std::env::var_os(OUT_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
    });
    anyhow::ensure!(
        !cli.plot || out_dir.is_some(),
        "--plot needs --out or ${OUT_DIR_ENV}"
    );
    let (prov, report) = match cli.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build()?
            .install(|| execute(&cli))?,
        None => execute(&cli)?,
    };
    write_outputs(&cli, &prov, &report, out_dir.as_deref())?;
    if report.failures.is_empty() {
        Ok(())
    } else {
        Err(OracleFailure(report.failures).into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
