use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use overhauser::{execute, replay, CliError, Command, FitKind, Format, Preset, RunConfig};

/// Simulates optical feedback narrowing of a quantum-dot nuclear spin bath.
#[derive(Parser)]
#[command(name = "overhauser", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; unnamed keys come from the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Preset used when the config names none.
    #[arg(long, global = true, value_enum, default_value_t = Preset::QdA)]
    preset: Preset,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Format of tabular outputs. Figure files are always CSV.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Subcommand)]
enum Cmd {
    /// Stationary density under the configured fields, with its FID and fit.
    SteadyState,
    /// Drift, diffusion, flip rate and optical response across the grid.
    Fields,
    /// Evolves a density (thermal by default) with the lasers on.
    Evolve {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Defaults to the configured preparation time.
        #[arg(long)]
        time_ms: Option<f64>,
    },
    /// FID of a density, or of the prepared state when no input is given.
    Fid {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Density reconstructed from a uniformly sampled FID.
    InvertFid {
        #[arg(long)]
        input: PathBuf,
    },
    /// Fits a two-column table.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = FitKind::StretchedExp)]
        kind: FitKind,
    },
    /// Parallel parameter sweeps.
    #[command(subcommand)]
    Sweep(SweepCmd),
    /// Drive, relaxation rate, flip rate and gain from the calibration targets.
    Calibrate,
    /// Cross-checks against independent trajectory simulations.
    #[command(subcommand)]
    Oracle(OracleCmd),
    /// Re-runs a manifest and checks every output digest.
    Replay { manifest: PathBuf },
    /// Prints the resolved configuration.
    Config,
}

#[derive(Subcommand)]
enum SweepCmd {
    /// Probe visibility against drive power.
    Power(SweepValues),
    /// T2* and stretch exponent against preparation time.
    Prepare(SweepValues),
    /// Return to the thermal state against dark wait time.
    Relax(SweepValues),
}

#[derive(Args)]
struct SweepValues {
    /// Replaces the configured sweep values.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Stochastic trajectories against the Fokker-Planck solution.
    Compare {
        #[arg(long)]
        trajectories: Option<usize>,
        #[arg(long)]
        dt_ms: Option<f64>,
    },
}

fn absolute(p: PathBuf) -> Result<PathBuf, CliError> {
    std::fs::canonicalize(&p).map_err(|e| CliError::io(p, e))
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p, common.preset)?,
        None => RunConfig::preset(common.preset),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = &cli.common;
    let mut cfg = load_config(common)?;
    let command = match cli.command {
        Cmd::Replay { manifest } => {
            let report = replay(&manifest, &common.out)?;
            println!(
                "replay identical: {} files in {}",
                report.identical.len(),
                common.out.display()
            );
            return Ok(());
        }
        Cmd::Config => {
            println!(
                "{}",
                serde_json::to_string_pretty(&cfg).expect("config serializes")
            );
            return Ok(());
        }
        Cmd::SteadyState => Command::SteadyState,
        Cmd::Fields => Command::Fields,
        Cmd::Evolve { input, time_ms } => Command::Evolve {
            input: input.map(absolute).transpose()?,
            time_ms,
        },
        Cmd::Fid { input } => Command::Fid {
            input: input.map(absolute).transpose()?,
        },
        Cmd::InvertFid { input } => Command::InvertFid {
            input: absolute(input)?,
        },
        Cmd::Fit { input, kind } => Command::Fit {
            input: absolute(input)?,
            kind,
        },
        Cmd::Sweep(s) => {
            let (cmd, values, slot) = match s {
                SweepCmd::Power(v) => (Command::SweepPower, v.values, &mut cfg.sweeps.power_ratios),
                SweepCmd::Prepare(v) => (Command::SweepPrepare, v.values, &mut cfg.sweeps.t_cpt_ms),
                SweepCmd::Relax(v) => (Command::SweepRelax, v.values, &mut cfg.sweeps.t_relax_ms),
            };
            if let Some(v) = values {
                *slot = v;
            }
            cmd
        }
        Cmd::Calibrate => Command::Calibrate,
        Cmd::Oracle(OracleCmd::Compare {
            trajectories,
            dt_ms,
        }) => {
            if let Some(m) = trajectories {
                cfg.sde.trajectories = m;
            }
            if let Some(dt) = dt_ms {
                cfg.sde.dt_ms = dt;
            }
            Command::OracleCompare
        }
    };
    let manifest = execute(&command, &cfg, common.format, &common.out)?;
    for f in &manifest.outputs {
        println!("{}", Path::new(&common.out).join(&f.path).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
