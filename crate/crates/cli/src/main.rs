//! Command-line entry point for the numerical laboratory.
//!
//! `run` executes a full experiment from a JSON config; the focused
//! subcommands (`rho`, `cover`, `spectrum`, `t1-check`, `verify`,
//! `bmo-norm`, `op-norm`) run a single check, either from a config file or
//! from quick `--grid`/`--preset` overrides.

mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use schrodlab::config::{CheckKind, ExperimentConfig, GridConfig, PotentialConfig};
use schrodlab::potential::PotentialSpec;

#[derive(Parser)]
#[command(
    name = "schrodlab",
    about = "Numerical laboratory for Schrödinger operators on a truncated box",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Grid override "n,m,box_half_width[,margin]".
    #[arg(long)]
    grid: Option<String>,
    /// Potential preset override: constant[:amplitude] | harmonic | free |
    /// poly:c0,c1,... .
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every check listed in a config file.
    Run {
        /// JSON experiment config.
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Critical-radius field and comparison diagnostics.
    Rho(CommonArgs),
    /// Greedy covering by critical balls.
    Cover(CommonArgs),
    /// Axis (or dense) spectrum export.
    Spectrum(CommonArgs),
    /// T1 fields and weighted oscillation criteria.
    #[command(name = "t1-check")]
    T1Check(CommonArgs),
    /// Kernel-estimate verification bundle.
    Verify(CommonArgs),
    /// Norm estimation for the extremal test family.
    #[command(name = "bmo-norm")]
    BmoNorm(CommonArgs),
    /// Empirical operator norms over the test battery.
    #[command(name = "op-norm")]
    OpNorm(CommonArgs),
}

fn parse_grid(s: &str) -> anyhow::Result<GridConfig> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() < 3 || parts.len() > 4 {
        anyhow::bail!("--grid expects n,m,box_half_width[,margin], got '{s}'");
    }
    Ok(GridConfig {
        dimension: parts[0].trim().parse()?,
        points_per_axis: parts[1].trim().parse()?,
        box_half_width: parts[2].trim().parse()?,
        margin: if parts.len() == 4 { parts[3].trim().parse()? } else { 1.0 },
    })
}

fn parse_preset(s: &str) -> anyhow::Result<PotentialSpec> {
    let (head, rest) = match s.split_once(':') {
        Some((h, r)) => (h, Some(r)),
        None => (s, None),
    };
    Ok(match head {
        "constant" => PotentialSpec::Constant {
            amplitude: rest.map(|r| r.parse()).transpose()?.unwrap_or(1.0),
        },
        "harmonic" => PotentialSpec::Harmonic,
        "free" => PotentialSpec::Free,
        "poly" => {
            let coeffs = rest
                .ok_or_else(|| anyhow::anyhow!("poly preset needs coefficients"))?
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()?;
            PotentialSpec::SeparablePolynomial { coeffs }
        }
        other => anyhow::bail!("unknown preset '{other}'"),
    })
}

/// Baseline config used when a focused subcommand runs without a file.
fn default_config(check: CheckKind) -> ExperimentConfig {
    let json = serde_json::json!({
        "schema_version": 1,
        "seed": 42,
        "grid": {"dimension": 3, "points_per_axis": 48, "box_half_width": 4.0, "margin": 1.0},
        "potential": {"preset": "harmonic"},
        "checks": [check.name()],
        "output_dir": "out",
    });
    ExperimentConfig::from_json(json.to_string().as_bytes()).expect("baseline config is valid")
}

fn load_config(args: &CommonArgs, check: CheckKind) -> anyhow::Result<(ExperimentConfig, Vec<u8>)> {
    let mut cfg = match &args.config {
        Some(path) => {
            let bytes = std::fs::read(path)?;
            ExperimentConfig::from_json(&bytes)?
        }
        None => default_config(check),
    };
    cfg.checks = vec![check];
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.display().to_string();
    }
    if let Some(grid) = &args.grid {
        cfg.grid = parse_grid(grid)?;
    }
    if let Some(preset) = &args.preset {
        cfg.potential = PotentialConfig { spec: parse_preset(preset)?, q_exponent: None };
    }
    cfg.validate()?;
    let raw = serde_json::to_vec(&cfg)?;
    Ok((cfg, raw))
}

fn execute(cfg: &ExperimentConfig, raw: &[u8]) -> ExitCode {
    let result = runner::run(cfg, raw);
    match &result {
        Ok(out) => {
            println!("wrote artifacts under {}", cfg.output_dir);
            println!("manifest: {}", out.manifest_path.display());
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(runner::exit_code(&result) as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let focused = |args: &CommonArgs, check: CheckKind| -> ExitCode {
        match load_config(args, check) {
            Ok((cfg, raw)) => execute(&cfg, &raw),
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        }
    };
    match &cli.command {
        Command::Run { config, out, seed } => {
            let bytes = match std::fs::read(config) {
                Ok(b) => b,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", config.display());
                    return ExitCode::from(1);
                }
            };
            let mut cfg = match ExperimentConfig::from_json(&bytes) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            let mut raw = bytes;
            if out.is_some() || seed.is_some() {
                if let Some(out) = out {
                    cfg.output_dir = out.display().to_string();
                }
                if let Some(seed) = seed {
                    cfg.seed = *seed;
                }
                raw = serde_json::to_vec(&cfg).expect("config reserializes");
            }
            execute(&cfg, &raw)
        }
        Command::Rho(a) => focused(a, CheckKind::Rho),
        Command::Cover(a) => focused(a, CheckKind::Cover),
        Command::Spectrum(a) => focused(a, CheckKind::Spectrum),
        Command::T1Check(a) => focused(a, CheckKind::T1),
        Command::Verify(a) => focused(a, CheckKind::Verify),
        Command::BmoNorm(a) => focused(a, CheckKind::Bmo),
        Command::OpNorm(a) => focused(a, CheckKind::Norms),
    }
}
