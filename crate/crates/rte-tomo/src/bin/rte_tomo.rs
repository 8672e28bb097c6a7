//! Command-line front end: reproducible data generation, inversions and
//! convergence diagnostics. Every command reads a JSON run configuration
//! (from `--config` or a built-in `--profile`), writes its artifacts under
//! `--out`, and reports failures as machine-readable JSON on stdout with the
//! documented exit codes (0 ok, 2 configuration, 3 solver, 4 divergence).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rte_tomo::config::{profile, RunConfig};
use rte_tomo::error::Error;
use rte_tomo::runner;

#[derive(Parser)]
#[command(
    name = "rte-tomo",
    about = "Optical tomography on the 2D radiative transfer equation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Path to a JSON run configuration (a manifest.json works as-is).
    #[arg(long, conflicts_with = "profile")]
    config: Option<PathBuf>,
    /// Name of a built-in profile.
    #[arg(long)]
    profile: Option<String>,
    /// Override the configuration's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for all artifacts.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and persist a synthetic measurement dataset.
    GenerateData(ConfigArgs),
    /// Run the configured reconstruction (nonlinear or linearized).
    Invert(ConfigArgs),
    /// Assemble the linearized system eagerly and cache it on disk.
    AssembleLinear(ConfigArgs),
    /// Ensemble convergence diagnostics of the linearized system.
    SpectralReport(ConfigArgs),
    /// Compare SGD and full-batch solve counts across sample sizes.
    CostTable(ConfigArgs),
    /// Relative error between two persisted coefficient fields.
    RelativeError {
        /// Grid cells per side the fields live on.
        #[arg(long)]
        cells: usize,
        /// Angle count of the grid.
        #[arg(long, default_value_t = 4)]
        angles: usize,
        /// Candidate field file.
        #[arg(long)]
        candidate: PathBuf,
        /// Reference field file.
        #[arg(long)]
        truth: PathBuf,
        /// Use plain Euclidean norms instead of quadrature-weighted ones.
        #[arg(long)]
        unweighted: bool,
    },
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, Error> {
    let mut cfg = match (&args.config, &args.profile) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)?;
            RunConfig::from_json(&text)?
        }
        (None, Some(name)) => profile(name)?,
        (None, None) => {
            return Err(Error::Config("provide --config PATH or --profile NAME".into()))
        }
        (Some(_), Some(_)) => unreachable!("clap conflict"),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenerateData(args) => {
            let cfg = load_config(&args)?;
            let dir = runner::execute_generate_data(&cfg, &args.out)?;
            println!(
                "{}",
                serde_json::json!({"status": "ok", "dataset": dir.display().to_string()})
            );
        }
        Command::Invert(args) => {
            let cfg = load_config(&args)?;
            let summary = runner::execute_invert(&cfg, &args.out)?;
            if let Some(reason) = &summary.aborted {
                return Err(Error::Aborted(reason.clone()));
            }
            println!("{}", serde_json::to_string_pretty(&summary).unwrap());
        }
        Command::AssembleLinear(args) => {
            let cfg = load_config(&args)?;
            let dir = runner::execute_assemble_linear(&cfg, &args.out)?;
            println!(
                "{}",
                serde_json::json!({"status": "ok", "system": dir.display().to_string()})
            );
        }
        Command::SpectralReport(args) => {
            let cfg = load_config(&args)?;
            let summary = runner::execute_spectral_report(&cfg, &args.out)?;
            println!("{}", serde_json::to_string_pretty(&summary).unwrap());
        }
        Command::CostTable(args) => {
            let cfg = load_config(&args)?;
            let rows = runner::execute_cost_table(&cfg, &args.out)?;
            println!("{}", serde_json::to_string_pretty(&rows).unwrap());
        }
        Command::RelativeError {
            cells,
            angles,
            candidate,
            truth,
            unweighted,
        } => {
            let value =
                runner::execute_relative_error(cells, angles, &candidate, &truth, !unweighted)?;
            println!(
                "{}",
                serde_json::json!({"relative_error": value, "weighted": !unweighted})
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = err.exit_code();
            println!(
                "{}",
                serde_json::json!({
                    "status": "error",
                    "error": err.to_string(),
                    "exit_code": code,
                })
            );
            ExitCode::from(code as u8)
        }
    }
}
