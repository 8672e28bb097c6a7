//! Run orchestration: dataset preparation, inversion, diagnostics and all
//! on-disk artifacts (manifest, history CSV, field dumps, summaries).
//!
//! Every entry point writes `manifest.json` (the exact [`RunConfig`]) into
//! the output directory first; rerunning from that manifest reproduces the
//! history CSVs byte for byte.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;

use crate::analysis::{relative_error, CostLedger};
use crate::config::{OptimizerKind, RunConfig, RunMode};
use crate::error::{Error, Result};
use crate::experiments::{
    generate_dataset, load_dataset, save_dataset, DatasetManifest, ExperimentPair,
};
use crate::field::{Medium, MediumKind};
use crate::grid::PhaseGrid;
use crate::iofmt::{self, format_f64, CsvWriter, Storage};
use crate::linear::{
    assemble_system, exact_minimizer, linear_sgd_run, precompute_detector_adjoints,
    save_system_cache, spectral_report, EnsembleConfig, LinearDiagnostics, LinearRunState,
};
use crate::nonlinear::{gd_run, sgd_run, SgdState};
use crate::transport::SolveCounter;

/// Summary of one inversion run, persisted as `summary.json`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunSummary {
    pub mode: RunMode,
    pub optimizer: OptimizerKind,
    pub iterations: usize,
    /// Transport solves spent preparing the dataset.
    pub dataset_solves: u64,
    /// Transport solves spent by the optimizer.
    pub ledger: CostLedger,
    pub initial_relative_error: Option<f64>,
    pub final_relative_error: Option<f64>,
    pub aborted: Option<String>,
    /// Contraction factor of the linearized system at the base step size.
    pub lambda: Option<f64>,
    pub final_distance_to_minimizer: Option<f64>,
}

/// One row of the cost-comparison table.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CostTableRow {
    pub n_samples: usize,
    pub sgd_solves_per_iteration: u64,
    pub sgd_iterations: u64,
    pub sgd_total_solves: u64,
    pub gd_solves_per_iteration: u64,
    pub gd_iterations: u64,
    pub gd_total_solves: u64,
    /// sgd_total / gd_total.
    pub ratio: f64,
}

/// Write a nodal field in the flat-array format.
pub fn save_medium_field(
    path: &Path,
    storage: Storage,
    grid: &PhaseGrid,
    medium: &Medium,
    label: &str,
) -> Result<()> {
    let header = serde_json::json!({
        "what": label,
        "nodes_per_side": grid.nodes_per_side(),
        "order": "node-major (i1 * nodes_per_side + i2)",
        "medium_kind": match medium.kind() {
            MediumKind::Scattering => "scattering",
            MediumKind::Absorption => "absorption",
        },
    });
    iofmt::write_flat(storage, path, &header, "value", medium.values())
}

/// Read a nodal field written by [`save_medium_field`].
pub fn load_medium_field(path: &Path, grid: &PhaseGrid) -> Result<Medium> {
    let (header, values) = iofmt::read_flat(path)?;
    let kind = match header["medium_kind"].as_str() {
        Some("absorption") => MediumKind::Absorption,
        _ => MediumKind::Scattering,
    };
    Medium::new(grid, kind, values)
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

fn write_nonlinear_history(path: &Path, state: &SgdState) -> Result<()> {
    let mut csv = CsvWriter::new(&[
        "n",
        "gamma",
        "eta",
        "sampled_grad_norm",
        "relative_error",
        "cumulative_rte_solves",
    ]);
    for h in &state.history {
        csv.push_row(&[
            h.n.to_string(),
            h.gamma.map(|g| g.to_string()).unwrap_or_default(),
            format_f64(h.eta),
            format_f64(h.grad_norm),
            opt_cell(h.relative_error),
            h.cumulative_solves.to_string(),
        ]);
    }
    csv.save(path)
}

fn write_linear_history(path: &Path, state: &LinearRunState) -> Result<()> {
    let mut csv = CsvWriter::new(&[
        "n",
        "gamma",
        "eta",
        "sampled_grad_norm",
        "relative_error",
        "cumulative_rte_solves",
        "lambda",
        "dist_to_minimizer",
    ]);
    for h in &state.history {
        csv.push_row(&[
            h.n.to_string(),
            h.gamma.to_string(),
            format_f64(h.eta),
            format_f64(h.grad_norm),
            opt_cell(h.relative_error),
            h.cumulative_solves.to_string(),
            opt_cell(h.lambda),
            opt_cell(h.dist_to_minimizer),
        ]);
    }
    csv.save(path)
}

fn prepare_out_dir(config: &RunConfig, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("manifest.json"), config.to_json())?;
    Ok(())
}

/// Obtain the dataset: load it when the config points at a directory,
/// generate (and persist under `out_dir/dataset`) otherwise.
fn obtain_dataset(
    config: &RunConfig,
    grid: &PhaseGrid,
    truth: &Medium,
    out_dir: &Path,
    counter: &SolveCounter,
) -> Result<Vec<ExperimentPair>> {
    if let Some(dir) = &config.dataset.load_from {
        let (loaded_grid, manifest, pairs) = load_dataset(Path::new(dir))?;
        if loaded_grid.n_nodes() != grid.n_nodes()
            || loaded_grid.n_angles() != grid.n_angles()
        {
            return Err(Error::Mismatch(format!(
                "dataset grid {}x{} does not match configured grid",
                manifest.n_cells_per_side, manifest.n_angles
            )));
        }
        return Ok(pairs);
    }
    let pairs = generate_dataset(
        grid,
        truth,
        config.dataset.n_pairs,
        config.dataset.noise_std,
        config.seed,
        &config.solver,
        counter,
    )?;
    let manifest = DatasetManifest {
        format_version: 1,
        n_cells_per_side: config.grid.n_cells_per_side,
        n_angles: config.grid.n_angles,
        truth: config.truth.clone(),
        seed: config.seed,
        noise_std: config.dataset.noise_std,
        n_pairs: pairs.len(),
        storage: config.storage,
    };
    save_dataset(&out_dir.join("dataset"), &manifest, &pairs)?;
    Ok(pairs)
}

/// `generate-data`: produce and persist a dataset, nothing else.
pub fn execute_generate_data(config: &RunConfig, out_dir: &Path) -> Result<PathBuf> {
    config.validate()?;
    prepare_out_dir(config, out_dir)?;
    let grid = PhaseGrid::new(config.grid.n_cells_per_side, config.grid.n_angles)?;
    let truth = config.truth.resolve(&grid)?;
    let counter = SolveCounter::new();
    obtain_dataset(config, &grid, &truth, out_dir, &counter)?;
    Ok(out_dir.join("dataset"))
}

/// `invert`: run the configured reconstruction and emit all artifacts.
pub fn execute_invert(config: &RunConfig, out_dir: &Path) -> Result<RunSummary> {
    config.validate()?;
    prepare_out_dir(config, out_dir)?;
    let grid = PhaseGrid::new(config.grid.n_cells_per_side, config.grid.n_angles)?;
    let truth = config.truth.resolve(&grid)?;
    let dataset_counter = SolveCounter::new();
    let dataset = obtain_dataset(config, &grid, &truth, out_dir, &dataset_counter)?;

    let summary = match config.mode {
        RunMode::NonlinearScattering | RunMode::NonlinearAbsorption => {
            invert_nonlinear(config, &grid, &truth, &dataset, out_dir, dataset_counter.get())?
        }
        RunMode::Linearized => {
            invert_linearized(config, &grid, &truth, dataset, out_dir, dataset_counter.get())?
        }
    };
    fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    Ok(summary)
}

fn invert_nonlinear(
    config: &RunConfig,
    grid: &PhaseGrid,
    truth: &Medium,
    dataset: &[ExperimentPair],
    out_dir: &Path,
    dataset_solves: u64,
) -> Result<RunSummary> {
    let sigma0 = config.initial_guess.build(grid, truth, config.seed)?;
    save_medium_field(
        &out_dir.join(format!("sigma_init.{}", config.storage.extension())),
        config.storage,
        grid,
        &sigma0,
        "initial coefficient",
    )?;
    let initial_rel = relative_error(grid, &sigma0, truth, config.weighted_error)?;
    let state = match config.optimizer {
        OptimizerKind::Sgd => sgd_run(
            grid,
            dataset,
            &sigma0,
            &config.objective(),
            &config.learning_rate,
            &config.stopping,
            config.seed,
            Some(truth),
            &config.solver,
        )?,
        OptimizerKind::Gd => gd_run(
            grid,
            dataset,
            &sigma0,
            &config.objective(),
            &config.learning_rate,
            &config.stopping,
            Some(truth),
            &config.solver,
        )?,
    };
    write_nonlinear_history(&out_dir.join("history.csv"), &state)?;
    save_medium_field(
        &out_dir.join(format!("sigma_final.{}", config.storage.extension())),
        config.storage,
        grid,
        &state.sigma,
        "reconstructed coefficient",
    )?;
    let per_iter = match config.optimizer {
        OptimizerKind::Sgd => 2,
        OptimizerKind::Gd => 2 * dataset.len() as u64,
    };
    Ok(RunSummary {
        mode: config.mode,
        optimizer: config.optimizer,
        iterations: state.iterations,
        dataset_solves,
        ledger: CostLedger {
            solves_per_iteration: per_iter,
            iterations: state.iterations as u64,
            total_solves: state.total_solves,
        },
        initial_relative_error: Some(initial_rel),
        final_relative_error: state.history.last().and_then(|h| h.relative_error),
        aborted: state.aborted,
        lambda: None,
        final_distance_to_minimizer: None,
    })
}

/// Background medium and true perturbation of a linearized run.
pub fn linearized_setup(config: &RunConfig, truth: &Medium) -> (Medium, Medium) {
    let mut background = truth.clone();
    background.scale(config.background_scale);
    let mut perturbation = truth.clone();
    let _ = perturbation.axpy(-1.0, &background);
    (background, perturbation)
}

fn invert_linearized(
    config: &RunConfig,
    grid: &PhaseGrid,
    truth: &Medium,
    dataset: Vec<ExperimentPair>,
    out_dir: &Path,
    mut dataset_solves: u64,
) -> Result<RunSummary> {
    let (background, perturbation) = linearized_setup(config, truth);
    save_medium_field(
        &out_dir.join(format!("background.{}", config.storage.extension())),
        config.storage,
        grid,
        &background,
        "background coefficient",
    )?;

    let grid_arc = Arc::new(grid.clone());
    let dataset_arc: Arc<[ExperimentPair]> = dataset.into();
    let assembly_counter = SolveCounter::new();
    let detectors = Arc::new(precompute_detector_adjoints(
        &grid_arc,
        &background,
        None,
        &config.solver,
        &assembly_counter,
    )?);
    let system = assemble_system(
        &grid_arc,
        &dataset_arc,
        &detectors,
        &config.solver,
        config.assembly,
        &assembly_counter,
    )?;
    dataset_solves += assembly_counter.get();

    let sigma0_medium = config
        .initial_guess
        .build(grid, &perturbation, config.seed)?;
    save_medium_field(
        &out_dir.join(format!("sigma_init.{}", config.storage.extension())),
        config.storage,
        grid,
        &sigma0_medium,
        "initial perturbation",
    )?;
    let sigma0 = DVector::from_vec(sigma0_medium.values().to_vec());
    let truth_vec = DVector::from_vec(perturbation.values().to_vec());

    let eta0 = config.learning_rate.eta0();
    let diagnostics = if eta0 < system.step_bound(config.alpha) {
        Some(LinearDiagnostics {
            minimizer: exact_minimizer(&system, config.alpha)?,
            lambda: system.contraction_factor(config.alpha, eta0),
        })
    } else {
        None
    };

    let run_counter = SolveCounter::new();
    let state = linear_sgd_run(
        &system,
        &sigma0,
        config.alpha,
        &config.learning_rate,
        &config.stopping,
        config.seed,
        Some(&truth_vec),
        diagnostics.as_ref(),
        &run_counter,
    )?;
    write_linear_history(&out_dir.join("history.csv"), &state)?;
    let final_medium = Medium::new(grid, MediumKind::Scattering, state.sigma.as_slice().to_vec())?;
    save_medium_field(
        &out_dir.join(format!("sigma_final.{}", config.storage.extension())),
        config.storage,
        grid,
        &final_medium,
        "reconstructed perturbation",
    )?;

    let per_iter = match config.assembly {
        crate::linear::AssemblyMode::Eager => 0,
        crate::linear::AssemblyMode::Lazy => 1,
    };
    Ok(RunSummary {
        mode: config.mode,
        optimizer: config.optimizer,
        iterations: state.iterations,
        dataset_solves,
        ledger: CostLedger {
            solves_per_iteration: per_iter,
            iterations: state.iterations as u64,
            total_solves: state.total_solves,
        },
        initial_relative_error: Some((&sigma0 - &truth_vec).norm() / truth_vec.norm()),
        final_relative_error: state.history.last().and_then(|h| h.relative_error),
        aborted: None,
        lambda: diagnostics.as_ref().map(|d| d.lambda),
        final_distance_to_minimizer: diagnostics
            .as_ref()
            .map(|d| (&state.sigma - &d.minimizer).norm()),
    })
}

/// `assemble-linear`: build the linearized system eagerly and persist the
/// cache for reuse across optimizer sweeps.
pub fn execute_assemble_linear(config: &RunConfig, out_dir: &Path) -> Result<PathBuf> {
    config.validate()?;
    if config.mode != RunMode::Linearized {
        return Err(Error::Config("assemble-linear requires linearized mode".into()));
    }
    prepare_out_dir(config, out_dir)?;
    let grid = Arc::new(PhaseGrid::new(
        config.grid.n_cells_per_side,
        config.grid.n_angles,
    )?);
    let truth = config.truth.resolve(&grid)?;
    let counter = SolveCounter::new();
    let dataset: Arc<[ExperimentPair]> =
        obtain_dataset(config, &grid, &truth, out_dir, &counter)?.into();
    let (background, _) = linearized_setup(config, &truth);
    let detectors = Arc::new(precompute_detector_adjoints(
        &grid,
        &background,
        None,
        &config.solver,
        &counter,
    )?);
    let system = assemble_system(
        &grid,
        &dataset,
        &detectors,
        &config.solver,
        crate::linear::AssemblyMode::Eager,
        &counter,
    )?;
    let cache_dir = out_dir.join("system");
    save_system_cache(&cache_dir, &system)?;
    Ok(cache_dir)
}

/// Figure-ready spectral diagnostics artifacts.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SpectralSummary {
    pub lambda: f64,
    pub c_a: f64,
    pub step_bound: f64,
    pub eta: f64,
    pub alpha: f64,
    pub initial_error_norm: f64,
    pub covariance_traces: Vec<(f64, f64)>,
}

/// `spectral-report`: assemble the linearized system and run the ensemble
/// diagnostics, emitting `spectral.json`, `mean_error.csv` and
/// `covariance.csv`.
pub fn execute_spectral_report(config: &RunConfig, out_dir: &Path) -> Result<SpectralSummary> {
    config.validate()?;
    if config.mode != RunMode::Linearized {
        return Err(Error::Config("spectral-report requires linearized mode".into()));
    }
    prepare_out_dir(config, out_dir)?;
    let grid = Arc::new(PhaseGrid::new(
        config.grid.n_cells_per_side,
        config.grid.n_angles,
    )?);
    let truth = config.truth.resolve(&grid)?;
    let counter = SolveCounter::new();
    let dataset: Arc<[ExperimentPair]> =
        obtain_dataset(config, &grid, &truth, out_dir, &counter)?.into();
    let (background, perturbation) = linearized_setup(config, &truth);
    let detectors = Arc::new(precompute_detector_adjoints(
        &grid,
        &background,
        None,
        &config.solver,
        &counter,
    )?);
    let system = assemble_system(
        &grid,
        &dataset,
        &detectors,
        &config.solver,
        config.assembly,
        &counter,
    )?;
    let sigma0_medium = config
        .initial_guess
        .build(&grid, &perturbation, config.seed)?;
    let sigma0 = DVector::from_vec(sigma0_medium.values().to_vec());
    let spectral = config.spectral.clone().unwrap_or(crate::config::SpectralConfig {
        eta: None,
        ensemble: EnsembleConfig::default(),
    });
    let eta = spectral.eta.unwrap_or_else(|| config.learning_rate.eta0());
    let report = spectral_report(
        &system,
        &sigma0,
        config.alpha,
        eta,
        &spectral.ensemble,
        &counter,
    )?;

    let mut decay = CsvWriter::new(&["n", "mean_error_norm", "contraction_bound"]);
    for (n, (err, bound)) in report
        .mean_error_norms
        .iter()
        .zip(&report.mean_error_bound)
        .enumerate()
    {
        decay.push_row(&[
            (n + 1).to_string(),
            format_f64(*err),
            format_f64(*bound),
        ]);
    }
    decay.save(&out_dir.join("mean_error.csv"))?;

    let mut cov = CsvWriter::new(&["eta", "covariance_trace"]);
    for (e, t) in &report.covariance_traces {
        cov.push_row(&[format_f64(*e), format_f64(*t)]);
    }
    cov.save(&out_dir.join("covariance.csv"))?;

    let summary = SpectralSummary {
        lambda: report.lambda,
        c_a: report.c_a,
        step_bound: report.step_bound,
        eta: report.eta,
        alpha: report.alpha,
        initial_error_norm: report.initial_error_norm,
        covariance_traces: report.covariance_traces.clone(),
    };
    fs::write(
        out_dir.join("spectral.json"),
        serde_json::to_string_pretty(&summary).expect("serializes"),
    )?;
    Ok(summary)
}

/// `cost-table`: run SGD and the full-batch baseline across sample sizes
/// and tabulate solve counts and their ratio.
pub fn execute_cost_table(config: &RunConfig, out_dir: &Path) -> Result<Vec<CostTableRow>> {
    config.validate()?;
    let Some(table_cfg) = config.cost_table.clone() else {
        return Err(Error::Config("cost-table requires a cost_table section".into()));
    };
    if table_cfg.sample_sizes.is_empty() {
        return Err(Error::Config("cost_table.sample_sizes must not be empty".into()));
    }
    prepare_out_dir(config, out_dir)?;
    let grid = PhaseGrid::new(config.grid.n_cells_per_side, config.grid.n_angles)?;
    let truth = config.truth.resolve(&grid)?;
    let sigma0 = config.initial_guess.build(&grid, &truth, config.seed)?;

    let mut rows = Vec::new();
    for &n in &table_cfg.sample_sizes {
        let gen_counter = SolveCounter::new();
        let dataset = generate_dataset(
            &grid,
            &truth,
            n,
            config.dataset.noise_std,
            config.seed,
            &config.solver,
            &gen_counter,
        )?;
        let stop_sgd = crate::nonlinear::StoppingRule {
            grad_tol: None,
            moving_avg_window: None,
            rel_err_tol: Some(table_cfg.tol),
            max_iters: table_cfg.sgd_max_iters,
        };
        let stop_gd = crate::nonlinear::StoppingRule {
            max_iters: table_cfg.gd_max_iters,
            ..stop_sgd
        };
        let sgd = sgd_run(
            &grid,
            &dataset,
            &sigma0,
            &config.objective(),
            &config.learning_rate,
            &stop_sgd,
            config.seed,
            Some(&truth),
            &config.solver,
        )?;
        let gd = gd_run(
            &grid,
            &dataset,
            &sigma0,
            &config.objective(),
            &config.learning_rate,
            &stop_gd,
            Some(&truth),
            &config.solver,
        )?;
        if let Some(reason) = sgd.aborted.or(gd.aborted) {
            return Err(Error::Aborted(format!("cost-table run at N = {n}: {reason}")));
        }
        let sgd_ledger = CostLedger {
            solves_per_iteration: 2,
            iterations: sgd.iterations as u64,
            total_solves: sgd.total_solves,
        };
        let gd_ledger = CostLedger {
            solves_per_iteration: 2 * n as u64,
            iterations: gd.iterations as u64,
            total_solves: gd.total_solves,
        };
        if !sgd_ledger.is_consistent() || !gd_ledger.is_consistent() {
            return Err(Error::Config(format!(
                "solve accounting mismatch at N = {n}: SGD {sgd_ledger:?}, GD {gd_ledger:?}"
            )));
        }
        rows.push(CostTableRow {
            n_samples: n,
            sgd_solves_per_iteration: 2,
            sgd_iterations: sgd.iterations as u64,
            sgd_total_solves: sgd.total_solves,
            gd_solves_per_iteration: 2 * n as u64,
            gd_iterations: gd.iterations as u64,
            gd_total_solves: gd.total_solves,
            ratio: sgd.total_solves as f64 / gd.total_solves as f64,
        });
    }

    let mut csv = CsvWriter::new(&[
        "n_samples",
        "sgd_rte_per_iteration",
        "sgd_iterations",
        "sgd_total_rtes",
        "gd_rte_per_iteration",
        "gd_iterations",
        "gd_total_rtes",
        "ratio",
    ]);
    for r in &rows {
        csv.push_row(&[
            r.n_samples.to_string(),
            r.sgd_solves_per_iteration.to_string(),
            r.sgd_iterations.to_string(),
            r.sgd_total_solves.to_string(),
            r.gd_solves_per_iteration.to_string(),
            r.gd_iterations.to_string(),
            r.gd_total_solves.to_string(),
            format_f64(r.ratio),
        ]);
    }
    csv.save(&out_dir.join("cost_table.csv"))?;
    fs::write(
        out_dir.join("cost_table.json"),
        serde_json::to_string_pretty(&rows).expect("serializes"),
    )?;
    Ok(rows)
}

/// `relative-error`: compare two persisted fields on a given grid.
pub fn execute_relative_error(
    grid_cells: usize,
    grid_angles: usize,
    candidate: &Path,
    truth: &Path,
    weighted: bool,
) -> Result<f64> {
    let grid = PhaseGrid::new(grid_cells, grid_angles)?;
    let cand = load_medium_field(candidate, &grid)?;
    let tru = load_medium_field(truth, &grid)?;
    relative_error(&grid, &cand, &tru, weighted)
}
