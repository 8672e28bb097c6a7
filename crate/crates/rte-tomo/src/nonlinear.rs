//! Stochastic gradient descent on the PDE-constrained data-mismatch
//! objective, plus the full-batch gradient-descent baseline.
//!
//! One experiment's cost is half the squared outflow-set norm of the
//! measurement mismatch plus a Tikhonov term `alpha/2 * |sigma|^2`. Its
//! gradient with respect to the coefficient field comes from one forward
//! and one adjoint solve: `alpha*sigma - int g L[f] dv` in scattering mode,
//! `alpha*sigma + int g f dv` in absorption mode, reported in the continuum
//! convention (the discrete objective's gradient divided by the volume
//! weights).
//!
//! The SGD loop is sequential (each step depends on the last); the
//! full-batch baseline evaluates its per-experiment gradients in parallel
//! and reduces them in index order, so reruns are bit-identical.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analysis::relative_error;
use crate::error::{Error, Result};
use crate::experiments::ExperimentPair;
use crate::field::{Medium, MediumKind, PhaseField};
use crate::grid::{BoundarySide, PhaseGrid};
use crate::transport::{
    collision, measure_outflow, solve_adjoint, solve_forward, SolveCounter, SolverOptions,
};

/// RNG stream used for SGD index sampling.
const GAMMA_STREAM: u64 = 1;

/// Objective parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ObjectiveConfig {
    /// Tikhonov regularization weight (nonnegative).
    pub alpha: f64,
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 {
            return Err(Error::Config("alpha must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearningRate {
    Constant { eta0: f64 },
    /// `eta_n = eta0 / (1 + eta0 * alpha * n)`.
    InverseDecay { eta0: f64, alpha: f64 },
}

impl LearningRate {
    pub fn eta(&self, n: usize) -> f64 {
        match *self {
            LearningRate::Constant { eta0 } => eta0,
            LearningRate::InverseDecay { eta0, alpha } => {
                eta0 / (1.0 + eta0 * alpha * n as f64)
            }
        }
    }

    pub fn eta0(&self) -> f64 {
        match *self {
            LearningRate::Constant { eta0 } | LearningRate::InverseDecay { eta0, .. } => eta0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta0() <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Stopping conditions; whichever triggers first ends the run.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StoppingRule {
    /// Threshold on the sampled gradient's quadrature-weighted norm.
    pub grad_tol: Option<f64>,
    /// Apply `grad_tol` to a moving average of this many recent norms
    /// instead of the single-sample norm.
    pub moving_avg_window: Option<usize>,
    /// Threshold on the relative error against the supplied truth.
    pub rel_err_tol: Option<f64>,
    /// Hard iteration cap.
    pub max_iters: usize,
}

impl StoppingRule {
    pub fn max_iters(max_iters: usize) -> Self {
        Self {
            grad_tol: None,
            moving_avg_window: None,
            rel_err_tol: None,
            max_iters,
        }
    }
}

/// One per-iteration history record.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HistoryEntry {
    pub n: usize,
    /// Sampled experiment index; absent for the full-batch baseline.
    pub gamma: Option<usize>,
    pub eta: f64,
    /// Quadrature-weighted norm of the step's gradient.
    pub grad_norm: f64,
    /// Relative error against the truth, when one was supplied.
    pub relative_error: Option<f64>,
    /// Transport solves spent so far in this run.
    pub cumulative_solves: u64,
}

/// Optimizer state after a run.
#[derive(Debug, Clone)]
pub struct SgdState {
    pub sigma: Medium,
    pub iterations: usize,
    pub history: Vec<HistoryEntry>,
    /// Total transport solves spent.
    pub total_solves: u64,
    /// Set when a solver failure ended the run early; history up to the
    /// failing step is preserved.
    pub aborted: Option<String>,
}

/// Evaluate one experiment's cost at the given medium.
pub fn evaluate_cost(
    grid: &PhaseGrid,
    sigma: &Medium,
    pair: &ExperimentPair,
    cfg: &ObjectiveConfig,
    opts: &SolverOptions,
    counter: &SolveCounter,
) -> Result<f64> {
    cfg.validate()?;
    let solve = solve_forward(grid, sigma, &pair.inflow, None, opts, counter)?;
    let r = measure_outflow(grid, &solve.field).sub(&pair.psi)?;
    let mismatch = grid.boundary_inner_product(BoundarySide::Outflow, &r, &r)?;
    let reg = grid.volume_inner_product(sigma.values(), sigma.values());
    Ok(0.5 * mismatch + 0.5 * cfg.alpha * reg)
}

/// Gradient of one experiment's cost via the adjoint method: exactly one
/// forward and one adjoint transport solve.
pub fn frechet_gradient(
    grid: &PhaseGrid,
    sigma: &Medium,
    pair: &ExperimentPair,
    cfg: &ObjectiveConfig,
    opts: &SolverOptions,
    counter: &SolveCounter,
) -> Result<Medium> {
    cfg.validate()?;
    let forward = solve_forward(grid, sigma, &pair.inflow, None, opts, counter)?;
    // Adjoint boundary values: psi - (n.v) f on the outflow set.
    let h = pair.psi.sub(&measure_outflow(grid, &forward.field))?;
    let adjoint = solve_adjoint(grid, sigma, &h, opts, counter)?;

    let wt = grid.quadrature().angle_weight;
    let mut grad = vec![0.0; grid.n_nodes()];
    match sigma.kind() {
        MediumKind::Scattering => {
            let l = collision(grid, &forward.field);
            accumulate_angular_dot(grid, &adjoint.field, &l, wt, &mut grad);
            for g in &mut grad {
                *g = -*g;
            }
        }
        MediumKind::Absorption => {
            accumulate_angular_dot(grid, &adjoint.field, &forward.field, wt, &mut grad);
        }
    }
    for (g, s) in grad.iter_mut().zip(sigma.values()) {
        *g += cfg.alpha * s;
    }
    Medium::new(grid, sigma.kind(), grad)
}

fn accumulate_angular_dot(
    grid: &PhaseGrid,
    a: &PhaseField,
    b: &PhaseField,
    wt: f64,
    out: &mut [f64],
) {
    for k in 0..grid.n_angles() {
        let ab = a.angle_block(k);
        let bb = b.angle_block(k);
        for ((o, x), y) in out.iter_mut().zip(ab).zip(bb) {
            *o += wt * x * y;
        }
    }
}

struct RunRecorder<'a> {
    grid: &'a PhaseGrid,
    truth: Option<&'a Medium>,
    history: Vec<HistoryEntry>,
    window: Vec<f64>,
    window_size: Option<usize>,
}

impl<'a> RunRecorder<'a> {
    fn new(grid: &'a PhaseGrid, truth: Option<&'a Medium>, stop: &StoppingRule) -> Self {
        Self {
            grid,
            truth,
            history: Vec::new(),
            window: Vec::new(),
            window_size: stop.moving_avg_window,
        }
    }

    /// Record a step; returns true when the stopping rule fires.
    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        n: usize,
        gamma: Option<usize>,
        eta: f64,
        grad_norm: f64,
        sigma: &Medium,
        stop: &StoppingRule,
        solves: u64,
    ) -> bool {
        let rel = self
            .truth
            .map(|t| relative_error(self.grid, sigma, t, true).expect("truth matches grid"));
        self.history.push(HistoryEntry {
            n,
            gamma,
            eta,
            grad_norm,
            relative_error: rel,
            cumulative_solves: solves,
        });
        if let Some(tol) = stop.grad_tol {
            let tested = match self.window_size {
                Some(w) => {
                    self.window.push(grad_norm);
                    if self.window.len() > w {
                        self.window.remove(0);
                    }
                    if self.window.len() < w {
                        f64::INFINITY
                    } else {
                        self.window.iter().sum::<f64>() / w as f64
                    }
                }
                None => grad_norm,
            };
            if tested <= tol {
                return true;
            }
        }
        if let (Some(tol), Some(r)) = (stop.rel_err_tol, rel) {
            if r <= tol {
                return true;
            }
        }
        false
    }
}

/// Run SGD: each iteration samples one experiment uniformly at random and
/// takes a step along its gradient (two transport solves).
#[allow(clippy::too_many_arguments)]
pub fn sgd_run(
    grid: &PhaseGrid,
    dataset: &[ExperimentPair],
    sigma0: &Medium,
    cfg: &ObjectiveConfig,
    lr: &LearningRate,
    stop: &StoppingRule,
    seed: u64,
    truth: Option<&Medium>,
    opts: &SolverOptions,
) -> Result<SgdState> {
    cfg.validate()?;
    lr.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("dataset must not be empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(GAMMA_STREAM);
    let counter = SolveCounter::new();
    let mut sigma = sigma0.clone();
    let mut recorder = RunRecorder::new(grid, truth, stop);
    let mut aborted = None;
    let mut n = 0;

    while n < stop.max_iters {
        let gamma = rng.random_range(0..dataset.len());
        let eta = lr.eta(n);
        let grad = match frechet_gradient(grid, &sigma, &dataset[gamma], cfg, opts, &counter) {
            Ok(g) => g,
            Err(e) => {
                aborted = Some(e.to_string());
                break;
            }
        };
        let grad_norm = grid.volume_norm(grad.values());
        sigma.axpy(-eta, &grad)?;
        n += 1;
        if recorder.record(n, Some(gamma), eta, grad_norm, &sigma, stop, counter.get()) {
            break;
        }
    }

    Ok(SgdState {
        sigma,
        iterations: n,
        history: recorder.history,
        total_solves: counter.get(),
        aborted,
    })
}

/// Run full-batch gradient descent: each iteration averages the gradients
/// of all experiments (2N transport solves).
#[allow(clippy::too_many_arguments)]
pub fn gd_run(
    grid: &PhaseGrid,
    dataset: &[ExperimentPair],
    sigma0: &Medium,
    cfg: &ObjectiveConfig,
    lr: &LearningRate,
    stop: &StoppingRule,
    truth: Option<&Medium>,
    opts: &SolverOptions,
) -> Result<SgdState> {
    cfg.validate()?;
    lr.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("dataset must not be empty".into()));
    }
    let counter = SolveCounter::new();
    let mut sigma = sigma0.clone();
    let mut recorder = RunRecorder::new(grid, truth, stop);
    let mut aborted = None;
    let mut n = 0;

    while n < stop.max_iters {
        let eta = lr.eta(n);
        let grads: Result<Vec<Medium>> = dataset
            .par_iter()
            .map(|pair| frechet_gradient(grid, &sigma, pair, cfg, opts, &counter))
            .collect();
        let grads = match grads {
            Ok(g) => g,
            Err(e) => {
                aborted = Some(e.to_string());
                break;
            }
        };
        let mut mean = Medium::new(grid, sigma.kind(), vec![0.0; grid.n_nodes()])?;
        let scale = 1.0 / dataset.len() as f64;
        for g in &grads {
            mean.axpy(scale, g)?;
        }
        let grad_norm = grid.volume_norm(mean.values());
        sigma.axpy(-eta, &mean)?;
        n += 1;
        if recorder.record(n, None, eta, grad_norm, &sigma, stop, counter.get()) {
            break;
        }
    }

    Ok(SgdState {
        sigma,
        iterations: n,
        history: recorder.history,
        total_solves: counter.get(),
        aborted,
    })
}

/// Initial-guess presets for reconstruction runs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialGuess {
    /// Truth plus a constant offset.
    ConstantDeviation { offset: f64 },
    /// Truth multiplied nodewise by i.i.d. uniform draws from [lo, hi].
    RandomFactor { lo: f64, hi: f64 },
    /// A constant field.
    Constant { value: f64 },
}

/// RNG stream used for the random-factor initial guess.
const INIT_STREAM: u64 = 2;

impl InitialGuess {
    pub fn build(&self, grid: &PhaseGrid, truth: &Medium, seed: u64) -> Result<Medium> {
        match *self {
            InitialGuess::ConstantDeviation { offset } => {
                let mut m = truth.clone();
                for v in m.values_mut() {
                    *v += offset;
                }
                Ok(m)
            }
            InitialGuess::RandomFactor { lo, hi } => {
                if lo >= hi {
                    return Err(Error::Config("random factor needs lo < hi".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(INIT_STREAM);
                let mut m = truth.clone();
                for v in m.values_mut() {
                    *v *= rng.random_range(lo..hi);
                }
                Ok(m)
            }
            InitialGuess::Constant { value } => {
                Ok(Medium::constant(grid, truth.kind(), value))
            }
        }
    }
}
