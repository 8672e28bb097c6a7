//! Run configuration, named profiles and seed handling.
//!
//! A run is fully described by one JSON [`RunConfig`] document; the runner
//! copies it verbatim into the output manifest so any run can be reproduced
//! from its manifest alone.
//!
//! All randomness derives from the single `seed` through fixed ChaCha
//! stream identifiers: stream `2^32 + k` drives experiment `k` of dataset
//! generation (location draw, then noise), stream 1 the nonlinear SGD index
//! sampling, stream 2 the random-factor initial guess, stream 3 the
//! linearized SGD index sampling, and streams `2^33 + t` the ensemble
//! trajectories of the spectral diagnostics. Parallel execution therefore
//! cannot change any result.

use crate::error::{Error, Result};
use crate::experiments::TruthSpec;
use crate::iofmt::Storage;
use crate::linear::{AssemblyMode, EnsembleConfig};
use crate::nonlinear::{InitialGuess, LearningRate, ObjectiveConfig, StoppingRule};
use crate::transport::SolverOptions;

/// Which inverse problem a run solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    NonlinearScattering,
    NonlinearAbsorption,
    Linearized,
}

/// Optimizer choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Gd,
}

/// Grid parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GridConfig {
    pub n_cells_per_side: usize,
    pub n_angles: usize,
}

/// Dataset parameters: either generate `n_pairs` experiments or load a
/// previously saved dataset directory.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetConfig {
    pub n_pairs: usize,
    #[serde(default)]
    pub noise_std: f64,
    /// Load this dataset directory instead of generating.
    #[serde(default)]
    pub load_from: Option<String>,
}

/// Spectral-diagnostics parameters (linearized runs).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpectralConfig {
    /// Constant step size for the analysis; defaults to the learning-rate
    /// base step.
    #[serde(default)]
    pub eta: Option<f64>,
    pub ensemble: EnsembleConfig,
}

/// Cost-comparison parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CostTableConfig {
    pub sample_sizes: Vec<usize>,
    /// Relative-error tolerance that ends a run.
    pub tol: f64,
    pub sgd_max_iters: usize,
    pub gd_max_iters: usize,
}

/// Complete description of one run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub truth: TruthSpec,
    pub mode: RunMode,
    pub dataset: DatasetConfig,
    pub optimizer: OptimizerKind,
    pub learning_rate: LearningRate,
    pub alpha: f64,
    pub initial_guess: InitialGuess,
    pub stopping: StoppingRule,
    pub seed: u64,
    #[serde(default = "default_solver")]
    pub solver: SolverOptions,
    /// Background scale for linearized runs (background = scale * truth).
    #[serde(default = "default_background_scale")]
    pub background_scale: f64,
    #[serde(default = "default_assembly")]
    pub assembly: AssemblyMode,
    #[serde(default = "default_storage")]
    pub storage: Storage,
    /// Quadrature-weighted relative error (unweighted when false).
    #[serde(default = "default_true")]
    pub weighted_error: bool,
    #[serde(default)]
    pub spectral: Option<SpectralConfig>,
    #[serde(default)]
    pub cost_table: Option<CostTableConfig>,
}

fn default_solver() -> SolverOptions {
    SolverOptions::default()
}

fn default_background_scale() -> f64 {
    0.95
}

fn default_assembly() -> AssemblyMode {
    AssemblyMode::Eager
}

fn default_storage() -> Storage {
    Storage::Binary
}

fn default_true() -> bool {
    true
}

impl RunConfig {
    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig { alpha: self.alpha }
    }

    /// Validate everything that can be checked before solving.
    pub fn validate(&self) -> Result<()> {
        if self.grid.n_cells_per_side < 2 {
            return Err(Error::Config("grid needs at least 2 cells per side".into()));
        }
        if self.grid.n_angles < 4 || !self.grid.n_angles.is_multiple_of(4) {
            return Err(Error::Config(
                "n_angles must be >= 4 and divisible by 4".into(),
            ));
        }
        if self.alpha < 0.0 {
            return Err(Error::Config("alpha must be nonnegative".into()));
        }
        self.learning_rate.validate()?;
        if self.dataset.n_pairs == 0 && self.dataset.load_from.is_none() {
            return Err(Error::Config("dataset needs at least one experiment".into()));
        }
        if self.dataset.noise_std < 0.0 {
            return Err(Error::Config("noise_std must be nonnegative".into()));
        }
        if self.stopping.max_iters == 0 {
            return Err(Error::Config("max_iters must be positive".into()));
        }
        if self.solver.tolerance <= 0.0 {
            return Err(Error::Config("solver tolerance must be positive".into()));
        }
        if self.mode == RunMode::Linearized
            && !(self.background_scale > 0.0 && self.background_scale < 2.0)
        {
            return Err(Error::Config("background_scale must be in (0, 2)".into()));
        }
        match self.mode {
            RunMode::NonlinearAbsorption => {
                if !matches!(
                    self.truth,
                    TruthSpec::TwoBumpAbsorption
                        | TruthSpec::Constant {
                            medium: crate::experiments::MediumSpecKind::Absorption,
                            ..
                        }
                        | TruthSpec::FieldFile {
                            medium: crate::experiments::MediumSpecKind::Absorption,
                            ..
                        }
                ) {
                    return Err(Error::Config(
                        "absorption mode needs an absorption-kind truth".into(),
                    ));
                }
            }
            RunMode::NonlinearScattering | RunMode::Linearized => {
                if matches!(
                    self.truth,
                    TruthSpec::TwoBumpAbsorption
                        | TruthSpec::Constant {
                            medium: crate::experiments::MediumSpecKind::Absorption,
                            ..
                        }
                        | TruthSpec::FieldFile {
                            medium: crate::experiments::MediumSpecKind::Absorption,
                            ..
                        }
                ) {
                    return Err(Error::Config(
                        "scattering/linearized mode needs a scattering-kind truth".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Parse a config from JSON text.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("bad config JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Built-in profiles reproducing the reference experiment settings.
pub fn profile(name: &str) -> Result<RunConfig> {
    let full_grid = GridConfig {
        n_cells_per_side: 20,
        n_angles: 40,
    };
    let base = RunConfig {
        grid: full_grid,
        truth: TruthSpec::TwoBumpScattering,
        mode: RunMode::NonlinearScattering,
        dataset: DatasetConfig {
            n_pairs: 1000,
            noise_std: 0.0,
            load_from: None,
        },
        optimizer: OptimizerKind::Sgd,
        learning_rate: LearningRate::InverseDecay {
            eta0: 0.0044,
            alpha: 1.0,
        },
        alpha: 1.0,
        initial_guess: InitialGuess::ConstantDeviation { offset: 0.18 },
        stopping: StoppingRule::max_iters(2000),
        seed: 2718,
        solver: SolverOptions::default(),
        background_scale: 0.95,
        assembly: AssemblyMode::Eager,
        storage: Storage::Binary,
        weighted_error: true,
        spectral: None,
        cost_table: None,
    };
    let cfg = match name {
        "nonlinear-const" => base,
        "nonlinear-random" => RunConfig {
            initial_guess: InitialGuess::RandomFactor { lo: 0.1, hi: 3.1 },
            ..base
        },
        "absorption-const" => RunConfig {
            mode: RunMode::NonlinearAbsorption,
            truth: TruthSpec::TwoBumpAbsorption,
            learning_rate: LearningRate::InverseDecay {
                eta0: 0.0441,
                alpha: 1.0,
            },
            ..base
        },
        "absorption-random" => RunConfig {
            mode: RunMode::NonlinearAbsorption,
            truth: TruthSpec::TwoBumpAbsorption,
            learning_rate: LearningRate::InverseDecay {
                eta0: 0.0441,
                alpha: 1.0,
            },
            initial_guess: InitialGuess::RandomFactor { lo: 0.1, hi: 3.1 },
            ..base
        },
        "linear-const" => RunConfig {
            mode: RunMode::Linearized,
            learning_rate: LearningRate::InverseDecay {
                eta0: 0.0002,
                alpha: 1.0,
            },
            initial_guess: InitialGuess::ConstantDeviation { offset: 0.0111 },
            stopping: StoppingRule::max_iters(20_000),
            ..base
        },
        "linear-random" => RunConfig {
            mode: RunMode::Linearized,
            learning_rate: LearningRate::InverseDecay {
                eta0: 0.0002,
                alpha: 1.0,
            },
            initial_guess: InitialGuess::RandomFactor { lo: 1.0, hi: 3.0 },
            stopping: StoppingRule::max_iters(20_000),
            ..base
        },
        "linear-large-dev" => RunConfig {
            mode: RunMode::Linearized,
            learning_rate: LearningRate::InverseDecay {
                eta0: 0.0002,
                alpha: 1.0,
            },
            initial_guess: InitialGuess::Constant { value: 0.2 },
            stopping: StoppingRule::max_iters(20_000),
            ..base
        },
        "cost-table" => RunConfig {
            initial_guess: InitialGuess::RandomFactor { lo: 0.1, hi: 3.1 },
            cost_table: Some(CostTableConfig {
                sample_sizes: vec![100, 200, 400],
                tol: 0.2,
                sgd_max_iters: 2000,
                gd_max_iters: 100,
            }),
            ..base
        },
        other => {
            return Err(Error::Config(format!(
                "unknown profile {other:?}; available: nonlinear-const, nonlinear-random, \
                 absorption-const, absorption-random, linear-const, linear-random, \
                 linear-large-dev, cost-table"
            )))
        }
    };
    Ok(cfg)
}
