//! Run metrics: relative reconstruction error and transport-solve
//! accounting.

use crate::error::{Error, Result};
use crate::field::Medium;
use crate::grid::PhaseGrid;

/// Relative L2 error `|sigma - truth| / |truth|`.
///
/// `weighted` selects the quadrature-weighted norm (the default
/// convention); the unweighted variant treats the nodal vectors as plain
/// Euclidean vectors.
pub fn relative_error(
    grid: &PhaseGrid,
    sigma: &Medium,
    truth: &Medium,
    weighted: bool,
) -> Result<f64> {
    if sigma.values().len() != truth.values().len()
        || sigma.values().len() != grid.n_nodes()
    {
        return Err(Error::Mismatch("media live on different grids".into()));
    }
    let diff: Vec<f64> = sigma
        .values()
        .iter()
        .zip(truth.values())
        .map(|(a, b)| a - b)
        .collect();
    let (num, den) = if weighted {
        (grid.volume_norm(&diff), grid.volume_norm(truth.values()))
    } else {
        let n = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        let d = truth.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        (n, d)
    };
    if den == 0.0 {
        return Err(Error::Config("truth has zero norm".into()));
    }
    Ok(num / den)
}

/// Per-run transport-solve accounting.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CostLedger {
    /// Solves per iteration (2 for SGD, 2N for the full-batch baseline).
    pub solves_per_iteration: u64,
    pub iterations: u64,
    /// Instrumented total from the solver counter.
    pub total_solves: u64,
}

impl CostLedger {
    /// The instrumented total must equal the analytic product for
    /// fixed-cost iterations.
    pub fn is_consistent(&self) -> bool {
        self.total_solves == self.solves_per_iteration * self.iterations
    }
}
