//! Data carried on the phase grid: full phase-space fields, nodal
//! coefficient fields and boundary fluxes.

use crate::error::{Error, Result};
use crate::grid::{BoundarySide, PhaseGrid};

/// A scalar function on phase space, one value per (node, direction).
///
/// Storage is direction-major: the block for direction `k` holds all node
/// values contiguously, which is the access pattern of a transport sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseField {
    n_nodes: usize,
    n_angles: usize,
    values: Vec<f64>,
}

impl PhaseField {
    pub fn zeros(grid: &PhaseGrid) -> Self {
        Self {
            n_nodes: grid.n_nodes(),
            n_angles: grid.n_angles(),
            values: vec![0.0; grid.n_nodes() * grid.n_angles()],
        }
    }

    pub fn constant(grid: &PhaseGrid, value: f64) -> Self {
        let mut f = Self::zeros(grid);
        f.values.fill(value);
        f
    }

    pub fn from_values(grid: &PhaseGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_nodes() * grid.n_angles() {
            return Err(Error::Mismatch(format!(
                "phase field length {} does not match grid size {}",
                values.len(),
                grid.n_nodes() * grid.n_angles()
            )));
        }
        Ok(Self {
            n_nodes: grid.n_nodes(),
            n_angles: grid.n_angles(),
            values,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_angles(&self) -> usize {
        self.n_angles
    }

    #[inline]
    pub fn get(&self, node: usize, angle: usize) -> f64 {
        self.values[angle * self.n_nodes + node]
    }

    #[inline]
    pub fn set(&mut self, node: usize, angle: usize, value: f64) {
        self.values[angle * self.n_nodes + node] = value;
    }

    /// Contiguous node-block of one direction.
    pub fn angle_block(&self, angle: usize) -> &[f64] {
        &self.values[angle * self.n_nodes..(angle + 1) * self.n_nodes]
    }

    pub fn angle_block_mut(&mut self, angle: usize) -> &mut [f64] {
        &mut self.values[angle * self.n_nodes..(angle + 1) * self.n_nodes]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Angular mean per node under the normalized measure.
    pub fn angular_mean(&self, grid: &PhaseGrid) -> Vec<f64> {
        let wt = grid.quadrature().angle_weight;
        let mut mean = vec![0.0; self.n_nodes];
        for k in 0..self.n_angles {
            let block = self.angle_block(k);
            for (m, b) in mean.iter_mut().zip(block) {
                *m += wt * b;
            }
        }
        mean
    }

    /// Extract the values on one boundary set.
    pub fn restrict(&self, grid: &PhaseGrid, side: BoundarySide) -> BoundaryFlux {
        let values = grid
            .side_pairs(side)
            .iter()
            .map(|p| self.get(p.node, p.angle))
            .collect();
        BoundaryFlux { side, values }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// In-place `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &PhaseField) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }
}

/// Which coefficient a [`Medium`] represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum MediumKind {
    /// Scattering coefficient sigma in `v . grad f = sigma * L[f]`.
    Scattering,
    /// Absorption coefficient sigma in `v . grad f = L[f] - sigma * f`
    /// (unit scattering).
    Absorption,
}

/// A nodal coefficient field (scattering or absorption).
#[derive(Debug, Clone, PartialEq)]
pub struct Medium {
    kind: MediumKind,
    values: Vec<f64>,
}

impl Medium {
    pub fn new(grid: &PhaseGrid, kind: MediumKind, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(Error::Mismatch(format!(
                "medium length {} does not match node count {}",
                values.len(),
                grid.n_nodes()
            )));
        }
        Ok(Self { kind, values })
    }

    pub fn constant(grid: &PhaseGrid, kind: MediumKind, value: f64) -> Self {
        Self {
            kind,
            values: vec![value; grid.n_nodes()],
        }
    }

    /// Sample a function of position at every node.
    pub fn from_fn(grid: &PhaseGrid, kind: MediumKind, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.n_nodes())
            .map(|node| {
                let (x1, x2) = grid.node_position(node);
                f(x1, x2)
            })
            .collect();
        Self { kind, values }
    }

    pub fn kind(&self) -> MediumKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, v| m.min(*v))
    }

    /// In-place `self += scale * other` (kinds must match).
    pub fn axpy(&mut self, scale: f64, other: &Medium) -> Result<()> {
        if self.kind != other.kind || self.values.len() != other.values.len() {
            return Err(Error::Mismatch("media differ in kind or size".into()));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }
}

/// Values attached to one boundary set, aligned with the grid's canonical
/// pair ordering for that set.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFlux {
    pub(crate) side: BoundarySide,
    pub(crate) values: Vec<f64>,
}

impl BoundaryFlux {
    pub fn zeros(grid: &PhaseGrid, side: BoundarySide) -> Self {
        Self {
            side,
            values: vec![0.0; grid.side_len(side)],
        }
    }

    pub fn constant(grid: &PhaseGrid, side: BoundarySide, value: f64) -> Self {
        Self {
            side,
            values: vec![value; grid.side_len(side)],
        }
    }

    pub fn from_values(grid: &PhaseGrid, side: BoundarySide, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.side_len(side) {
            return Err(Error::Mismatch(format!(
                "boundary flux length {} does not match set size {}",
                values.len(),
                grid.side_len(side)
            )));
        }
        Ok(Self { side, values })
    }

    pub fn side(&self) -> BoundarySide {
        self.side
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Pointwise difference with another flux on the same set.
    pub fn sub(&self, other: &BoundaryFlux) -> Result<BoundaryFlux> {
        if self.side != other.side || self.values.len() != other.values.len() {
            return Err(Error::Mismatch("boundary sets differ".into()));
        }
        Ok(BoundaryFlux {
            side: self.side,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }
}
