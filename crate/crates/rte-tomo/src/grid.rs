//! Phase-space discretization of the unit square times the unit circle.
//!
//! The spatial domain [0,1]^2 carries a uniform nodal mesh with
//! `n_cells_per_side + 1` nodes per axis; the angular domain is split into
//! `n_angles` equispaced directions `theta_k = -pi + k * dtheta`. Each node
//! owns the axis-aligned cell obtained by clipping
//! `[x - dx/2, x + dx/2]^2` to the domain, which yields the trapezoidal
//! volume weights (`dx^2` interior, halved on edges, quartered at corners)
//! and boundary segment weights (`dx`, halved at corners).
//!
//! Every (boundary node, direction) pair is classified as inflow, outflow or
//! tangential using the strict sign of `v . n` on the node's boundary faces.
//! Corner nodes sit on two faces: a direction is inflow at a corner when it
//! is inflow for at least one face and not outflow for the other (and
//! symmetrically for outflow); directions that enter through one face and
//! leave through the other graze the corner and are treated like tangential
//! pairs — they carry no boundary data and are excluded from both boundary
//! sets.
//!
//! A grid is immutable after construction and can be shared read-only across
//! concurrent solves.

use crate::error::{Error, Result};
use crate::field::BoundaryFlux;

/// Snap threshold for velocity components that should be exactly zero.
/// With `n_angles` divisible by 4 the only near-zero components occur at the
/// four axis-aligned directions, which are constructed exactly; anything
/// below this is rounding noise from `cos`/`sin`.
const AXIS_SNAP: f64 = 1e-12;

/// Classification of one (node, direction) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryClass {
    /// Interior node; no boundary label.
    Interior,
    /// Member of the inflow set: boundary data is prescribed here.
    Inflow,
    /// Member of the outflow set: measurements are taken here.
    Outflow,
    /// Face-tangential directions and corner-grazing directions; determined
    /// by the scheme, excluded from both boundary sets.
    Tangential,
}

/// Which boundary set a flux lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BoundarySide {
    /// The inflow set (incoming directions).
    Inflow,
    /// The outflow set (outgoing directions).
    Outflow,
}

/// One (node, direction) pair on the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct BoundaryPair {
    /// Flat node index (`i1 * (n+1) + i2`).
    pub node: usize,
    /// Direction index.
    pub angle: usize,
}

/// Quadrature weights attached to the grid.
///
/// The angular measure is normalized (weights sum to 1), the volume weights
/// sum to the domain area 1, and the segment weights sum to the perimeter 4.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// Weight of each direction, `1 / n_angles`.
    pub angle_weight: f64,
    /// Clipped-cell volume per node.
    pub volumes: Vec<f64>,
    /// Boundary segment weight per node (zero for interior nodes).
    pub segments: Vec<f64>,
}

/// The discretized phase space with boundary classification and quadrature.
#[derive(Debug, Clone)]
pub struct PhaseGrid {
    n_cells: usize,
    nodes_per_side: usize,
    n_nodes: usize,
    n_angles: usize,
    dx: f64,
    dtheta: f64,
    vx: Vec<f64>,
    vy: Vec<f64>,
    /// Along-axis extent of the clipped cell at axis index i (dx, halved at ends).
    ext: Vec<f64>,
    quadrature: QuadratureRule,
    class: Vec<BoundaryClass>,
    inflow_pairs: Vec<BoundaryPair>,
    outflow_pairs: Vec<BoundaryPair>,
    inflow_lookup: Vec<u32>,
    outflow_lookup: Vec<u32>,
    /// Per inflow pair: total inflow flux weight divided by the segment
    /// weight; equals |v . n| away from corners.
    inflow_factors: Vec<f64>,
    /// Per outflow pair: total outflow flux weight divided by the segment
    /// weight; equals v . n away from corners.
    outflow_factors: Vec<f64>,
}

const NO_PAIR: u32 = u32::MAX;

impl PhaseGrid {
    /// Build a grid with `n_cells_per_side` cells per axis and `n_angles`
    /// directions.
    ///
    /// `n_angles` must be at least 4 and divisible by 4 so that the four
    /// axis-aligned directions exist exactly.
    pub fn new(n_cells_per_side: usize, n_angles: usize) -> Result<Self> {
        if n_cells_per_side < 2 {
            return Err(Error::Config(format!(
                "n_cells_per_side must be >= 2, got {n_cells_per_side}"
            )));
        }
        if n_angles < 4 || !n_angles.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "n_angles must be >= 4 and divisible by 4, got {n_angles}"
            )));
        }

        let n = n_cells_per_side;
        let n1 = n + 1;
        let n_nodes = n1 * n1;
        let dx = 1.0 / n as f64;
        let dtheta = std::f64::consts::TAU / n_angles as f64;

        // First half of the circle, theta in [-pi, 0); second half by exact
        // reflection so that direction k + M/2 is exactly -direction k.
        let half = n_angles / 2;
        let quarter = n_angles / 4;
        let mut vx = vec![0.0; n_angles];
        let mut vy = vec![0.0; n_angles];
        for k in 0..half {
            let (cx, cy) = if k == 0 {
                (-1.0, 0.0)
            } else if k == quarter {
                (0.0, -1.0)
            } else {
                let theta = -std::f64::consts::PI + k as f64 * dtheta;
                let (s, c) = theta.sin_cos();
                (
                    if c.abs() < AXIS_SNAP { 0.0 } else { c },
                    if s.abs() < AXIS_SNAP { 0.0 } else { s },
                )
            };
            vx[k] = cx;
            vy[k] = cy;
            vx[k + half] = -cx;
            vy[k + half] = -cy;
        }

        let mut ext = vec![dx; n1];
        ext[0] = 0.5 * dx;
        ext[n] = 0.5 * dx;

        let mut volumes = vec![0.0; n_nodes];
        let mut segments = vec![0.0; n_nodes];
        for i1 in 0..n1 {
            for i2 in 0..n1 {
                let node = i1 * n1 + i2;
                volumes[node] = ext[i1] * ext[i2];
                let on_x = i1 == 0 || i1 == n;
                let on_y = i2 == 0 || i2 == n;
                segments[node] = match (on_x, on_y) {
                    (false, false) => 0.0,
                    (true, true) => 0.5 * dx,
                    _ => dx,
                };
            }
        }

        let mut class = vec![BoundaryClass::Interior; n_nodes * n_angles];
        let mut inflow_pairs = Vec::new();
        let mut outflow_pairs = Vec::new();
        let mut inflow_lookup = vec![NO_PAIR; n_nodes * n_angles];
        let mut outflow_lookup = vec![NO_PAIR; n_nodes * n_angles];
        let mut inflow_factors = Vec::new();
        let mut outflow_factors = Vec::new();

        for i1 in 0..n1 {
            for i2 in 0..n1 {
                let node = i1 * n1 + i2;
                // Outward normals of the boundary faces this node sits on,
                // with the face areas of the clipped cell.
                let mut faces: Vec<((f64, f64), f64)> = Vec::with_capacity(2);
                if i1 == 0 {
                    faces.push(((-1.0, 0.0), ext[i2]));
                }
                if i1 == n {
                    faces.push(((1.0, 0.0), ext[i2]));
                }
                if i2 == 0 {
                    faces.push(((0.0, -1.0), ext[i1]));
                }
                if i2 == n {
                    faces.push(((0.0, 1.0), ext[i1]));
                }
                if faces.is_empty() {
                    continue;
                }

                for k in 0..n_angles {
                    let idx = node * n_angles + k;
                    let mut any_in = false;
                    let mut any_out = false;
                    let mut flux_in = 0.0;
                    let mut flux_out = 0.0;
                    for &((nx, ny), area) in &faces {
                        let s = vx[k] * nx + vy[k] * ny;
                        if s > 0.0 {
                            any_out = true;
                            flux_out += s * area;
                        } else if s < 0.0 {
                            any_in = true;
                            flux_in += -s * area;
                        }
                    }
                    class[idx] = match (any_in, any_out) {
                        (true, false) => {
                            inflow_lookup[idx] = inflow_pairs.len() as u32;
                            inflow_pairs.push(BoundaryPair { node, angle: k });
                            inflow_factors.push(flux_in / segments[node]);
                            BoundaryClass::Inflow
                        }
                        (false, true) => {
                            outflow_lookup[idx] = outflow_pairs.len() as u32;
                            outflow_pairs.push(BoundaryPair { node, angle: k });
                            outflow_factors.push(flux_out / segments[node]);
                            BoundaryClass::Outflow
                        }
                        _ => BoundaryClass::Tangential,
                    };
                }
            }
        }

        Ok(Self {
            n_cells: n,
            nodes_per_side: n1,
            n_nodes,
            n_angles,
            dx,
            dtheta,
            vx,
            vy,
            ext,
            quadrature: QuadratureRule {
                angle_weight: 1.0 / n_angles as f64,
                volumes,
                segments,
            },
            class,
            inflow_pairs,
            outflow_pairs,
            inflow_lookup,
            outflow_lookup,
            inflow_factors,
            outflow_factors,
        })
    }

    pub fn n_cells_per_side(&self) -> usize {
        self.n_cells
    }

    pub fn nodes_per_side(&self) -> usize {
        self.nodes_per_side
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_angles(&self) -> usize {
        self.n_angles
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dtheta(&self) -> f64 {
        self.dtheta
    }

    /// Flat node index of the node at axis indices (i1, i2).
    pub fn node_index(&self, i1: usize, i2: usize) -> usize {
        debug_assert!(i1 < self.nodes_per_side && i2 < self.nodes_per_side);
        i1 * self.nodes_per_side + i2
    }

    /// Axis indices (i1, i2) of a flat node index.
    pub fn node_coords(&self, node: usize) -> (usize, usize) {
        (node / self.nodes_per_side, node % self.nodes_per_side)
    }

    /// Physical coordinates of a node.
    pub fn node_position(&self, node: usize) -> (f64, f64) {
        let (i1, i2) = self.node_coords(node);
        (i1 as f64 * self.dx, i2 as f64 * self.dx)
    }

    /// Direction angle `theta_k = -pi + k * dtheta`.
    pub fn angle(&self, k: usize) -> f64 {
        -std::f64::consts::PI + k as f64 * self.dtheta
    }

    /// Unit velocity of direction k. Axis-aligned directions are exact and
    /// `velocity(k + n_angles/2) == -velocity(k)` exactly.
    pub fn velocity(&self, k: usize) -> (f64, f64) {
        (self.vx[k], self.vy[k])
    }

    /// Index of the reversed direction, `k + n_angles/2 (mod n_angles)`.
    pub fn reflect_angle(&self, k: usize) -> usize {
        (k + self.n_angles / 2) % self.n_angles
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quadrature
    }

    /// Classification of a (node, direction) pair.
    pub fn classification(&self, node: usize, angle: usize) -> BoundaryClass {
        self.class[node * self.n_angles + angle]
    }

    /// Ordered pair list of one boundary set (node-major, then angle).
    pub fn side_pairs(&self, side: BoundarySide) -> &[BoundaryPair] {
        match side {
            BoundarySide::Inflow => &self.inflow_pairs,
            BoundarySide::Outflow => &self.outflow_pairs,
        }
    }

    /// Number of pairs in one boundary set.
    pub fn side_len(&self, side: BoundarySide) -> usize {
        self.side_pairs(side).len()
    }

    /// Position of (node, angle) within the side's pair list, if a member.
    pub fn side_index(&self, side: BoundarySide, node: usize, angle: usize) -> Option<usize> {
        let table = match side {
            BoundarySide::Inflow => &self.inflow_lookup,
            BoundarySide::Outflow => &self.outflow_lookup,
        };
        let v = table[node * self.n_angles + angle];
        (v != NO_PAIR).then_some(v as usize)
    }

    /// Per-pair normal velocity factor of a boundary set: the boundary-face
    /// flux weight divided by the segment weight. Away from corners this is
    /// exactly |v . n|; at a corner with two active faces the factors of both
    /// faces accumulate.
    pub fn normal_factors(&self, side: BoundarySide) -> &[f64] {
        match side {
            BoundarySide::Inflow => &self.inflow_factors,
            BoundarySide::Outflow => &self.outflow_factors,
        }
    }

    /// Discrete boundary inner product `sum(u * w * ds * w_theta)` over one
    /// boundary set. The squared boundary norm is the product of a flux with
    /// itself.
    pub fn boundary_inner_product(
        &self,
        side: BoundarySide,
        u: &BoundaryFlux,
        w: &BoundaryFlux,
    ) -> Result<f64> {
        if u.side() != side || w.side() != side {
            return Err(Error::Mismatch(format!(
                "boundary sets differ: requested {side:?}, got {:?} and {:?}",
                u.side(),
                w.side()
            )));
        }
        let pairs = self.side_pairs(side);
        if u.values().len() != pairs.len() || w.values().len() != pairs.len() {
            return Err(Error::Mismatch(format!(
                "boundary flux length {} / {} does not match set size {}",
                u.values().len(),
                w.values().len(),
                pairs.len()
            )));
        }
        let wt = self.quadrature.angle_weight;
        let mut acc = 0.0;
        for (i, p) in pairs.iter().enumerate() {
            acc += u.values()[i] * w.values()[i] * self.quadrature.segments[p.node] * wt;
        }
        Ok(acc)
    }

    /// Volume-weighted L2 inner product of two nodal fields.
    pub fn volume_inner_product(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), self.n_nodes);
        debug_assert_eq!(b.len(), self.n_nodes);
        a.iter()
            .zip(b)
            .zip(&self.quadrature.volumes)
            .map(|((x, y), v)| x * y * v)
            .sum()
    }

    /// Volume-weighted L2 norm of a nodal field.
    pub fn volume_norm(&self, a: &[f64]) -> f64 {
        self.volume_inner_product(a, a).sqrt()
    }

    // Solver-facing raw tables.

    pub(crate) fn extent(&self, axis_index: usize) -> f64 {
        self.ext[axis_index]
    }

    pub(crate) fn inflow_lookup_raw(&self, node: usize, angle: usize) -> Option<usize> {
        let v = self.inflow_lookup[node * self.n_angles + angle];
        (v != NO_PAIR).then_some(v as usize)
    }
}
