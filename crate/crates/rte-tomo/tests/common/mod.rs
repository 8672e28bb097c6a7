//! Shared test oracles, written independently of the library's solver path:
//! a brute-force boundary classifier and a dense assembly of the transport
//! system solved by LU factorization.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rte_tomo::{BoundarySide, Medium, MediumKind, PhaseField, PhaseGrid};

/// Independent classification of one (node, angle) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleClass {
    Interior,
    Inflow,
    Outflow,
    Grazing,
}

/// Velocity table recomputed from scratch (snapped axis directions).
pub fn oracle_velocities(n_angles: usize) -> Vec<(f64, f64)> {
    (0..n_angles)
        .map(|k| {
            let theta = -std::f64::consts::PI
                + k as f64 * std::f64::consts::TAU / n_angles as f64;
            let (mut s, mut c) = theta.sin_cos();
            if s.abs() < 1e-9 {
                s = 0.0;
            }
            if c.abs() < 1e-9 {
                c = 0.0;
            }
            (c, s)
        })
        .collect()
}

/// Outward normals of the boundary faces a node sits on.
pub fn oracle_faces(n_cells: usize, i1: usize, i2: usize) -> Vec<(f64, f64)> {
    let mut faces = Vec::new();
    if i1 == 0 {
        faces.push((-1.0, 0.0));
    }
    if i1 == n_cells {
        faces.push((1.0, 0.0));
    }
    if i2 == 0 {
        faces.push((0.0, -1.0));
    }
    if i2 == n_cells {
        faces.push((0.0, 1.0));
    }
    faces
}

/// Brute-force classifier: strict signs of v . n over the node's faces.
pub fn oracle_classify(n_cells: usize, i1: usize, i2: usize, v: (f64, f64)) -> OracleClass {
    let faces = oracle_faces(n_cells, i1, i2);
    if faces.is_empty() {
        return OracleClass::Interior;
    }
    let mut any_in = false;
    let mut any_out = false;
    for (nx, ny) in faces {
        let s = v.0 * nx + v.1 * ny;
        if s > 0.0 {
            any_out = true;
        } else if s < 0.0 {
            any_in = true;
        }
    }
    match (any_in, any_out) {
        (true, false) => OracleClass::Inflow,
        (false, true) => OracleClass::Outflow,
        _ => OracleClass::Grazing,
    }
}

/// Dense assembly of the finite-volume transport system, face by face.
///
/// Unknown layout matches `PhaseField`: index = angle * n_nodes + node,
/// node = i1 * (n+1) + i2. `inflow_at(node, angle)` supplies boundary data
/// (queried only for pairs the oracle classifies as inflow);
/// `source_at(node, angle)` the volumetric source.
pub struct DenseTransport {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub n_nodes: usize,
    pub n_angles: usize,
}

pub fn assemble_dense(
    n_cells: usize,
    n_angles: usize,
    kind: MediumKind,
    sigma: &dyn Fn(usize) -> f64,
    inflow_at: &dyn Fn(usize, usize) -> f64,
    source_at: &dyn Fn(usize, usize) -> f64,
) -> DenseTransport {
    let n1 = n_cells + 1;
    let n_nodes = n1 * n1;
    let dim = n_nodes * n_angles;
    let dx = 1.0 / n_cells as f64;
    let vels = oracle_velocities(n_angles);
    let ext = |i: usize| if i == 0 || i == n_cells { 0.5 * dx } else { dx };
    let wt = 1.0 / n_angles as f64;

    let mut a = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);

    for i1 in 0..n1 {
        for i2 in 0..n1 {
            let node = i1 * n1 + i2;
            let vol = ext(i1) * ext(i2);
            for (k, &(vx, vy)) in vels.iter().enumerate() {
                let row = k * n_nodes + node;
                // Four faces: (outward normal, area, neighbor node if interior).
                let faces: [((f64, f64), f64, Option<usize>); 4] = [
                    (
                        (-1.0, 0.0),
                        ext(i2),
                        (i1 > 0).then(|| (i1 - 1) * n1 + i2),
                    ),
                    (
                        (1.0, 0.0),
                        ext(i2),
                        (i1 < n_cells).then(|| (i1 + 1) * n1 + i2),
                    ),
                    ((0.0, -1.0), ext(i1), (i2 > 0).then(|| i1 * n1 + i2 - 1)),
                    (
                        (0.0, 1.0),
                        ext(i1),
                        (i2 < n_cells).then(|| i1 * n1 + i2 + 1),
                    ),
                ];
                for ((nx, ny), area, neighbor) in faces {
                    let s = vx * nx + vy * ny;
                    if s > 0.0 {
                        a[(row, row)] += s * area;
                    } else if s < 0.0 {
                        match neighbor {
                            Some(nb) => a[(row, k * n_nodes + nb)] += s * area,
                            None => {
                                if oracle_classify(n_cells, i1, i2, (vx, vy))
                                    == OracleClass::Inflow
                                {
                                    b[row] += -s * area * inflow_at(node, k);
                                }
                            }
                        }
                    }
                }
                match kind {
                    MediumKind::Scattering => {
                        a[(row, row)] += vol * sigma(node);
                        for m in 0..n_angles {
                            a[(row, m * n_nodes + node)] -= vol * sigma(node) * wt;
                        }
                    }
                    MediumKind::Absorption => {
                        a[(row, row)] += vol * (1.0 + sigma(node));
                        for m in 0..n_angles {
                            a[(row, m * n_nodes + node)] -= vol * wt;
                        }
                    }
                }
                b[row] += vol * source_at(node, k);
            }
        }
    }

    DenseTransport {
        matrix: a,
        rhs: b,
        n_nodes,
        n_angles,
    }
}

impl DenseTransport {
    /// LU solve of the assembled system.
    pub fn solve(&self) -> DVector<f64> {
        self.matrix
            .clone()
            .lu()
            .solve(&self.rhs)
            .expect("dense transport system is nonsingular")
    }
}

/// Deterministic RNG for tests.
pub fn test_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random medium with values in [lo, hi].
pub fn random_medium(
    grid: &PhaseGrid,
    kind: MediumKind,
    lo: f64,
    hi: f64,
    rng: &mut ChaCha8Rng,
) -> Medium {
    let values = (0..grid.n_nodes())
        .map(|_| rng.random_range(lo..hi))
        .collect();
    Medium::new(grid, kind, values).unwrap()
}

/// Random boundary flux with entries in [lo, hi].
pub fn random_flux(
    grid: &PhaseGrid,
    side: BoundarySide,
    lo: f64,
    hi: f64,
    rng: &mut ChaCha8Rng,
) -> rte_tomo::BoundaryFlux {
    let values = (0..grid.side_len(side))
        .map(|_| rng.random_range(lo..hi))
        .collect();
    rte_tomo::BoundaryFlux::from_values(grid, side, values).unwrap()
}

/// Max-norm difference between a solver field and an oracle vector in the
/// shared layout.
pub fn max_diff(field: &PhaseField, oracle: &DVector<f64>) -> f64 {
    field
        .values()
        .iter()
        .zip(oracle.iter())
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
}
