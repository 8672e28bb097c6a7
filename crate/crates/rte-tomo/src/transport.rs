//! Steady transport solves on the phase grid: forward problem, adjoint
//! problem and albedo measurements.
//!
//! The discrete operator is a vertex-centered finite-volume upwind scheme on
//! the clipped cells owned by each node. At interior nodes it reduces to the
//! classic first-order upwind finite-difference discretization of
//! `v . grad f + a f - s <f> = q` (scattering: `a = s = sigma`; absorption:
//! `a = 1 + sigma`, `s = 1`). Inflow data enters through boundary-face
//! fluxes, outflow leaves through the node's own value, and face-tangential
//! directions see no boundary flux at all. Corner-grazing directions (inflow
//! through one face of a corner, outflow through the other) belong to
//! neither boundary set and their inflow faces see vacuum; the resulting
//! perturbation stays confined to the boundary row of the grazing direction.
//! This face-flux bookkeeping makes the reflected-angle adjoint solve the
//! exact algebraic transpose of the forward solve, so the discrete duality
//! identity holds to solver tolerance.
//!
//! The angularly coupled system is solved by transport sweeps over the
//! scattering source (source iteration), optionally GMRES-accelerated on the
//! angular-mean unknown. Sweeps within one solve run sequentially; callers
//! parallelize across independent solves.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::field::{BoundaryFlux, Medium, MediumKind, PhaseField};
use crate::grid::{BoundarySide, PhaseGrid};
use crate::krylov;

/// How the angular coupling is resolved.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Acceleration {
    /// Plain source iteration on the angular mean.
    SourceIteration,
    /// GMRES on the angular-mean fixed point (default).
    Krylov { restart: usize },
}

/// Options for one transport solve.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverOptions {
    /// Relative residual tolerance of the inner iteration.
    pub tolerance: f64,
    /// Budget of full transport sweeps for one solve.
    pub max_sweeps: usize,
    pub acceleration: Acceleration,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_sweeps: 20_000,
            acceleration: Acceleration::Krylov { restart: 60 },
        }
    }
}

/// Counts transport solves. One forward solve is one count; an adjoint solve
/// is one count (it is a single reflected forward solve).
#[derive(Debug, Default)]
pub struct SolveCounter {
    count: AtomicU64,
}

impl SolveCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bump(&self) {
        self.count.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

/// Result of a transport solve.
#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub field: PhaseField,
    /// Total transport sweeps spent.
    pub sweeps: usize,
    /// Max-norm of the discrete residual (per-volume convention).
    pub residual: f64,
    /// Set when the medium has negative values; the solve proceeds (the
    /// linearized residual may be signed) but callers may want to know.
    pub negative_medium: bool,
}

/// Apply the collision operator `L[f] = <f> - f`.
pub fn collision(grid: &PhaseGrid, f: &PhaseField) -> PhaseField {
    let mean = f.angular_mean(grid);
    let mut out = PhaseField::zeros(grid);
    for k in 0..grid.n_angles() {
        let fb = f.angle_block(k);
        let ob = out.angle_block_mut(k);
        for ((o, fv), m) in ob.iter_mut().zip(fb).zip(&mean) {
            *o = m - fv;
        }
    }
    out
}

/// Extract the albedo measurement `(n . v) f` on the outflow set.
///
/// The per-pair normal velocity factor is the grid's outflow factor; at a
/// corner with two outgoing faces the factors of both faces accumulate.
pub fn measure_outflow(grid: &PhaseGrid, f: &PhaseField) -> BoundaryFlux {
    let factors = grid.normal_factors(BoundarySide::Outflow);
    let values = grid
        .side_pairs(BoundarySide::Outflow)
        .iter()
        .zip(factors)
        .map(|(p, w)| w * f.get(p.node, p.angle))
        .collect();
    BoundaryFlux::from_values(grid, BoundarySide::Outflow, values).expect("sized by construction")
}

/// Reaction/scattering coefficients of the two equation forms.
fn reaction_terms(grid: &PhaseGrid, medium: &Medium) -> (Vec<f64>, Vec<f64>) {
    let vols = &grid.quadrature().volumes;
    match medium.kind() {
        MediumKind::Scattering => {
            let vola: Vec<f64> = medium.values().iter().zip(vols).map(|(s, v)| s * v).collect();
            (vola.clone(), vola)
        }
        MediumKind::Absorption => {
            let vola = medium
                .values()
                .iter()
                .zip(vols)
                .map(|(s, v)| (1.0 + s) * v)
                .collect();
            let vols_ = vols.clone();
            (vola, vols_)
        }
    }
}

struct SweepContext<'a> {
    grid: &'a PhaseGrid,
    /// vol * a per node.
    vola: &'a [f64],
    /// vol * s per node.
    vols: &'a [f64],
    inflow: Option<&'a BoundaryFlux>,
    source: Option<&'a PhaseField>,
}

impl SweepContext<'_> {
    /// One full transport sweep: solve each direction exactly with the
    /// scattering source frozen at the angular mean `rho` (pass an empty
    /// slice for a zero mean). `with_data = false` drops inflow data and
    /// volumetric source, leaving the pure scattering-application sweep.
    fn sweep(&self, rho: &[f64], with_data: bool, out: &mut PhaseField) {
        let grid = self.grid;
        let n1 = grid.nodes_per_side();
        let n = n1 - 1;
        let vols = &grid.quadrature().volumes;
        let use_rho = !rho.is_empty();

        for k in 0..grid.n_angles() {
            let (vx, vy) = grid.velocity(k);
            let qb = if with_data {
                self.source.map(|s| s.angle_block(k))
            } else {
                None
            };
            let phi = if with_data { self.inflow } else { None };
            let block = out.angle_block_mut(k);

            for r1 in 0..n1 {
                let i1 = if vx < 0.0 { n - r1 } else { r1 };
                for r2 in 0..n1 {
                    let i2 = if vy < 0.0 { n - r2 } else { r2 };
                    let node = i1 * n1 + i2;
                    let axc = vx.abs() * grid.extent(i2);
                    let ayc = vy.abs() * grid.extent(i1);
                    let mut rhs = 0.0;
                    if use_rho {
                        rhs += self.vols[node] * rho[node];
                    }
                    if let Some(q) = qb {
                        rhs += vols[node] * q[node];
                    }
                    if vx > 0.0 {
                        if i1 > 0 {
                            rhs += axc * block[node - n1];
                        } else if let Some(phi) = phi {
                            if let Some(pos) = grid.inflow_lookup_raw(node, k) {
                                rhs += axc * phi.values()[pos];
                            }
                        }
                    } else if vx < 0.0 {
                        if i1 < n {
                            rhs += axc * block[node + n1];
                        } else if let Some(phi) = phi {
                            if let Some(pos) = grid.inflow_lookup_raw(node, k) {
                                rhs += axc * phi.values()[pos];
                            }
                        }
                    }
                    if vy > 0.0 {
                        if i2 > 0 {
                            rhs += ayc * block[node - 1];
                        } else if let Some(phi) = phi {
                            if let Some(pos) = grid.inflow_lookup_raw(node, k) {
                                rhs += ayc * phi.values()[pos];
                            }
                        }
                    } else if vy < 0.0 {
                        if i2 < n {
                            rhs += ayc * block[node + 1];
                        } else if let Some(phi) = phi {
                            if let Some(pos) = grid.inflow_lookup_raw(node, k) {
                                rhs += ayc * phi.values()[pos];
                            }
                        }
                    }
                    block[node] = rhs / (axc + ayc + self.vola[node]);
                }
            }
        }
    }
}

fn validate_inputs(
    grid: &PhaseGrid,
    medium: &Medium,
    inflow: &BoundaryFlux,
    source: Option<&PhaseField>,
) -> Result<()> {
    if medium.values().len() != grid.n_nodes() {
        return Err(Error::Mismatch("medium does not match grid".into()));
    }
    if inflow.side() != BoundarySide::Inflow
        || inflow.values().len() != grid.side_len(BoundarySide::Inflow)
    {
        return Err(Error::Mismatch(
            "inflow data must live on the grid's inflow set".into(),
        ));
    }
    if let Some(q) = source {
        if q.values().len() != grid.n_nodes() * grid.n_angles() {
            return Err(Error::Mismatch("source does not match grid".into()));
        }
    }
    Ok(())
}

/// Solve the forward transport problem for the given medium, inflow data and
/// optional volumetric source.
pub fn solve_forward(
    grid: &PhaseGrid,
    medium: &Medium,
    inflow: &BoundaryFlux,
    source: Option<&PhaseField>,
    opts: &SolverOptions,
    counter: &SolveCounter,
) -> Result<SolveOutput> {
    validate_inputs(grid, medium, inflow, source)?;

    let (vola, vols) = reaction_terms(grid, medium);
    let negative_medium = medium.min() < 0.0;
    // The sweep divides by axc + ayc + vol*a >= min_extent + vol*a.
    for node in 0..grid.n_nodes() {
        let (i1, i2) = grid.node_coords(node);
        let floor = grid.extent(i1).min(grid.extent(i2));
        if vola[node] <= -0.99 * floor {
            return Err(Error::Config(format!(
                "medium too negative at node {node} for a stable sweep"
            )));
        }
    }
    counter.bump();

    let cx = SweepContext {
        grid,
        vola: &vola,
        vols: &vols,
        inflow: Some(inflow),
        source,
    };

    let mut field = PhaseField::zeros(grid);
    cx.sweep(&[], true, &mut field);
    let mut sweeps = 1usize;
    let rhs = field.angular_mean(grid);

    let scale = {
        let mut s: f64 = 1.0;
        for v in inflow.values() {
            s = s.max(v.abs());
        }
        if let Some(q) = source {
            s = s.max(q.max_abs());
        }
        s
    };
    let target = 10.0 * opts.tolerance * scale;

    let mut rho = rhs.clone();
    let mut tol_eff = opts.tolerance;
    let mut scratch = PhaseField::zeros(grid);

    loop {
        match opts.acceleration {
            Acceleration::SourceIteration => {
                let bnorm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                loop {
                    cx.sweep(&rho, true, &mut field);
                    sweeps += 1;
                    let rho_new = field.angular_mean(grid);
                    let diff = rho
                        .iter()
                        .zip(&rho_new)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    rho = rho_new;
                    if diff <= tol_eff * bnorm || sweeps >= opts.max_sweeps {
                        break;
                    }
                }
            }
            Acceleration::Krylov { restart } => {
                let budget = opts.max_sweeps.saturating_sub(sweeps).max(1);
                let mut inner_sweeps = 0usize;
                let mut apply = |x: &[f64], y: &mut [f64]| {
                    cx.sweep(x, false, &mut scratch);
                    inner_sweeps += 1;
                    let mean = scratch.angular_mean(grid);
                    for ((yi, xi), mi) in y.iter_mut().zip(x).zip(&mean) {
                        *yi = xi - mi;
                    }
                };
                krylov::gmres(&mut apply, &rhs, &mut rho, tol_eff, restart, budget);
                sweeps += inner_sweeps;
                cx.sweep(&rho, true, &mut field);
                sweeps += 1;
            }
        }

        let res = transport_residual(grid, medium, inflow, source, &field)?.max_abs();
        if res <= target {
            return Ok(SolveOutput {
                field,
                sweeps,
                residual: res,
                negative_medium,
            });
        }
        if sweeps >= opts.max_sweeps || tol_eff < 1e-16 {
            return Err(Error::SolverNonConvergence {
                achieved: res,
                target,
                iterations: sweeps,
            });
        }
        tol_eff *= 1e-2;
        rho = field.angular_mean(grid);
    }
}

/// Solve the adjoint transport problem with prescribed values on the outflow
/// set, via angle reflection: `g(x, theta) = w(x, theta + pi)` where `w` is
/// a forward solve whose inflow data is the reflected outflow data.
pub fn solve_adjoint(
    grid: &PhaseGrid,
    medium: &Medium,
    outflow_data: &BoundaryFlux,
    opts: &SolverOptions,
    counter: &SolveCounter,
) -> Result<SolveOutput> {
    if outflow_data.side() != BoundarySide::Outflow
        || outflow_data.values().len() != grid.side_len(BoundarySide::Outflow)
    {
        return Err(Error::Mismatch(
            "adjoint data must live on the grid's outflow set".into(),
        ));
    }
    let reflected = reflect_outflow_data(grid, outflow_data);
    let out = solve_forward(grid, medium, &reflected, None, opts, counter)?;
    let mut g = PhaseField::zeros(grid);
    for k in 0..grid.n_angles() {
        let r = grid.reflect_angle(k);
        g.angle_block_mut(k).copy_from_slice(out.field.angle_block(r));
    }
    Ok(SolveOutput {
        field: g,
        sweeps: out.sweeps,
        residual: out.residual,
        negative_medium: out.negative_medium,
    })
}

/// Map outflow-set data to the inflow set of the reversed directions.
pub fn reflect_outflow_data(grid: &PhaseGrid, h: &BoundaryFlux) -> BoundaryFlux {
    let mut values = vec![0.0; grid.side_len(BoundarySide::Inflow)];
    for (i, p) in grid.side_pairs(BoundarySide::Inflow).iter().enumerate() {
        let r = grid.reflect_angle(p.angle);
        if let Some(pos) = grid.side_index(BoundarySide::Outflow, p.node, r) {
            values[i] = h.values()[pos];
        }
    }
    BoundaryFlux::from_values(grid, BoundarySide::Inflow, values).expect("sized by construction")
}

/// Discrete residual of the transport equations for a candidate field, in
/// the per-volume (PDE) convention. Zero for an exact solution.
pub fn transport_residual(
    grid: &PhaseGrid,
    medium: &Medium,
    inflow: &BoundaryFlux,
    source: Option<&PhaseField>,
    f: &PhaseField,
) -> Result<PhaseField> {
    validate_inputs(grid, medium, inflow, source)?;
    let (vola, vols) = reaction_terms(grid, medium);
    let mean = f.angular_mean(grid);
    let n1 = grid.nodes_per_side();
    let n = n1 - 1;
    let volumes = &grid.quadrature().volumes;
    let mut res = PhaseField::zeros(grid);

    for k in 0..grid.n_angles() {
        let (vx, vy) = grid.velocity(k);
        let fb = f.angle_block(k);
        let qb = source.map(|s| s.angle_block(k));
        let rb = res.angle_block_mut(k);
        for i1 in 0..n1 {
            for i2 in 0..n1 {
                let node = i1 * n1 + i2;
                let axc = vx.abs() * grid.extent(i2);
                let ayc = vy.abs() * grid.extent(i1);
                let mut acc = (axc + ayc + vola[node]) * fb[node]
                    - vols[node] * mean[node];
                if let Some(q) = qb {
                    acc -= volumes[node] * q[node];
                }
                let upwind_x = if vx > 0.0 {
                    if i1 > 0 {
                        Some(fb[node - n1])
                    } else {
                        None
                    }
                } else if vx < 0.0 {
                    if i1 < n {
                        Some(fb[node + n1])
                    } else {
                        None
                    }
                } else {
                    Some(0.0)
                };
                match upwind_x {
                    Some(u) => acc -= axc * u,
                    None => {
                        if let Some(pos) = grid.inflow_lookup_raw(node, k) {
                            acc -= axc * inflow.values()[pos];
                        }
                    }
                }
                let upwind_y = if vy > 0.0 {
                    if i2 > 0 {
                        Some(fb[node - 1])
                    } else {
                        None
                    }
                } else if vy < 0.0 {
                    if i2 < n {
                        Some(fb[node + 1])
                    } else {
                        None
                    }
                } else {
                    Some(0.0)
                };
                match upwind_y {
                    Some(u) => acc -= ayc * u,
                    None => {
                        if let Some(pos) = grid.inflow_lookup_raw(node, k) {
                            acc -= ayc * inflow.values()[pos];
                        }
                    }
                }
                rb[node] = acc / volumes[node];
            }
        }
    }
    Ok(res)
}
