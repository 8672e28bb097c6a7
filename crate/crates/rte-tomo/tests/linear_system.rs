//! The linearized formulation against transport-level oracles: the
//! first-kind integral identity, second-order linearization residual, the
//! detector adjoints' residual contract and the exact minimizer against a
//! stacked least-squares oracle.

mod common;

use std::sync::Arc;

use common::*;
use nalgebra::{DMatrix, DVector};
use rte_tomo::experiments::{generate_dataset, ExperimentPair};
use rte_tomo::linear::{
    assemble_experiment, assemble_system, compute_b, compute_beta, exact_minimizer,
    kernel_matrix, precompute_detector_adjoints, AssemblyMode,
};
use rte_tomo::transport::transport_residual;
use rte_tomo::{
    collision, solve_forward, BoundaryFlux, BoundarySide, Medium, MediumKind, PhaseField,
    PhaseGrid, SolveCounter, SolverOptions,
};

/// The integral identity: for a perturbation field s, the fluctuation solve
/// with source `s * L[f0]` and zero inflow measures `(A s)_m` at detector m,
/// exactly (to solver tolerance) in the discrete setting.
#[test]
fn fluctuation_solve_matches_kernel_application() {
    let grid = PhaseGrid::new(10, 8).unwrap();
    let mut rng = test_rng(41);
    let background = random_medium(&grid, MediumKind::Scattering, 0.1, 0.4, &mut rng);
    let opts = SolverOptions::default();
    let counter = SolveCounter::new();
    let detset =
        precompute_detector_adjoints(&grid, &background, None, &opts, &counter).unwrap();

    let truth_for_data = background.clone();
    let pairs = generate_dataset(&grid, &truth_for_data, 1, 0.0, 4, &opts, &counter).unwrap();
    let f0 = solve_forward(&grid, &background, &pairs[0].inflow, None, &opts, &counter)
        .unwrap()
        .field;
    let beta = compute_beta(&grid, &f0, &detset);
    let a = kernel_matrix(&grid, &beta);

    // Random signed perturbation.
    let s: Vec<f64> = (0..grid.n_nodes())
        .map(|i| 0.02 * ((i as f64 * 0.7).sin()))
        .collect();
    let sv = DVector::from_vec(s.clone());
    let predicted = &a * &sv;

    // Source-backed fluctuation solve: v.grad ftil = sigma0 L[ftil] + s L[f0].
    let l0 = collision(&grid, &f0);
    let mut source = PhaseField::zeros(&grid);
    for k in 0..grid.n_angles() {
        let lb = l0.angle_block(k);
        let sb = source.angle_block_mut(k);
        for (node, out) in sb.iter_mut().enumerate() {
            *out = s[node] * lb[node];
        }
    }
    let zero_inflow = BoundaryFlux::zeros(&grid, BoundarySide::Inflow);
    let ftil = solve_forward(&grid, &background, &zero_inflow, Some(&source), &opts, &counter)
        .unwrap()
        .field;

    let factors = grid.normal_factors(BoundarySide::Outflow);
    for (m, d) in detset.detectors().iter().enumerate() {
        let pos = grid
            .side_index(BoundarySide::Outflow, d.node, d.angle)
            .unwrap();
        let measured = factors[pos] * ftil.get(d.node, d.angle);
        assert!(
            (measured - predicted[m]).abs() < 1e-6,
            "detector {m}: measured {measured:.9e} vs kernel {:.9e}",
            predicted[m]
        );
    }
}

/// Against real data the kernel residual `b - A s` is second order in the
/// perturbation size: halving the perturbation shrinks it about fourfold.
#[test]
fn linearization_residual_is_second_order() {
    let grid = PhaseGrid::new(10, 8).unwrap();
    let opts = SolverOptions::default();
    let counter = SolveCounter::new();
    let background = Medium::from_fn(&grid, MediumKind::Scattering, |x, y| {
        0.2 + 0.05 * x + 0.04 * y
    });
    let detset =
        precompute_detector_adjoints(&grid, &background, None, &opts, &counter).unwrap();

    let bump = |x: f64, y: f64| (-8.0 * ((x - 0.5).powi(2) + (y - 0.5).powi(2))).exp();
    let mut residuals = Vec::new();
    let mut sizes = Vec::new();
    for level in 0..3 {
        let eps = 0.08 / f64::powi(2.0, level);
        let mut truth = background.clone();
        for (node, v) in truth.values_mut().iter_mut().enumerate() {
            let (x, y) = grid.node_position(node);
            *v += eps * bump(x, y);
        }
        let pairs = generate_dataset(&grid, &truth, 1, 0.0, 77, &opts, &counter).unwrap();
        let f0 = solve_forward(&grid, &background, &pairs[0].inflow, None, &opts, &counter)
            .unwrap()
            .field;
        let beta = compute_beta(&grid, &f0, &detset);
        let a = kernel_matrix(&grid, &beta);
        let b = compute_b(&grid, &pairs[0], &f0, &detset);
        let stil = DVector::from_iterator(
            grid.n_nodes(),
            truth
                .values()
                .iter()
                .zip(background.values())
                .map(|(t, b)| t - b),
        );
        residuals.push((&b - &a * &stil).norm());
        sizes.push(stil.norm());
    }
    // Second-order decay: each halving divides the residual by ~4.
    let r1 = residuals[0] / residuals[1];
    let r2 = residuals[1] / residuals[2];
    assert!(
        r1 > 3.0 && r1 < 5.0 && r2 > 3.0 && r2 < 5.0,
        "halving ratios {r1:.2}, {r2:.2} not second order"
    );
    // Fitted quadratic constant bounds the residual: |b - As| <= 1e-6 + C|s|^2.
    let c = residuals
        .iter()
        .zip(&sizes)
        .map(|(r, s)| r / (s * s))
        .fold(0.0_f64, f64::max);
    for (r, s) in residuals.iter().zip(&sizes) {
        assert!(*r <= 1e-6 + 1.01 * c * s * s);
    }
}

/// Every detector adjoint satisfies the dual transport equation: reflecting
/// it back gives a forward solution for the reflected delta data.
#[test]
fn detector_adjoints_satisfy_dual_equation() {
    let grid = PhaseGrid::new(6, 8).unwrap();
    let mut rng = test_rng(4);
    let background = random_medium(&grid, MediumKind::Scattering, 0.1, 0.4, &mut rng);
    let opts = SolverOptions::default();
    let counter = SolveCounter::new();
    let detset =
        precompute_detector_adjoints(&grid, &background, None, &opts, &counter).unwrap();
    for (m, d) in detset.detectors().iter().enumerate().step_by(7) {
        let g = detset.adjoint(m);
        // w(x, k) = g(x, k + M/2) solves the forward problem with the
        // reflected delta as inflow data.
        let mut w = PhaseField::zeros(&grid);
        for k in 0..grid.n_angles() {
            let r = grid.reflect_angle(k);
            w.angle_block_mut(k).copy_from_slice(g.angle_block(r));
        }
        let mut data = BoundaryFlux::zeros(&grid, BoundarySide::Outflow);
        let pos = grid
            .side_index(BoundarySide::Outflow, d.node, d.angle)
            .unwrap();
        data.values_mut()[pos] =
            1.0 / (grid.quadrature().segments[d.node] * grid.quadrature().angle_weight);
        let reflected = rte_tomo::transport::reflect_outflow_data(&grid, &data);
        let res = transport_residual(&grid, &background, &reflected, None, &w)
            .unwrap()
            .max_abs();
        // The delta data has magnitude 1/(ds w) ~ n_angles/dx; scale the
        // tolerance accordingly.
        let scale = 1.0 + data.values()[pos].abs();
        assert!(res <= 1e-9 * scale, "detector {m} residual {res:.3e}");
    }
}

/// The exact minimizer agrees with an independently stacked least-squares
/// solve of all experiments at once.
#[test]
fn exact_minimizer_matches_stacked_least_squares() {
    let grid = Arc::new(PhaseGrid::new(5, 8).unwrap());
    let truth = Medium::from_fn(&grid, MediumKind::Scattering, |x, y| {
        0.2 + 0.08 * x - 0.05 * y
    });
    let mut background = truth.clone();
    background.scale(0.95);
    let opts = SolverOptions::default();
    let counter = SolveCounter::new();
    let dataset: Arc<[ExperimentPair]> =
        generate_dataset(&grid, &truth, 4, 0.0, 21, &opts, &counter)
            .unwrap()
            .into();
    let detectors = Arc::new(
        precompute_detector_adjoints(&grid, &background, None, &opts, &counter).unwrap(),
    );
    let system = assemble_system(
        &grid,
        &dataset,
        &detectors,
        &opts,
        AssemblyMode::Eager,
        &counter,
    )
    .unwrap();
    let alpha = 1.0;
    let star = exact_minimizer(&system, alpha).unwrap();

    // Oracle: stack rows of all experiments scaled by 1/sqrt(N), append
    // sqrt(alpha) I, and solve the least-squares problem by SVD.
    let n = grid.n_nodes();
    let n_det = detectors.len();
    let n_exp = dataset.len();
    let scale = 1.0 / (n_exp as f64).sqrt();
    let mut stacked = DMatrix::zeros(n_exp * n_det + n, n);
    let mut rhs = DVector::zeros(n_exp * n_det + n);
    for (k, pair) in dataset.iter().enumerate() {
        let (a, b) = assemble_experiment(&grid, pair, &detectors, &opts, &counter).unwrap();
        for m in 0..n_det {
            for j in 0..n {
                stacked[(k * n_det + m, j)] = scale * a[(m, j)];
            }
            rhs[k * n_det + m] = scale * b[m];
        }
    }
    for j in 0..n {
        stacked[(n_exp * n_det + j, j)] = alpha.sqrt();
    }
    let oracle = stacked
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .expect("least squares solvable");
    let diff = (&star - &oracle).amax();
    assert!(diff < 1e-8, "minimizer vs stacked oracle: {diff:.3e}");
}
