//! Transport solver versus an independently assembled dense system, plus the
//! structural properties the rest of the crate leans on: duality, linearity,
//! positivity and the residual contract.

mod common;

use common::*;
use rand::Rng;
use rte_tomo::{
    measure_outflow, solve_adjoint, solve_forward, transport, BoundaryFlux, BoundarySide, Medium,
    MediumKind, PhaseField, PhaseGrid, SolveCounter, SolverOptions,
};

fn opts() -> SolverOptions {
    SolverOptions::default()
}

#[test]
fn forward_matches_dense_oracle_scattering() {
    let grid = PhaseGrid::new(5, 8).unwrap();
    let mut rng = test_rng(17);
    let sigma = random_medium(&grid, MediumKind::Scattering, 0.05, 0.45, &mut rng);
    let phi = random_flux(&grid, BoundarySide::Inflow, 0.0, 1.0, &mut rng);

    let counter = SolveCounter::new();
    let out = solve_forward(&grid, &sigma, &phi, None, &opts(), &counter).unwrap();

    let sv = sigma.values().to_vec();
    let dense = assemble_dense(
        5,
        8,
        MediumKind::Scattering,
        &|node| sv[node],
        &|node, k| {
            grid.side_index(BoundarySide::Inflow, node, k)
                .map(|i| phi.values()[i])
                .unwrap_or(0.0)
        },
        &|_, _| 0.0,
    );
    let reference = dense.solve();
    let err = max_diff(&out.field, &reference);
    assert!(err < 1e-8, "solver vs dense oracle: {err:.3e}");
}

#[test]
fn forward_matches_dense_oracle_absorption_with_source() {
    let grid = PhaseGrid::new(4, 8).unwrap();
    let mut rng = test_rng(99);
    let sigma = random_medium(&grid, MediumKind::Absorption, 0.05, 0.45, &mut rng);
    let phi = random_flux(&grid, BoundarySide::Inflow, 0.0, 1.0, &mut rng);
    let mut source = PhaseField::zeros(&grid);
    for v in source.values_mut() {
        *v = rng.random_range(-0.5..0.5);
    }

    let counter = SolveCounter::new();
    let out = solve_forward(&grid, &sigma, &phi, Some(&source), &opts(), &counter).unwrap();

    let sv = sigma.values().to_vec();
    let src = source.clone();
    let n_nodes = grid.n_nodes();
    let dense = assemble_dense(
        4,
        8,
        MediumKind::Absorption,
        &|node| sv[node],
        &|node, k| {
            grid.side_index(BoundarySide::Inflow, node, k)
                .map(|i| phi.values()[i])
                .unwrap_or(0.0)
        },
        &|node, k| src.values()[k * n_nodes + node],
    );
    let reference = dense.solve();
    let err = max_diff(&out.field, &reference);
    assert!(err < 1e-8, "solver vs dense oracle: {err:.3e}");
}

#[test]
fn outflow_extraction_matches_oracle_field() {
    let grid = PhaseGrid::new(4, 8).unwrap();
    let mut rng = test_rng(5);
    let sigma = random_medium(&grid, MediumKind::Scattering, 0.05, 0.45, &mut rng);
    let phi = random_flux(&grid, BoundarySide::Inflow, 0.0, 1.0, &mut rng);
    let counter = SolveCounter::new();
    let out = solve_forward(&grid, &sigma, &phi, None, &opts(), &counter).unwrap();
    let psi = measure_outflow(&grid, &out.field);
    let factors = grid.normal_factors(BoundarySide::Outflow);
    for ((pair, psi_v), w) in grid
        .side_pairs(BoundarySide::Outflow)
        .iter()
        .zip(psi.values())
        .zip(factors)
    {
        let expect = w * out.field.get(pair.node, pair.angle);
        assert!((psi_v - expect).abs() < 1e-14);
    }
}

/// Green's identity: the outflow pairing of a forward solve against the
/// adjoint boundary values equals the inflow pairing of the forward data
/// against the adjoint trace, to solver tolerance. On the outflow set the
/// dual problem prescribes g = h, so the identity pairs the measurement
/// against that data.
#[test]
fn adjoint_duality_holds_to_solver_tolerance() {
    let grid = PhaseGrid::new(10, 8).unwrap();
    let mut rng = test_rng(2024);
    for trial in 0..20 {
        let kind = if trial % 2 == 0 {
            MediumKind::Scattering
        } else {
            MediumKind::Absorption
        };
        let sigma = random_medium(&grid, kind, 0.05, 0.45, &mut rng);
        let phi = random_flux(&grid, BoundarySide::Inflow, 0.0, 1.0, &mut rng);
        let h = random_flux(&grid, BoundarySide::Outflow, 0.0, 1.0, &mut rng);

        let counter = SolveCounter::new();
        let f = solve_forward(&grid, &sigma, &phi, None, &opts(), &counter)
            .unwrap()
            .field;
        let g = solve_adjoint(&grid, &sigma, &h, &opts(), &counter)
            .unwrap()
            .field;

        // lhs = sum over outflow set of (n.v) f g ds w_theta, g = h there.
        let lhs = grid
            .boundary_inner_product(BoundarySide::Outflow, &measure_outflow(&grid, &f), &h)
            .unwrap();
        // rhs = sum over inflow set of |n.v| phi g ds w_theta
        let weighted_phi = {
            let mut w = phi.clone();
            for (v, factor) in w
                .values_mut()
                .iter_mut()
                .zip(grid.normal_factors(BoundarySide::Inflow))
            {
                *v *= factor;
            }
            w
        };
        let rhs = grid
            .boundary_inner_product(
                BoundarySide::Inflow,
                &weighted_phi,
                &g.restrict(&grid, BoundarySide::Inflow),
            )
            .unwrap();
        assert!(
            (lhs - rhs).abs() < 1e-8,
            "duality defect {:.3e} on trial {trial} ({kind:?})",
            lhs - rhs
        );
    }
}

#[test]
fn forward_solve_is_linear_in_inflow() {
    let grid = PhaseGrid::new(6, 8).unwrap();
    let mut rng = test_rng(7);
    let sigma = random_medium(&grid, MediumKind::Scattering, 0.05, 0.45, &mut rng);
    let phi1 = random_flux(&grid, BoundarySide::Inflow, 0.0, 1.0, &mut rng);
    let phi2 = random_flux(&grid, BoundarySide::Inflow, 0.0, 1.0, &mut rng);
    let (a, b) = (1.7, -0.6);
    let mut combo = BoundaryFlux::zeros(&grid, BoundarySide::Inflow);
    for ((c, x), y) in combo
        .values_mut()
        .iter_mut()
        .zip(phi1.values())
        .zip(phi2.values())
    {
        *c = a * x + b * y;
    }
    let counter = SolveCounter::new();
    let f1 = solve_forward(&grid, &sigma, &phi1, None, &opts(), &counter)
        .unwrap()
        .field;
    let f2 = solve_forward(&grid, &sigma, &phi2, None, &opts(), &counter)
        .unwrap()
        .field;
    let fc = solve_forward(&grid, &sigma, &combo, None, &opts(), &counter)
        .unwrap()
        .field;
    let mut err = 0.0_f64;
    for ((fcv, x), y) in fc.values().iter().zip(f1.values()).zip(f2.values()) {
        err = err.max((fcv - (a * x + b * y)).abs());
    }
    assert!(err < 1e-9, "linearity defect {err:.3e}");
}

#[test]
fn nonnegative_data_gives_nonnegative_field() {
    let grid = PhaseGrid::new(8, 12).unwrap();
    let mut rng = test_rng(31);
    for _ in 0..5 {
        let sigma = random_medium(&grid, MediumKind::Scattering, 0.0, 0.5, &mut rng);
        let phi = random_flux(&grid, BoundarySide::Inflow, 0.0, 2.0, &mut rng);
        let counter = SolveCounter::new();
        let out = solve_forward(&grid, &sigma, &phi, None, &opts(), &counter).unwrap();
        let floor = out.field.values().iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(floor >= -1e-11, "negative value {floor:.3e}");
    }
}

#[test]
fn residual_contract_on_returned_field() {
    let grid = PhaseGrid::new(8, 8).unwrap();
    let mut rng = test_rng(13);
    let sigma = random_medium(&grid, MediumKind::Scattering, 0.05, 0.45, &mut rng);
    let phi = random_flux(&grid, BoundarySide::Inflow, 0.0, 1.0, &mut rng);
    let o = opts();
    let counter = SolveCounter::new();
    let out = solve_forward(&grid, &sigma, &phi, None, &o, &counter).unwrap();
    let res = transport::transport_residual(&grid, &sigma, &phi, None, &out.field)
        .unwrap()
        .max_abs();
    assert!(res <= 10.0 * o.tolerance, "residual {res:.3e}");
    assert!((res - out.residual).abs() < 1e-13);
}

#[test]
fn negative_scattering_accepted_and_flagged() {
    let grid = PhaseGrid::new(4, 8).unwrap();
    let mut sigma = Medium::constant(&grid, MediumKind::Scattering, 0.1);
    sigma.values_mut()[7] = -0.05;
    let phi = BoundaryFlux::constant(&grid, BoundarySide::Inflow, 1.0);
    let counter = SolveCounter::new();
    let out = solve_forward(&grid, &sigma, &phi, None, &opts(), &counter).unwrap();
    assert!(out.negative_medium);
    assert!(out.residual <= 1e-10);
}

#[test]
fn grid_classification_matches_brute_force_and_sets_balance() {
    for (n, m) in [(5usize, 8usize), (6, 12), (20, 40)] {
        let grid = PhaseGrid::new(n, m).unwrap();
        let vels = oracle_velocities(m);
        let mut n_in = 0usize;
        let mut n_out = 0usize;
        for i1 in 0..=n {
            for i2 in 0..=n {
                for (k, &v) in vels.iter().enumerate() {
                    let expect = oracle_classify(n, i1, i2, v);
                    let got = grid.classification(grid.node_index(i1, i2), k);
                    let ok = matches!(
                        (expect, got),
                        (OracleClass::Interior, rte_tomo::BoundaryClass::Interior)
                            | (OracleClass::Inflow, rte_tomo::BoundaryClass::Inflow)
                            | (OracleClass::Outflow, rte_tomo::BoundaryClass::Outflow)
                            | (OracleClass::Grazing, rte_tomo::BoundaryClass::Tangential)
                    );
                    assert!(ok, "class mismatch at ({i1},{i2},{k}): {expect:?} vs {got:?}");
                    match expect {
                        OracleClass::Inflow => n_in += 1,
                        OracleClass::Outflow => n_out += 1,
                        _ => {}
                    }
                }
            }
        }
        assert_eq!(n_in, n_out, "inflow/outflow sets must balance");
        assert_eq!(grid.side_len(BoundarySide::Inflow), n_in);
        assert_eq!(grid.side_len(BoundarySide::Outflow), n_out);
    }
}
