//! End-to-end solver checks on small instances.

use std::sync::Arc;

use priceform_core::cost::QuadraticCost;
use priceform_core::discretize::{assemble_constraints, assemble_objective, ObjectiveValue};
use priceform_core::grid::Grid;
use priceform_core::setup::{
    cumulative_density, integrate_supply, InitialDensity, ProblemInstance, SupplyModel,
};
use priceform_core::solver::{feasible_start, kkt_residual, solve, MultiplierEstimates, SolverConfig};

fn static_instance(grid: &Grid) -> ProblemInstance {
    let supply = integrate_supply(
        &SupplyModel {
            qbar: Box::new(|_| 0.0),
            alpha: 1.0,
            q0: 0.0,
            horizon: grid.horizon,
        },
        400,
    )
    .unwrap();
    ProblemInstance {
        cost: Arc::new(QuadraticCost::new(1.0)),
        supply,
        v: Box::new(|_| 0.0),
        u_terminal: Box::new(|_| 0.0),
        u_terminal_prime: Box::new(|_| 0.0),
        m0: InitialDensity::bump(grid, 0.5),
        horizon: grid.horizon,
        radius: grid.radius,
        lq_params: None,
    }
}

/// With zero supply, zero running and terminal costs, the minimizer keeps
/// the initial cumulative profile frozen in time and the objective is zero.
#[test]
fn static_instance_is_solved_exactly() {
    let grid = Grid::new(1.0, 1.0, 10, 20);
    let instance = static_instance(&grid);
    let constraints = assemble_constraints(&instance, &grid).unwrap();
    let objective = assemble_objective(&instance, &grid);
    let start = feasible_start(&constraints, &instance.supply, 0.1).unwrap();
    let report = solve(&objective, &constraints, &SolverConfig::default(), Some(&start)).unwrap();

    assert!(report.converged, "kkt = {}", report.kkt_residual);
    assert!(
        report.objective_value.abs() <= 1e-8,
        "objective = {}",
        report.objective_value
    );
    // The density of every level matches the initial one in discrete L1.
    let m0_cdf = cumulative_density(&instance.m0, &grid);
    for i in 0..=grid.n_t {
        let mut l1 = 0.0;
        for j in 0..grid.n_x {
            let want = (m0_cdf[j + 1] - m0_cdf[j]) / grid.h_x();
            let got = report.phi_star.forward_dx(i, j);
            l1 += (got - want).abs() * grid.h_x();
        }
        assert!(l1 <= 1e-8, "level {i}: density L1 error {l1}");
    }
    assert!(report.feasibility_residual <= 1e-9);
}

/// Two different strictly feasible starts must reach the same minimizer.
#[test]
fn minimizer_is_independent_of_the_start() {
    let grid = Grid::new(1.0, 1.0, 6, 12);
    let supply = integrate_supply(
        &SupplyModel {
            qbar: Box::new(|t| 0.8 * (3.0 * t).sin()),
            alpha: 2.0,
            q0: -0.2,
            horizon: 1.0,
        },
        400,
    )
    .unwrap();
    let instance = ProblemInstance {
        cost: Arc::new(QuadraticCost::new(1.5)),
        supply,
        v: Box::new(|x| 0.3 * x),
        u_terminal: Box::new(|x| 0.1 * x * x),
        u_terminal_prime: Box::new(|x| 0.2 * x),
        m0: InitialDensity::bump(&grid, 0.5),
        horizon: 1.0,
        radius: 1.0,
        lq_params: None,
    };
    let constraints = assemble_constraints(&instance, &grid).unwrap();
    let objective = assemble_objective(&instance, &grid);
    let config = SolverConfig::default();

    let s1 = feasible_start(&constraints, &instance.supply, 0.1).unwrap();
    let s2 = feasible_start(&constraints, &instance.supply, 0.85).unwrap();
    let r1 = solve(&objective, &constraints, &config, Some(&s1)).unwrap();
    let r2 = solve(&objective, &constraints, &config, Some(&s2)).unwrap();

    assert!(
        (r1.objective_value - r2.objective_value).abs() < 1e-9,
        "objectives differ: {} vs {}",
        r1.objective_value,
        r2.objective_value
    );
    let dist = r1.phi_star.sup_distance(&r2.phi_star);
    assert!(dist < 1e-5, "minimizers differ by {dist}");

    // The reported duals certify stationarity.
    let kkt = kkt_residual(
        &objective,
        &constraints,
        &r1.phi_star,
        &r1.multiplier_estimates,
    );
    assert!(kkt < 1e-6, "kkt residual {kkt}");

    // And the objective at the minimizer is below both starts.
    for s in [&s1, &s2] {
        if let ObjectiveValue::Finite(v) = objective.value(s) {
            assert!(r1.objective_value <= v + 1e-12);
        }
    }
    let _ = MultiplierEstimates::default();
}
