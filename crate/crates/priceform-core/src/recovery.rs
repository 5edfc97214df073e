//! Recovery of the primal unknowns from the optimal potential: density as
//! the space derivative, the price as the multiplier of the balance
//! constraint via an integral representation, and the value function by
//! integrating the Hamiltonian along time.
//!
//! Derivative fields of the integrand are only meaningful where the density
//! is bounded away from zero, so all of them are masked: outside the region
//! `D_x phi > eps_mask` they are set to zero and excluded from quadrature.

use alloc::vec::Vec;

use crate::cost::ConvexCost;
use crate::fx;
use crate::grid::PotentialField;

/// Mask threshold: cells with `D_x phi` at or below this value carry no
/// reliable ratio `D_t phi / D_x phi`.
pub fn mask_threshold(h_x: f64) -> f64 {
    fx::maxf(1e-6, h_x)
}

/// Per-level cell densities `D_x phi`, one row per time level.
pub fn recover_density(phi: &PotentialField) -> Vec<Vec<f64>> {
    (0..phi.grid.nodes_t())
        .map(|i| phi.density_level(i))
        .collect()
}

/// Masked integrand derivatives on the cell grid (`n_t` by `n_x`):
/// `lz = F'(z / y)` and `ly = F(z/y) - (z/y) F'(z/y)`, zero off the mask.
pub struct MaskedDerivatives {
    pub lz: Vec<Vec<f64>>,
    pub ly: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
    /// Levels whose mask has fewer than three consecutive cells; the
    /// integral representation of the price is unreliable there.
    pub thin_levels: Vec<usize>,
}

pub fn masked_derivatives(cost: &dyn ConvexCost, phi: &PotentialField) -> MaskedDerivatives {
    let grid = &phi.grid;
    let eps = mask_threshold(grid.h_x());
    let mut lz = Vec::with_capacity(grid.n_t);
    let mut ly = Vec::with_capacity(grid.n_t);
    let mut mask = Vec::with_capacity(grid.n_t);
    let mut thin_levels = Vec::new();
    for i in 0..grid.n_t {
        let mut lzr = Vec::with_capacity(grid.n_x);
        let mut lyr = Vec::with_capacity(grid.n_x);
        let mut mr = Vec::with_capacity(grid.n_x);
        let mut run = 0usize;
        let mut best_run = 0usize;
        for j in 0..grid.n_x {
            let y = phi.forward_dx(i, j);
            let z = phi.forward_dt(i, j);
            if y > eps {
                let r = z / y;
                let fp = cost.f_prime(r);
                lzr.push(fp);
                lyr.push(cost.f(r) - r * fp);
                mr.push(true);
                run += 1;
                best_run = best_run.max(run);
            } else {
                lzr.push(0.0);
                lyr.push(0.0);
                mr.push(false);
                run = 0;
            }
        }
        if best_run < 3 {
            thin_levels.push(i);
        }
        lz.push(lzr);
        ly.push(lyr);
        mask.push(mr);
    }
    MaskedDerivatives {
        lz,
        ly,
        mask,
        thin_levels,
    }
}

/// Recovered price path.
#[derive(Debug, Clone)]
pub struct PriceSeries {
    /// Report times, starting at `2 h_t` where the time-difference stencils
    /// are fully interior.
    pub t: Vec<f64>,
    pub value: Vec<f64>,
    /// Levels (grid indices) where the density mask was too thin for the
    /// integral representation to be trusted.
    pub unreliable_levels: Vec<usize>,
}

/// Price from the integral representation of the balance multiplier:
/// the terminal weight is `w_T = \int (lz(T) - u_T') D_x phi(T) dx`, the
/// running weight is `w(t) = \int (d_t lz + d_x (ly - V)) D_x phi dx`, and
/// `price(t) = w_T - \int_t^T w`.
pub fn recover_price(
    cost: &dyn ConvexCost,
    phi: &PotentialField,
    v_at_cells: &[f64],
    ut_prime_at_cells: &[f64],
) -> PriceSeries {
    let grid = &phi.grid;
    let (n_t, n_x) = (grid.n_t, grid.n_x);
    let (h_t, h_x) = (grid.h_t(), grid.h_x());
    assert_eq!(v_at_cells.len(), n_x);
    assert_eq!(ut_prime_at_cells.len(), n_x);
    let md = masked_derivatives(cost, phi);

    // Terminal weight from the last cell row (the ratio there uses the final
    // time step, which is the discrete trace at the horizon).
    let last = n_t - 1;
    let mut w_terminal = 0.0;
    for j in 0..n_x {
        if md.mask[last][j] {
            let y = phi.forward_dx(last, j);
            w_terminal += (md.lz[last][j] - ut_prime_at_cells[j]) * y * h_x;
        }
    }

    // Running weight per cell row: masked central differences in time and
    // space, one-sided at the edges of the masked region.
    let diff_t = |f: &Vec<Vec<f64>>, i: usize, j: usize| -> f64 {
        let up = i + 1 < n_t && md.mask[i + 1][j];
        let down = i > 0 && md.mask[i - 1][j];
        match (down, up) {
            (true, true) => (f[i + 1][j] - f[i - 1][j]) / (2.0 * h_t),
            (false, true) => (f[i + 1][j] - f[i][j]) / h_t,
            (true, false) => (f[i][j] - f[i - 1][j]) / h_t,
            (false, false) => 0.0,
        }
    };
    let ly_v = |i: usize, j: usize| md.ly[i][j] - v_at_cells[j];
    let diff_x = |i: usize, j: usize| -> f64 {
        let right = j + 1 < n_x && md.mask[i][j + 1];
        let left = j > 0 && md.mask[i][j - 1];
        match (left, right) {
            (true, true) => (ly_v(i, j + 1) - ly_v(i, j - 1)) / (2.0 * h_x),
            (false, true) => (ly_v(i, j + 1) - ly_v(i, j)) / h_x,
            (true, false) => (ly_v(i, j) - ly_v(i, j - 1)) / h_x,
            (false, false) => 0.0,
        }
    };
    let mut w = Vec::with_capacity(n_t);
    for i in 0..n_t {
        let mut wi = 0.0;
        for j in 0..n_x {
            if md.mask[i][j] {
                let y = phi.forward_dx(i, j);
                wi += (diff_t(&md.lz, i, j) + diff_x(i, j)) * y * h_x;
            }
        }
        w.push(wi);
    }

    // The balance rows accumulate the supply with a left-endpoint sum, which
    // attributes the flux of cell row `i` to the later node t_{i+1}. The
    // terminal weight therefore anchors exactly at the horizon, and the tail
    // sum is a midpoint rule for the integral over [t_i + h_t / 2, T]: the
    // recovered series lives on the staggered grid t_i + h_t / 2.
    let mut tail = vec_zeros(n_t + 1);
    for i in (0..n_t).rev() {
        tail[i] = tail[i + 1] + h_t * w[i];
    }
    let start = 2.min(n_t);
    let horizon = grid.horizon;
    let t = (start..=n_t)
        .map(|i| fx::minf(grid.t(i) + 0.5 * h_t, horizon))
        .collect();
    let value = (start..=n_t).map(|i| w_terminal - tail[i]).collect();
    PriceSeries {
        t,
        value,
        unreliable_levels: md.thin_levels,
    }
}

fn vec_zeros(n: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(n);
    v.resize(n, 0.0);
    v
}

/// Value function on the grid nodes:
/// `u(t, x) = u_T(x) - \int_t^T H(F'(D_t phi / D_x phi)) ds - (T - t) V(x)`,
/// with the Hamiltonian term dropped off the density mask (agents carry no
/// mass there, so the representation only holds on the support).
pub fn recover_value(
    cost: &dyn ConvexCost,
    phi: &PotentialField,
    v_at_nodes: &[f64],
    ut_at_nodes: &[f64],
) -> Vec<f64> {
    let grid = &phi.grid;
    let (n_t, n_x) = (grid.n_t, grid.n_x);
    let h_t = grid.h_t();
    let eps = mask_threshold(grid.h_x());
    assert_eq!(v_at_nodes.len(), n_x + 1);
    assert_eq!(ut_at_nodes.len(), n_x + 1);

    // Hamiltonian along cells adjacent to each node (averaged where both
    // neighbors are on the mask).
    let ham = |i: usize, j: usize| -> f64 {
        let cell = |jj: usize| -> Option<f64> {
            if jj >= n_x {
                return None;
            }
            let y = phi.forward_dx(i, jj);
            if y > eps {
                crate::cost::eval_h_of_fprime(cost, phi.forward_dt(i, jj) / y).ok()
            } else {
                None
            }
        };
        let left = if j > 0 { cell(j - 1) } else { None };
        let right = cell(j.min(n_x.saturating_sub(1)));
        let right = if j < n_x { right } else { None };
        match (left, right) {
            (Some(a), Some(b)) => 0.5 * (a + b),
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => 0.0,
        }
    };

    let mut u = vec_zeros((n_t + 1) * (n_x + 1));
    for j in 0..=n_x {
        u[n_t * (n_x + 1) + j] = ut_at_nodes[j];
        // Backward trapezoid of the Hamiltonian over the cell rows.
        let mut acc = 0.0;
        for i in (0..n_t).rev() {
            let hi = ham(i, j);
            let hip = if i + 1 < n_t { ham(i + 1, j) } else { hi };
            acc += 0.5 * h_t * (hi + hip);
            let remaining = grid.horizon - grid.t(i);
            u[i * (n_x + 1) + j] = ut_at_nodes[j] - acc - remaining * v_at_nodes[j];
        }
    }
    u
}

/// Discrete market-clearing residual per cell row: the net flux of the
/// potential over a level should equal minus the supply, so this reports
/// `sum_j D_t phi(i, j) h_x + Q(t_i)` for each `i`. Differencing adjacent
/// balance rows makes this vanish up to the supply quadrature, so it also
/// checks the assembled rows.
pub fn clearing_residual(phi: &PotentialField, q_at_levels: &[f64]) -> Vec<f64> {
    let grid = &phi.grid;
    assert!(q_at_levels.len() >= grid.n_t);
    let h_x = grid.h_x();
    (0..grid.n_t)
        .map(|i| {
            let flux: f64 = (0..grid.n_x).map(|j| phi.forward_dt(i, j) * h_x).sum();
            flux + q_at_levels[i]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::QuadraticCost;
    use crate::grid::Grid;
    use alloc::vec;

    /// Uniform density translating with constant speed: phi = clamp of a
    /// moving ramp; on the interior the ratio z / y is the (negative) front
    /// speed, so lz is constant and the running weight vanishes.
    #[test]
    fn constant_ratio_field_has_flat_price() {
        let grid = Grid::new(1.0, 2.0, 10, 40);
        let mut phi = PotentialField::zeros(grid.clone());
        for i in 0..grid.nodes_t() {
            for j in 0..grid.nodes_x() {
                // Ramp of slope 1/2 moving right with speed 0.2.
                let v = 0.5 * (grid.x(j) - 0.2 * grid.t(i)) + 0.5;
                phi.set(i, j, v.clamp(0.0, 1.0));
            }
        }
        let cost = QuadraticCost::new(1.0);
        let v = vec![0.0; grid.n_x];
        let utp = vec![0.0; grid.n_x];
        let series = recover_price(&cost, &phi, &v, &utp);
        // On the mask the ratio is z/y = -0.2 everywhere, so lz = -0.2 and
        // w_T = -0.2 * total mass on mask; w(t) = 0 except at mask edges.
        let first = series.value[0];
        for &val in &series.value {
            assert!((val - first).abs() < 0.05, "price drifted: {val} vs {first}");
        }
    }

    #[test]
    fn static_uniform_density_prices_from_terminal_cost() {
        // phi independent of t with uniform slope: z = 0, lz = F'(0) = 0,
        // so the price equals -int u_T' m dx.
        let grid = Grid::new(1.0, 1.0, 8, 16);
        let mut phi = PotentialField::zeros(grid.clone());
        for i in 0..grid.nodes_t() {
            for j in 0..grid.nodes_x() {
                phi.set(i, j, (grid.x(j) + 1.0) / 2.0);
            }
        }
        let cost = QuadraticCost::new(1.0);
        let v = vec![0.0; grid.n_x];
        // u_T' = 1 everywhere: w_T = -int m = -1.
        let utp = vec![1.0; grid.n_x];
        let series = recover_price(&cost, &phi, &v, &utp);
        for &val in &series.value {
            assert!((val + 1.0).abs() < 1e-12, "{val}");
        }
        assert!(series.unreliable_levels.is_empty());
    }

    #[test]
    fn clearing_residual_zero_for_matching_flux() {
        let grid = Grid::new(1.0, 1.0, 4, 8);
        let mut phi = PotentialField::zeros(grid.clone());
        // phi = ramp + s * t with s = 0.05 inside, so D_t phi = 0.05 on all
        // cells: flux per level = 0.05 * 2R = 0.1.
        for i in 0..grid.nodes_t() {
            for j in 0..grid.nodes_x() {
                phi.set(i, j, (grid.x(j) + 1.0) / 2.0 + 0.05 * grid.t(i));
            }
        }
        let q = vec![-0.1; grid.n_t];
        for r in clearing_residual(&phi, &q) {
            assert!(r.abs() < 1e-12);
        }
    }

    #[test]
    fn value_recovery_reduces_to_terminal_data_at_horizon() {
        let grid = Grid::new(1.0, 1.0, 5, 10);
        let mut phi = PotentialField::zeros(grid.clone());
        for i in 0..grid.nodes_t() {
            for j in 0..grid.nodes_x() {
                phi.set(i, j, (grid.x(j) + 1.0) / 2.0);
            }
        }
        let cost = QuadraticCost::new(1.0);
        let v = vec![0.0; grid.nodes_x()];
        let ut: Vec<f64> = (0..grid.nodes_x()).map(|j| grid.x(j) * 0.3).collect();
        let u = recover_value(&cost, &phi, &v, &ut);
        for j in 0..grid.nodes_x() {
            assert_eq!(u[grid.n_t * grid.nodes_x() + j], ut[j]);
        }
        // Static uniform phi has z = 0, H(F'(0)) = 0, V = 0: u is constant
        // in time.
        for i in 0..grid.nodes_t() {
            for j in 0..grid.nodes_x() {
                assert!((u[i * grid.nodes_x() + j] - ut[j]).abs() < 1e-12);
            }
        }
    }
}
