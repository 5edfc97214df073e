//! Finite-dimensional convex program: discrete objective, constraint rows,
//! and the translate warm start.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::cost::ConvexCost;
use crate::grid::{Grid, PotentialField};
use crate::setup::ProblemInstance;

/// Width of the degenerate band: cells with `0 <= D_x phi < EPS_DEG` and
/// `|D_t phi| < EPS_DEG` count as the `L(0, 0) = 0` branch.
pub const EPS_DEG: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowLabel {
    Initial,
    LeftBoundary,
    RightBoundary,
    Balance,
}

/// One equality row `sum coeffs * phi(i, j) = rhs`.
#[derive(Debug, Clone)]
pub struct Row {
    pub label: RowLabel,
    pub coeffs: Vec<(usize, usize, f64)>,
    pub rhs: f64,
}

/// Equality rows plus the monotonicity masks `D_x phi >= 0` on every cell.
#[derive(Debug, Clone)]
pub struct ConstraintSystem {
    pub grid: Grid,
    pub rows: Vec<Row>,
    /// Cells carrying the inequality `D_x phi >= 0`.
    pub monotone_cells: Vec<(usize, usize)>,
    /// Cumulative initial density at the grid nodes.
    pub m0_cdf: Vec<f64>,
    /// Balance right-hand side `-sum_{k<=i} Q(t_k) h_t` for `i = 1..n_t`.
    pub balance_rhs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AssemblyError {
    /// The cumulative density does not reach one at the right edge, so the
    /// initial and right-boundary rows would contradict each other.
    InconsistentInitialData { m0_at_radius: f64 },
}

impl core::fmt::Display for AssemblyError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            AssemblyError::InconsistentInitialData { m0_at_radius } => write!(
                f,
                "cumulative initial density at +R is {m0_at_radius}, expected 1"
            ),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for AssemblyError {}

impl ConstraintSystem {
    pub fn rows_with_label(&self, label: RowLabel) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(move |r| r.label == label)
    }

    pub fn row_residual(&self, row: &Row, phi: &PotentialField) -> f64 {
        let lhs: f64 = row
            .coeffs
            .iter()
            .map(|&(i, j, c)| c * phi.get(i, j))
            .sum();
        lhs - row.rhs
    }

    /// Largest absolute residual over all equality rows.
    pub fn max_residual(&self, phi: &PotentialField) -> f64 {
        self.rows
            .iter()
            .map(|r| self.row_residual(r, phi).abs())
            .fold(0.0, f64::max)
    }

    /// Smallest forward space difference over all cells.
    pub fn min_dx(&self, phi: &PotentialField) -> f64 {
        self.monotone_cells
            .iter()
            .map(|&(i, j)| phi.forward_dx(i, j))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Assembles the equality rows and monotone masks of the admissible set:
/// initial data at `t = 0`, boundary values `0` and `1`, and one balance row
/// per time level with trapezoidal space weights and left-endpoint time
/// quadrature of the supply.
pub fn assemble_constraints(
    instance: &ProblemInstance,
    grid: &Grid,
) -> Result<ConstraintSystem, AssemblyError> {
    let m0_cdf = crate::setup::cumulative_density(&instance.m0, grid);
    let top = m0_cdf[grid.n_x];
    if (top - 1.0).abs() > 1e-9 {
        return Err(AssemblyError::InconsistentInitialData { m0_at_radius: top });
    }

    let h_t = grid.h_t();
    let h_x = grid.h_x();
    let mut rows = Vec::new();

    for j in 0..grid.nodes_x() {
        rows.push(Row {
            label: RowLabel::Initial,
            coeffs: alloc::vec![(0, j, 1.0)],
            rhs: m0_cdf[j],
        });
    }
    for i in 1..grid.nodes_t() {
        rows.push(Row {
            label: RowLabel::LeftBoundary,
            coeffs: alloc::vec![(i, 0, 1.0)],
            rhs: 0.0,
        });
        rows.push(Row {
            label: RowLabel::RightBoundary,
            coeffs: alloc::vec![(i, grid.n_x, 1.0)],
            rhs: 1.0,
        });
    }

    // Balance: sum_j w_j (phi(i,j) - M0(x_j)) h_x = -sum_{k=0..i} Q(t_k) h_t.
    let mut balance_rhs = Vec::with_capacity(grid.n_t);
    let mut q_sum = instance.supply.value(0.0) * h_t;
    for i in 1..grid.nodes_t() {
        q_sum += instance.supply.value(grid.t(i)) * h_t;
        let rhs_i = -q_sum;
        balance_rhs.push(rhs_i);
        let mut coeffs = Vec::with_capacity(grid.nodes_x());
        let mut m0_weighted = 0.0;
        for j in 0..grid.nodes_x() {
            let w = if j == 0 || j == grid.n_x { 0.5 } else { 1.0 };
            coeffs.push((i, j, w * h_x));
            m0_weighted += w * h_x * m0_cdf[j];
        }
        rows.push(Row {
            label: RowLabel::Balance,
            coeffs,
            rhs: m0_weighted + rhs_i,
        });
    }

    let mut monotone_cells = Vec::with_capacity(grid.nodes_t() * grid.n_x);
    for i in 0..grid.nodes_t() {
        for j in 0..grid.n_x {
            monotone_cells.push((i, j));
        }
    }

    Ok(ConstraintSystem {
        grid: grid.clone(),
        rows,
        monotone_cells,
        m0_cdf,
        balance_rhs,
    })
}

/// Objective evaluation outcome: the perspective integrand is `+inf` on any
/// cell with negative width, or with (numerically) zero width and nonzero
/// flux.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectiveValue {
    Finite(f64),
    Infeasible { cell: (usize, usize) },
}

impl ObjectiveValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            ObjectiveValue::Finite(v) => Some(v),
            ObjectiveValue::Infeasible { .. } => None,
        }
    }
}

/// Discrete objective
/// `sum_cells [L(D_t phi, D_x phi) - V(x_j) D_x phi - u_T'(x_j) D_t phi] h_x h_t`
/// with cell-wise lower-left quadrature matching the forward-difference
/// stencil.
pub struct DiscreteObjective {
    pub grid: Grid,
    pub cost: Arc<dyn ConvexCost + Send + Sync>,
    /// `V(x_j)` at cell anchors `j = 0..n_x-1`.
    pub v_at_cells: Vec<f64>,
    /// `u_T'(x_j)` at cell anchors.
    pub ut_prime_at_cells: Vec<f64>,
}

/// Builds the objective for an instance; samples `V` and `u_T'` at the cell
/// anchor nodes.
pub fn assemble_objective(instance: &ProblemInstance, grid: &Grid) -> DiscreteObjective {
    assert!(
        (instance.radius - grid.radius).abs() < 1e-12,
        "grid radius inconsistent with instance"
    );
    let v_at_cells = (0..grid.n_x).map(|j| (instance.v)(grid.x(j))).collect();
    let ut_prime_at_cells = (0..grid.n_x)
        .map(|j| (instance.u_terminal_prime)(grid.x(j)))
        .collect();
    DiscreteObjective {
        grid: grid.clone(),
        cost: instance.cost.clone(),
        v_at_cells,
        ut_prime_at_cells,
    }
}

impl DiscreteObjective {
    /// Exact objective value with the degenerate-band rule: cells with
    /// `D_x phi in [0, EPS_DEG)` and `|D_t phi| < EPS_DEG` contribute zero.
    pub fn value(&self, phi: &PotentialField) -> ObjectiveValue {
        let h_t = self.grid.h_t();
        let h_x = self.grid.h_x();
        let cell = h_t * h_x;
        let mut total = 0.0;
        for i in 0..self.grid.n_t {
            for j in 0..self.grid.n_x {
                let z = phi.forward_dt(i, j);
                let y = phi.forward_dx(i, j);
                if y < EPS_DEG {
                    if y < 0.0 || z.abs() >= EPS_DEG {
                        return ObjectiveValue::Infeasible { cell: (i, j) };
                    }
                    // Degenerate band: L contributes zero, linear terms remain.
                    total += (-self.v_at_cells[j] * y - self.ut_prime_at_cells[j] * z) * cell;
                    continue;
                }
                let l = self.cost.f(z / y) * y;
                total +=
                    (l - self.v_at_cells[j] * y - self.ut_prime_at_cells[j] * z) * cell;
            }
        }
        ObjectiveValue::Finite(total)
    }

    /// Smoothed value: the perspective width is floored at `eps > 0`, so the
    /// value is finite for any monotone field.
    pub fn value_smoothed(&self, phi: &PotentialField, eps: f64) -> f64 {
        assert!(eps > 0.0);
        let h_t = self.grid.h_t();
        let h_x = self.grid.h_x();
        let cell = h_t * h_x;
        let mut total = 0.0;
        for i in 0..self.grid.n_t {
            for j in 0..self.grid.n_x {
                let z = phi.forward_dt(i, j);
                let y = phi.forward_dx(i, j);
                let yk = if y > eps { y } else { eps };
                let l = self.cost.f(z / yk) * yk;
                total +=
                    (l - self.v_at_cells[j] * y - self.ut_prime_at_cells[j] * z) * cell;
            }
        }
        total
    }

    /// Gradient with respect to every node, by exact chain rule through the
    /// masked derivative rules. `eps = 0` uses the degenerate-band masking;
    /// `eps > 0` matches [`Self::value_smoothed`].
    pub fn gradient(&self, phi: &PotentialField, eps: f64) -> Vec<f64> {
        let grid = &self.grid;
        let h_t = grid.h_t();
        let h_x = grid.h_x();
        let cell = h_t * h_x;
        let mut g = alloc::vec![0.0; grid.nodes_t() * grid.nodes_x()];
        let idx = |i: usize, j: usize| i * grid.nodes_x() + j;
        for i in 0..grid.n_t {
            for j in 0..grid.n_x {
                let z = phi.forward_dt(i, j);
                let y = phi.forward_dx(i, j);
                let (dz, dy) = self.cell_partial(z, y, eps);
                let dz = (dz - self.ut_prime_at_cells[j]) * cell;
                let dy = (dy - self.v_at_cells[j]) * cell;
                g[idx(i, j)] += -dz / h_t - dy / h_x;
                g[idx(i + 1, j)] += dz / h_t;
                g[idx(i, j + 1)] += dy / h_x;
            }
        }
        g
    }

    /// Partial derivatives of the (possibly smoothed) integrand at one cell,
    /// excluding the linear terms.
    pub(crate) fn cell_partial(&self, z: f64, y: f64, eps: f64) -> (f64, f64) {
        if eps > 0.0 {
            let saturated = y <= eps;
            let yk = if saturated { eps } else { y };
            let r = z / yk;
            let dz = self.cost.f_prime(r);
            let dy = if saturated {
                0.0
            } else {
                self.cost.f(r) - r * self.cost.f_prime(r)
            };
            (dz, dy)
        } else if y >= EPS_DEG {
            let r = z / y;
            (
                self.cost.f_prime(r),
                self.cost.f(r) - r * self.cost.f_prime(r),
            )
        } else {
            // Degenerate band: masked, zero contribution.
            (0.0, 0.0)
        }
    }
}

/// Translate warm start `phi0(t, x) = M0(x - q(t))`, the admissible candidate
/// built from the supply alone. `M0` is evaluated by linear interpolation
/// with flat extension.
pub fn translate_start(
    constraints: &ConstraintSystem,
    supply: &crate::setup::SupplyPath,
) -> PotentialField {
    let grid = &constraints.grid;
    let m0_at = |x: f64| -> f64 {
        let h = grid.h_x();
        let s = (x + grid.radius) / h;
        if s <= 0.0 {
            return 0.0;
        }
        let k = s as usize;
        if k >= grid.n_x {
            return 1.0;
        }
        let w = s - k as f64;
        (1.0 - w) * constraints.m0_cdf[k] + w * constraints.m0_cdf[k + 1]
    };
    let mut phi = PotentialField::zeros(grid.clone());
    for i in 0..grid.nodes_t() {
        let q = supply.cumulative(grid.t(i));
        for j in 0..grid.nodes_x() {
            phi.set(i, j, m0_at(grid.x(j) - q));
        }
        phi.set(i, 0, 0.0);
        phi.set(i, grid.n_x, 1.0);
    }
    phi
}
