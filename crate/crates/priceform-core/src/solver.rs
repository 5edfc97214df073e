//! Minimization of the discrete objective over the admissible polytope.
//!
//! Equality rows (initial data, boundary values, one balance row per time
//! level) are handled by fixing nodes and by restricting Newton steps to the
//! balance null space. The monotonicity inequalities are handled by a
//! logarithmic barrier with continuation in the barrier weight, paired with a
//! continuation in the perspective smoothing floor. Inner iterations are
//! damped Newton steps: the Hessian is banded (each cell couples a node with
//! its time and space neighbors), so a banded Cholesky factorization plus a
//! small dense Schur complement over the balance rows gives the exact step.
//!
//! Structurally degenerate nodes are eliminated up front: wherever two
//! neighboring nodes of a level are fixed at equal values the cell width is
//! zero, so the perspective integrand forces zero flux and the node above is
//! fixed too. This propagates the discrete domain of dependence of the
//! initial support and is how the `+inf` branch of the integrand is honored
//! without smoothing.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::discretize::{
    AssemblyError, ConstraintSystem, DiscreteObjective, ObjectiveValue, RowLabel, EPS_DEG,
};
use crate::fx;
use crate::grid::PotentialField;
use crate::setup::SupplyPath;

/// Width below which a monotonicity constraint is treated as active: such
/// cells are clamped to exactly zero width in the final active-set rounds,
/// and their neighborhoods are excluded from gradient-based optimality
/// measures (their optimality is certified by inequality duals instead).
pub const ACTIVE_TOL: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Cap on barrier/smoothing stages.
    pub max_outer: usize,
    /// Cap on Newton iterations per stage.
    pub max_inner: usize,
    /// Target sup-norm of the projected Lagrangian gradient.
    pub tol_kkt: f64,
    /// Tolerance on equality-row residuals.
    pub tol_feas: f64,
    pub barrier_mu0: f64,
    /// Multiplicative barrier decrease per stage, in (0, 1).
    pub barrier_shrink: f64,
    /// Smallest barrier weight.
    pub barrier_mu_final: f64,
    /// Perspective smoothing floors for the early stages; later stages run
    /// unsmoothed.
    pub smoothing_eps_schedule: Vec<f64>,
    /// Barrier-free Newton polish after the continuation.
    pub polish: bool,
    /// Blend weight of the uniform ramp in the default feasible start.
    pub start_blend: f64,
    /// Per-stage progress on standard error (std builds only).
    pub verbose: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer: 40,
            max_inner: 80,
            tol_kkt: 1e-7,
            tol_feas: 1e-9,
            barrier_mu0: 1e-2,
            barrier_shrink: 0.2,
            barrier_mu_final: 1e-12,
            smoothing_eps_schedule: vec![1e-4, 1e-6, 1e-9],
            polish: true,
            start_blend: 0.1,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MultiplierEstimates {
    /// Balance-row duals, one per time level `i = 1..n_t`.
    pub balance: Vec<f64>,
    /// Barrier weight backing the inequality dual estimates `mu / D_x phi`.
    pub monotone_mu: f64,
}

#[derive(Debug)]
pub struct SolveReport {
    pub phi_star: PotentialField,
    /// Unsmoothed, barrier-free objective at the final iterate.
    pub objective_value: f64,
    pub kkt_residual: f64,
    pub feasibility_residual: f64,
    /// Total Newton iterations over all stages.
    pub iterations: usize,
    pub converged: bool,
    pub multiplier_estimates: MultiplierEstimates,
    /// Objective after each stage, for descent diagnostics.
    pub stage_objectives: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum SolveError {
    /// The equality structure admits no interior point.
    Infeasible(String),
    Assembly(AssemblyError),
    /// The Hessian factorization failed even with diagonal shifts.
    Numerical(&'static str),
}

impl core::fmt::Display for SolveError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SolveError::Infeasible(m) => write!(f, "infeasible constraint system: {m}"),
            SolveError::Assembly(e) => write!(f, "assembly error: {e}"),
            SolveError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SolveError {}

/// Node elimination structure shared by the solve and the KKT diagnostics.
pub(crate) struct Workspace {
    n_t: usize,
    n_x: usize,
    h_t: f64,
    h_x: f64,
    /// Fixed value per node, `None` for optimization variables.
    pins: Vec<Option<f64>>,
    /// Variable index per node (interior, unpinned), dense over levels.
    var_of_node: Vec<Option<usize>>,
    /// Node (i, j) per variable index.
    node_of_var: Vec<(usize, usize)>,
    n_vars: usize,
    /// Active variable indices per balance level `i = 1..n_t`.
    level_vars: Vec<Vec<usize>>,
    /// Balance right-hand side restricted to the variables of each level.
    level_rhs: Vec<f64>,
    bandwidth: usize,
}

impl Workspace {
    fn node(&self, i: usize, j: usize) -> usize {
        i * (self.n_x + 1) + j
    }

    pub(crate) fn build(constraints: &ConstraintSystem) -> Result<Self, SolveError> {
        Self::build_with_pins(constraints, &[])
    }

    /// Like `build`, with additional node pins from active-set clamping.
    pub(crate) fn build_with_pins(
        constraints: &ConstraintSystem,
        extra_pins: &[(usize, usize, f64)],
    ) -> Result<Self, SolveError> {
        let grid = &constraints.grid;
        let (n_t, n_x) = (grid.n_t, grid.n_x);
        let (h_t, h_x) = (grid.h_t(), grid.h_x());
        let nodes = (n_t + 1) * (n_x + 1);
        let mut pins: Vec<Option<f64>> = vec![None; nodes];
        let node = |i: usize, j: usize| i * (n_x + 1) + j;

        for j in 0..=n_x {
            pins[node(0, j)] = Some(constraints.m0_cdf[j]);
        }
        for i in 1..=n_t {
            pins[node(i, 0)] = Some(0.0);
            pins[node(i, n_x)] = Some(1.0);
        }
        for &(i, j, v) in extra_pins {
            if pins[node(i, j)].is_none() {
                pins[node(i, j)] = Some(v);
            }
        }
        // Propagate structural zeros: a cell whose two level nodes are fixed
        // at (numerically) equal values admits no flux, so the node above is
        // fixed at the same value.
        for i in 0..n_t {
            for j in 0..n_x {
                if let (Some(a), Some(c)) = (pins[node(i, j)], pins[node(i, j + 1)]) {
                    if fx::abs(c - a) < EPS_DEG * h_x {
                        match pins[node(i + 1, j)] {
                            None => pins[node(i + 1, j)] = Some(a),
                            Some(existing) => {
                                if fx::abs(existing - a) > 1e-12 {
                                    return Err(SolveError::Infeasible(String::from(
                                        "conflicting structural pins",
                                    )));
                                }
                            }
                        }
                    }
                }
            }
        }

        let mut var_of_node = vec![None; nodes];
        let mut node_of_var = Vec::new();
        for i in 1..=n_t {
            for j in 1..n_x {
                if pins[node(i, j)].is_none() {
                    var_of_node[node(i, j)] = Some(node_of_var.len());
                    node_of_var.push((i, j));
                }
            }
        }
        let n_vars = node_of_var.len();

        let mut level_vars = vec![Vec::new(); n_t];
        for (v, &(i, _)) in node_of_var.iter().enumerate() {
            level_vars[i - 1].push(v);
        }
        let mut level_rhs = vec![0.0; n_t];
        for row in constraints.rows_with_label(RowLabel::Balance) {
            let i = row.coeffs[0].0;
            let mut rhs = row.rhs;
            for &(ri, rj, c) in &row.coeffs {
                if let Some(p) = pins[node(ri, rj)] {
                    rhs -= c * p;
                }
            }
            level_rhs[i - 1] = rhs;
            if level_vars[i - 1].is_empty() && fx::abs(rhs) > 1e-9 {
                return Err(SolveError::Infeasible(String::from(
                    "balance row with no free nodes and nonzero right-hand side",
                )));
            }
        }

        Ok(Self {
            n_t,
            n_x,
            h_t,
            h_x,
            pins,
            var_of_node,
            node_of_var,
            n_vars,
            level_vars,
            level_rhs,
            bandwidth: n_x.saturating_sub(1).max(1),
        })
    }

    fn apply_pins(&self, phi: &mut PotentialField) {
        for i in 0..=self.n_t {
            for j in 0..=self.n_x {
                if let Some(p) = self.pins[self.node(i, j)] {
                    phi.set(i, j, p);
                }
            }
        }
    }

    fn var_at(&self, i: usize, j: usize) -> Option<usize> {
        self.var_of_node[self.node(i, j)]
    }

    /// Whether the cell (i, j) is eliminated: zero fixed width and zero
    /// fixed flux.
    fn cell_eliminated(&self, i: usize, j: usize) -> bool {
        let a = self.pins[self.node(i, j)];
        let c = self.pins[self.node(i, j + 1)];
        match (a, c) {
            (Some(a), Some(c)) => fx::abs(c - a) < EPS_DEG * self.h_x,
            _ => false,
        }
    }

    /// Whether the cell's width depends on at least one variable.
    fn cell_width_variable(&self, i: usize, j: usize) -> bool {
        self.var_at(i, j).is_some() || self.var_at(i, j + 1).is_some()
    }

    fn balance_residuals(&self, phi: &PotentialField) -> Vec<f64> {
        (0..self.n_t)
            .map(|k| {
                let lhs: f64 = self.level_vars[k]
                    .iter()
                    .map(|&v| {
                        let (i, j) = self.node_of_var[v];
                        self.h_x * phi.get(i, j)
                    })
                    .sum();
                lhs - self.level_rhs[k]
            })
            .collect()
    }

    /// Least-squares balance duals for a free-space gradient, and the
    /// projected gradient sup-norm.
    fn project_gradient(&self, g: &[f64]) -> (Vec<f64>, f64) {
        let mut lambda = vec![0.0; self.n_t];
        for k in 0..self.n_t {
            if self.level_vars[k].is_empty() {
                continue;
            }
            let s: f64 = self.level_vars[k].iter().map(|&v| g[v]).sum();
            lambda[k] = s / (self.level_vars[k].len() as f64 * self.h_x);
        }
        let mut sup = 0.0;
        for k in 0..self.n_t {
            for &v in &self.level_vars[k] {
                sup = fx::maxf(sup, fx::abs(g[v] - lambda[k] * self.h_x));
            }
        }
        (lambda, sup)
    }
}

/// Banded lower-triangular Cholesky factorization, in place.
/// `band[v * (bw + 1) + d]` holds entry `(v, v - d)`.
fn band_cholesky(band: &mut [f64], n: usize, bw: usize) -> Result<(), ()> {
    let w = bw + 1;
    for j in 0..n {
        let start = j.saturating_sub(bw);
        let mut diag = band[j * w];
        for k in start..j {
            let l = band[j * w + (j - k)];
            diag -= l * l;
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(());
        }
        let dj = fx::sqrt(diag);
        band[j * w] = dj;
        let last = (j + bw).min(n - 1);
        for i in (j + 1)..=last {
            let mut s = band[i * w + (i - j)];
            let kstart = start.max(i.saturating_sub(bw));
            for k in kstart..j {
                s -= band[i * w + (i - k)] * band[j * w + (j - k)];
            }
            band[i * w + (i - j)] = s / dj;
        }
    }
    Ok(())
}

/// Solves `L L^T x = rhs` for a banded Cholesky factor, in place.
fn band_solve(chol: &[f64], n: usize, bw: usize, rhs: &mut [f64]) {
    let w = bw + 1;
    for i in 0..n {
        let start = i.saturating_sub(bw);
        let mut s = rhs[i];
        for k in start..i {
            s -= chol[i * w + (i - k)] * rhs[k];
        }
        rhs[i] = s / chol[i * w];
    }
    for i in (0..n).rev() {
        let mut s = rhs[i];
        let last = (i + bw).min(n - 1);
        for k in (i + 1)..=last {
            s -= chol[k * w + (k - i)] * rhs[k];
        }
        rhs[i] = s / chol[i * w];
    }
}

/// Dense Cholesky solve for the small Schur system over balance rows.
fn dense_cholesky_solve(a: &mut [f64], n: usize, rhs: &mut [f64]) -> Result<(), ()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(());
        }
        let dj = fx::sqrt(d);
        a[j * n + j] = dj;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / dj;
        }
    }
    for i in 0..n {
        let mut s = rhs[i];
        for k in 0..i {
            s -= a[i * n + k] * rhs[k];
        }
        rhs[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for k in (i + 1)..n {
            s -= a[k * n + i] * rhs[k];
        }
        rhs[i] = s / a[i * n + i];
    }
    Ok(())
}

struct StageEval {
    value: f64,
    grad: Vec<f64>,
    band: Vec<f64>,
}

fn assemble_stage(
    ws: &Workspace,
    obj: &DiscreteObjective,
    phi: &PotentialField,
    mu: f64,
    eps: f64,
) -> Option<StageEval> {
    let (h_t, h_x) = (ws.h_t, ws.h_x);
    let cell_area = h_t * h_x;
    let w = ws.bandwidth + 1;
    let mut value = 0.0;
    let mut grad = vec![0.0; ws.n_vars];
    let mut band = vec![0.0; ws.n_vars * w];

    let add = |band: &mut [f64], r: usize, c: usize, v: f64| {
        let (hi, lo) = if r >= c { (r, c) } else { (c, r) };
        band[hi * w + (hi - lo)] += v;
    };

    for i in 0..ws.n_t {
        for j in 0..ws.n_x {
            if ws.cell_eliminated(i, j) {
                continue;
            }
            let z = phi.forward_dt(i, j);
            let y = phi.forward_dx(i, j);
            let yk = if eps > 0.0 && y < eps { eps } else { y };
            if yk <= 0.0 {
                return None;
            }
            let r = z / yk;
            let f = obj.cost.f(r);
            let fp = obj.cost.f_prime(r);
            let fpp = obj.cost.f_second(r);
            let saturated = eps > 0.0 && y < eps;

            value += (f * yk - obj.v_at_cells[j] * y - obj.ut_prime_at_cells[j] * z) * cell_area;

            let dz = (fp - obj.ut_prime_at_cells[j]) * cell_area;
            let dy_pers = if saturated { 0.0 } else { f - r * fp };
            let dy = (dy_pers - obj.v_at_cells[j]) * cell_area;

            let va = ws.var_at(i, j);
            let vb = ws.var_at(i + 1, j);
            let vc = ws.var_at(i, j + 1);
            if let Some(v) = va {
                grad[v] += -dz / h_t - dy / h_x;
            }
            if let Some(v) = vb {
                grad[v] += dz / h_t;
            }
            if let Some(v) = vc {
                grad[v] += dy / h_x;
            }

            // Rank-one curvature F''(r)/yk (s_z - r s_y)(s_z - r s_y)^T,
            // with s_y dropped where the smoothing floor saturates.
            let k2 = fpp / yk * cell_area;
            let ry = if saturated { 0.0 } else { r };
            let coeffs = [
                (va, -1.0 / h_t + ry / h_x),
                (vb, 1.0 / h_t),
                (vc, -ry / h_x),
            ];
            for (ia, &(na, ca)) in coeffs.iter().enumerate() {
                let Some(na) = na else { continue };
                for &(nb, cb) in coeffs.iter().take(ia + 1) {
                    let Some(nb) = nb else { continue };
                    add(&mut band, na, nb, k2 * ca * cb);
                }
            }
        }
    }

    // Log barrier on every cell whose width is variable, including the final
    // time level (the objective has no cell there but the monotonicity
    // constraint still applies).
    if mu > 0.0 {
        for i in 0..=ws.n_t {
            for j in 0..ws.n_x {
                if !ws.cell_width_variable(i, j) {
                    continue;
                }
                let y = phi.forward_dx(i, j);
                if y <= 0.0 {
                    return None;
                }
                value -= mu * fx::ln(y);
                let va = ws.var_at(i, j);
                let vc = ws.var_at(i, j + 1);
                let gy = -mu / y;
                let hy = mu / (y * y);
                if let Some(v) = va {
                    grad[v] += gy * (-1.0 / h_x);
                }
                if let Some(v) = vc {
                    grad[v] += gy * (1.0 / h_x);
                }
                let coeffs = [(va, -1.0 / h_x), (vc, 1.0 / h_x)];
                for (ia, &(na, ca)) in coeffs.iter().enumerate() {
                    let Some(na) = na else { continue };
                    for &(nb, cb) in coeffs.iter().take(ia + 1) {
                        let Some(nb) = nb else { continue };
                        add(&mut band, na, nb, hy * ca * cb);
                    }
                }
            }
        }
    }

    Some(StageEval { value, grad, band })
}

/// Merit value only (line search): barrier objective at the trial point.
fn stage_value(
    ws: &Workspace,
    obj: &DiscreteObjective,
    phi: &PotentialField,
    mu: f64,
    eps: f64,
) -> Option<f64> {
    let cell_area = ws.h_t * ws.h_x;
    let mut value = 0.0;
    for i in 0..ws.n_t {
        for j in 0..ws.n_x {
            if ws.cell_eliminated(i, j) {
                continue;
            }
            let z = phi.forward_dt(i, j);
            let y = phi.forward_dx(i, j);
            let yk = if eps > 0.0 && y < eps { eps } else { y };
            if yk <= 0.0 {
                return None;
            }
            value += (obj.cost.f(z / yk) * yk
                - obj.v_at_cells[j] * y
                - obj.ut_prime_at_cells[j] * z)
                * cell_area;
        }
    }
    if mu > 0.0 {
        for i in 0..=ws.n_t {
            for j in 0..ws.n_x {
                if !ws.cell_width_variable(i, j) {
                    continue;
                }
                let y = phi.forward_dx(i, j);
                if y <= 0.0 {
                    return None;
                }
                value -= mu * fx::ln(y);
            }
        }
    }
    Some(value)
}

struct StageOutcome {
    iterations: usize,
    lambda: Vec<f64>,
    converged: bool,
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    ws: &Workspace,
    obj: &DiscreteObjective,
    phi: &mut PotentialField,
    mu: f64,
    eps: f64,
    tol: f64,
    tol_feas: f64,
    max_inner: usize,
) -> Result<StageOutcome, SolveError> {
    let w = ws.bandwidth + 1;
    let mut iterations = 0;
    let mut last_value = f64::INFINITY;
    let mut stall = 0;
    let mut lambda = vec![0.0; ws.n_t];

    for _ in 0..max_inner {
        let Some(eval) = assemble_stage(ws, obj, phi, mu, eps) else {
            return Err(SolveError::Numerical("iterate left the interior"));
        };
        let residuals = ws.balance_residuals(phi);
        let feas = residuals.iter().fold(0.0, |m, r| fx::maxf(m, fx::abs(*r)));
        let (lam, kkt) = ws.project_gradient(&eval.grad);
        lambda = lam;
        if kkt <= tol && feas <= tol_feas {
            return Ok(StageOutcome {
                iterations,
                lambda,
                converged: true,
            });
        }

        // Factor with escalating diagonal shifts on breakdown.
        let mut chol = eval.band.clone();
        let mut shift = 0.0;
        let max_diag = (0..ws.n_vars).fold(1e-30, |m, v| fx::maxf(m, eval.band[v * w]));
        loop {
            // Inactive (pinned) variables are not present; empty rows would
            // only appear if a variable touches no cell, which the pin
            // cascade rules out, but the shift keeps this safe regardless.
            if band_cholesky(&mut chol, ws.n_vars, ws.bandwidth).is_ok() {
                break;
            }
            shift = if shift == 0.0 {
                1e-12 * max_diag
            } else {
                shift * 100.0
            };
            if shift > max_diag {
                return Err(SolveError::Numerical("Hessian factorization failed"));
            }
            chol.copy_from_slice(&eval.band);
            for v in 0..ws.n_vars {
                chol[v * w] += shift;
            }
        }

        // KKT step via Schur complement over the balance rows.
        let mut u0 = eval.grad.clone();
        band_solve(&chol, ws.n_vars, ws.bandwidth, &mut u0);
        let mut wdirs: Vec<Vec<f64>> = Vec::with_capacity(ws.n_t);
        for k in 0..ws.n_t {
            let mut a = vec![0.0; ws.n_vars];
            for &v in &ws.level_vars[k] {
                a[v] = ws.h_x;
            }
            band_solve(&chol, ws.n_vars, ws.bandwidth, &mut a);
            wdirs.push(a);
        }
        let nt = ws.n_t;
        let mut schur = vec![0.0; nt * nt];
        let mut srhs = vec![0.0; nt];
        for k in 0..nt {
            for l in 0..=k {
                let s: f64 = ws.level_vars[k]
                    .iter()
                    .map(|&v| ws.h_x * wdirs[l][v])
                    .sum();
                schur[k * nt + l] = s;
                schur[l * nt + k] = s;
            }
            let su: f64 = ws.level_vars[k].iter().map(|&v| ws.h_x * u0[v]).sum();
            srhs[k] = su - residuals[k];
        }
        // Levels with no variables leave a zero row; give them a unit pivot.
        for k in 0..nt {
            if ws.level_vars[k].is_empty() {
                schur[k * nt + k] = 1.0;
            }
        }
        if dense_cholesky_solve(&mut schur, nt, &mut srhs).is_err() {
            return Err(SolveError::Numerical("Schur factorization failed"));
        }
        let mut dir = vec![0.0; ws.n_vars];
        for v in 0..ws.n_vars {
            let mut d = -u0[v];
            for k in 0..nt {
                d += srhs[k] * wdirs[k][v];
            }
            dir[v] = d;
        }
        let gd: f64 = eval
            .grad
            .iter()
            .zip(dir.iter())
            .map(|(a, b)| a * b)
            .sum();

        // Fraction-to-boundary cap on every variable-width cell.
        let mut alpha = 1.0;
        let tau = 0.995;
        for i in 0..=ws.n_t {
            for j in 0..ws.n_x {
                if !ws.cell_width_variable(i, j) {
                    continue;
                }
                let da = ws.var_at(i, j).map_or(0.0, |v| dir[v]);
                let dc = ws.var_at(i, j + 1).map_or(0.0, |v| dir[v]);
                let dy = (dc - da) / ws.h_x;
                if dy < 0.0 {
                    let y = phi.forward_dx(i, j);
                    alpha = fx::minf(alpha, -tau * y / dy);
                }
            }
        }

        // Backtracking line search on the stage merit.
        let base = eval.value;
        let mut accepted = false;
        let mut trial = phi.clone();
        let mut step = alpha;
        for _ in 0..60 {
            trial.values_mut().copy_from_slice(phi.values());
            for v in 0..ws.n_vars {
                let (i, j) = ws.node_of_var[v];
                let cur = trial.get(i, j);
                trial.set(i, j, cur + step * dir[v]);
            }
            if let Some(val) = stage_value(ws, obj, &trial, mu, eps) {
                if val <= base + 1e-4 * step * gd || val <= base {
                    phi.values_mut().copy_from_slice(trial.values());
                    last_value = val;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
        if fx::abs(base - last_value) < 1e-14 * fx::maxf(1.0, fx::abs(base)) {
            stall += 1;
            if stall >= 5 {
                break;
            }
        } else {
            stall = 0;
        }
    }

    let eval = assemble_stage(ws, obj, phi, mu, eps)
        .ok_or(SolveError::Numerical("iterate left the interior"))?;
    let (lam, kkt) = ws.project_gradient(&eval.grad);
    if !lam.is_empty() {
        lambda = lam;
    }
    Ok(StageOutcome {
        iterations,
        lambda,
        converged: kkt <= tol,
    })
}

/// Strictly interior feasible start: a blend of the supply translate
/// `M0(x - q(t))` with a uniform ramp, calibrated per level by a monotone
/// power transform so every balance row holds exactly.
pub fn feasible_start(
    constraints: &ConstraintSystem,
    supply: &SupplyPath,
    blend: f64,
) -> Result<PotentialField, SolveError> {
    let ws = Workspace::build(constraints)?;
    let base = crate::discretize::translate_start(constraints, supply);
    feasible_start_ws(&ws, constraints, base, blend)
}

fn feasible_start_ws(
    ws: &Workspace,
    constraints: &ConstraintSystem,
    base: PotentialField,
    blend: f64,
) -> Result<PotentialField, SolveError> {
    assert!(blend > 0.0 && blend < 1.0);
    let grid = &constraints.grid;
    let mut phi = base;
    ws.apply_pins(&mut phi);

    for i in 1..=ws.n_t {
        // Blend variables toward the uniform ramp, keep pins.
        for j in 1..ws.n_x {
            if ws.var_at(i, j).is_some() {
                let ramp = (grid.x(j) + grid.radius) / (2.0 * grid.radius);
                let v = (1.0 - blend) * phi.get(i, j) + blend * ramp;
                phi.set(i, j, v.clamp(1e-12, 1.0 - 1e-12));
            }
        }
        // Power-transform calibration of the level sum.
        let vars = &ws.level_vars[i - 1];
        if vars.is_empty() {
            continue;
        }
        let target = ws.level_rhs[i - 1];
        let sum_at = |gamma: f64, phi: &PotentialField| -> f64 {
            vars.iter()
                .map(|&v| {
                    let (vi, vj) = ws.node_of_var[v];
                    ws.h_x * fx::powf(phi.get(vi, vj), gamma)
                })
                .sum()
        };
        let (mut lo, mut hi) = (-16.0, 16.0); // log2 gamma
        let s_lo = sum_at(fx::powf(2.0, lo), &phi);
        let s_hi = sum_at(fx::powf(2.0, hi), &phi);
        if !(s_hi <= target && target <= s_lo) {
            return Err(SolveError::Infeasible(String::from(
                "balance target outside the reachable range of the start",
            )));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if sum_at(fx::powf(2.0, mid), &phi) >= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let gamma = fx::powf(2.0, 0.5 * (lo + hi));
        for &v in vars {
            let (vi, vj) = ws.node_of_var[v];
            phi.set(vi, vj, fx::powf(phi.get(vi, vj), gamma));
        }
    }

    // The start must be strictly interior on every variable-width cell.
    for i in 0..=ws.n_t {
        for j in 0..ws.n_x {
            if ws.cell_width_variable(i, j) && phi.forward_dx(i, j) <= 0.0 {
                return Err(SolveError::Infeasible(String::from(
                    "feasible start is not strictly monotone",
                )));
            }
        }
    }
    Ok(phi)
}

/// Boundary-connected runs of near-zero-width cells: returns node pins that
/// clamp those widths to exactly zero (left runs to the value 0, right runs
/// to 1). Interior zero-density pockets are left to the barrier.
fn detect_active_pins(
    ws: &Workspace,
    phi: &PotentialField,
    tol: f64,
) -> Vec<(usize, usize, f64)> {
    // Per-level runs of near-zero-width cells attached to each boundary.
    let n_t = ws.n_t;
    let n_x = ws.n_x;
    let mut lrun = vec![0usize; n_t + 1];
    let mut rrun = vec![0usize; n_t + 1];
    for i in 0..=n_t {
        let mut j = 0;
        while j < n_x && fx::abs(phi.forward_dx(i, j)) < tol {
            j += 1;
        }
        lrun[i] = j;
        let mut k = 0;
        while k < n_x - j && fx::abs(phi.forward_dx(i, n_x - 1 - k)) < tol {
            k += 1;
        }
        rrun[i] = k;
    }
    // Clamping the first `p` cells of level `i` to zero width forces the
    // time difference through those cells to vanish, which requires the
    // same columns to sit at the bound on level `i + 1` as well: the pinned
    // extents must grow by at most one cell per step backward in time.
    // Cells at the edge of an expanding support carry genuine flux through a
    // tiny width and must stay free.
    let mut lpin = lrun.clone();
    let mut rpin = rrun.clone();
    for _ in 0..2 {
        for i in (0..n_t).rev() {
            lpin[i] = lpin[i].min(lpin[i + 1] + 1);
            rpin[i] = rpin[i].min(rpin[i + 1] + 1);
        }
        // Pinning column j at level i also fixes the time difference of the
        // cell below, so the column must either be pinned on level i - 1 as
        // well or keep a width safely away from the bound there.
        for i in 1..=n_t {
            let mut p = 0;
            while p < lpin[i] {
                let jn = p + 1;
                if jn <= lpin[i - 1] || phi.forward_dx(i - 1, jn) >= tol {
                    p += 1;
                } else {
                    break;
                }
            }
            lpin[i] = p;
            let mut r = 0;
            while r < rpin[i] {
                let jn = n_x - 1 - r;
                if jn >= n_x - rpin[i - 1] || phi.forward_dx(i - 1, jn) >= tol {
                    r += 1;
                } else {
                    break;
                }
            }
            rpin[i] = r;
        }
    }
    let mut pins = Vec::new();
    for i in 1..=n_t {
        // Keep at least one interior free cell between the two runs.
        let (mut lp, mut rp) = (lpin[i], rpin[i]);
        while lp + rp >= n_x {
            if lp >= rp {
                lp -= 1;
            } else {
                rp -= 1;
            }
        }
        for j in 0..lp {
            if ws.var_at(i, j + 1).is_some() {
                pins.push((i, j + 1, 0.0));
            }
        }
        for k in 0..rp {
            if ws.var_at(i, n_x - 1 - k).is_some() {
                pins.push((i, n_x - 1 - k, 1.0));
            }
        }
    }
    pins
}

/// Minimizes the discrete objective over the constraint polytope.
pub fn solve(
    objective: &DiscreteObjective,
    constraints: &ConstraintSystem,
    config: &SolverConfig,
    warm_start: Option<&PotentialField>,
) -> Result<SolveReport, SolveError> {
    let ws = Workspace::build(constraints)?;
    let mut phi = match warm_start {
        Some(start) => {
            let mut p = start.clone();
            ws.apply_pins(&mut p);
            // Project warm starts exactly onto the balance rows by a uniform
            // shift in the null direction of each level.
            let residuals = ws.balance_residuals(&p);
            for k in 0..ws.n_t {
                if ws.level_vars[k].is_empty() {
                    continue;
                }
                let shift = residuals[k] / (ws.level_vars[k].len() as f64 * ws.h_x);
                for &v in &ws.level_vars[k] {
                    let (i, j) = ws.node_of_var[v];
                    let cur = p.get(i, j);
                    p.set(i, j, cur - shift);
                }
            }
            for i in 0..=ws.n_t {
                for j in 0..ws.n_x {
                    if ws.cell_width_variable(i, j) && p.forward_dx(i, j) <= 0.0 {
                        return Err(SolveError::Infeasible(String::from(
                            "warm start is not strictly interior after projection",
                        )));
                    }
                }
            }
            p
        }
        None => {
            // Default start: replicate the initial cumulative data at every
            // level, then blend and calibrate as usual.
            let grid = constraints.grid.clone();
            let mut base = PotentialField::zeros(grid);
            for i in 0..=ws.n_t {
                for j in 0..=ws.n_x {
                    base.set(i, j, constraints.m0_cdf[j]);
                }
            }
            feasible_start_ws(&ws, constraints, base, config.start_blend)?
        }
    };

    let mut iterations = 0;
    let mut stage_objectives = Vec::new();
    let mut mu = config.barrier_mu0;
    let mut stage_idx = 0usize;
    let mut lambda = vec![0.0; ws.n_t];
    let mut converged = false;

    loop {
        let eps = config
            .smoothing_eps_schedule
            .get(stage_idx)
            .copied()
            .unwrap_or(0.0);
        let at_final = mu <= config.barrier_mu_final * (1.0 + 1e-12) || stage_idx + 1 >= config.max_outer;
        let tol = if at_final {
            config.tol_kkt
        } else {
            fx::maxf(config.tol_kkt, 0.1 * mu)
        };
        let out = run_stage(
            &ws,
            objective,
            &mut phi,
            mu,
            eps,
            tol,
            config.tol_feas,
            config.max_inner,
        )?;
        iterations += out.iterations;
        lambda = out.lambda;
        if let ObjectiveValue::Finite(v) = objective.value(&phi) {
            stage_objectives.push(v);
        }
        #[cfg(feature = "std")]
        if config.verbose {
            std::eprintln!(
                "stage mu={mu:.2e} eps={eps:.1e} iters={} converged={} obj={:?}",
                out.iterations,
                out.converged,
                stage_objectives.last()
            );
        }
        if at_final {
            converged = converged || out.converged;
            break;
        }
        mu = fx::maxf(mu * config.barrier_shrink, config.barrier_mu_final);
        stage_idx += 1;
    }

    // Barrier-free Newton polish: removes the O(mu) centering bias. The
    // fraction-to-boundary cap still keeps the iterate interior.
    if config.polish {
        let before = objective.value(&phi).finite();
        let mut polished = phi.clone();
        // Near the minimizer Newton converges quadratically, so the
        // barrier-free stages can aim far below the outer tolerance.
        let polish_tol = fx::minf(config.tol_kkt, 1e-12);
        if let Ok(out) = run_stage(
            &ws,
            objective,
            &mut polished,
            0.0,
            0.0,
            polish_tol,
            config.tol_feas,
            40,
        ) {
            iterations += out.iterations;
            let after = objective.value(&polished).finite();
            if let (Some(b), Some(a)) = (before, after) {
                if a <= b + 1e-14 {
                    phi = polished;
                    lambda = out.lambda;
                    converged = converged || out.converged;
                }
            }
        }

        // Active-set rounds: widths the barrier left near zero are clamped
        // to exactly zero, the balance rows are re-projected on the reduced
        // variable set, and a short Newton polish reconverges. A round is
        // kept only when the exact objective does not move up by more than
        // the clamping perturbation itself.
        // Each round exposes the next layer of the degenerate-support
        // staircase, so the cap must cover the deepest run of cells. When a
        // round finds nothing but the polish has still not reached
        // stationarity, the detection tolerance is raised: weakly active
        // widths approach zero only logarithmically along the barrier path,
        // and the objective-increase guard below rejects any overreach.
        let mut extra: Vec<(usize, usize, f64)> = Vec::new();
        let mut ws_act = ws;
        let mut clamp_tol = ACTIVE_TOL;
        for _ in 0..32 {
            let fresh = detect_active_pins(&ws_act, &phi, clamp_tol);
            if fresh.is_empty() {
                if converged || clamp_tol >= 1e-4 {
                    #[cfg(feature = "std")]
                    if config.verbose {
                        std::eprintln!("clamp round: no fresh pins");
                    }
                    break;
                }
                clamp_tol *= 10.0;
                #[cfg(feature = "std")]
                if config.verbose {
                    std::eprintln!("clamp round: raising tolerance to {clamp_tol:.1e}");
                }
                continue;
            }
            #[cfg(feature = "std")]
            if config.verbose {
                std::eprintln!("clamp round: {} fresh pins", fresh.len());
            }
            extra.extend(fresh);
            let ws2 = match Workspace::build_with_pins(constraints, &extra) {
                Ok(w) => w,
                Err(_e) => {
                    #[cfg(feature = "std")]
                    if config.verbose {
                        std::eprintln!("clamp round: workspace build failed: {_e:?}");
                    }
                    break;
                }
            };
            let before = objective.value(&phi).finite();
            let mut trial = phi.clone();
            ws2.apply_pins(&mut trial);
            let residuals = ws2.balance_residuals(&trial);
            let mut ok = true;
            for k in 0..ws2.n_t {
                if ws2.level_vars[k].is_empty() {
                    if fx::abs(residuals[k]) > 1e-8 {
                        ok = false;
                    }
                    continue;
                }
                let shift = residuals[k] / (ws2.level_vars[k].len() as f64 * ws2.h_x);
                for &v in &ws2.level_vars[k] {
                    let (i, j) = ws2.node_of_var[v];
                    let cur = trial.get(i, j);
                    trial.set(i, j, cur - shift);
                }
            }
            for i in 0..=ws2.n_t {
                for j in 0..ws2.n_x {
                    if ws2.cell_width_variable(i, j) && trial.forward_dx(i, j) <= 0.0 {
                        ok = false;
                    }
                }
            }
            if !ok {
                #[cfg(feature = "std")]
                if config.verbose {
                    std::eprintln!("clamp round: projection infeasible");
                }
                break;
            }
            let Ok(out) = run_stage(
                &ws2,
                objective,
                &mut trial,
                0.0,
                0.0,
                polish_tol,
                config.tol_feas,
                40,
            ) else {
                #[cfg(feature = "std")]
                if config.verbose {
                    std::eprintln!("clamp round: polish failed");
                }
                break;
            };
            iterations += out.iterations;
            let after_v = objective.value(&trial);
            let after = after_v.finite();
            let (Some(b), Some(a)) = (before, after) else {
                #[cfg(feature = "std")]
                if config.verbose {
                    if let crate::discretize::ObjectiveValue::Infeasible { cell } = after_v {
                        let (ci, cj) = cell;
                        std::eprintln!(
                            "clamp round: infeasible cell ({ci},{cj}): y={:.3e} z={:.3e}",
                            trial.forward_dx(ci, cj),
                            trial.forward_dt(ci, cj)
                        );
                    } else {
                        std::eprintln!("clamp round: objective not finite, before {before:?}");
                    }
                }
                break;
            };
            // Clamping a width of size `clamp_tol` perturbs the objective by
            // a comparable amount, so the guard scales with the tolerance.
            let allowed = fx::maxf(1e-9, 1e-2 * clamp_tol);
            if a > b + allowed {
                #[cfg(feature = "std")]
                if config.verbose {
                    std::eprintln!("clamp round: objective rose {b:.12} -> {a:.12}");
                }
                break;
            }
            #[cfg(feature = "std")]
            if config.verbose {
                std::eprintln!("clamp round: kept, obj {b:.12} -> {a:.12}, inner converged={}", out.converged);
            }
            phi = trial;
            lambda = out.lambda;
            converged = out.converged;
            ws_act = ws2;
        }
    }

    let objective_value = match objective.value(&phi) {
        ObjectiveValue::Finite(v) => v,
        ObjectiveValue::Infeasible { .. } => {
            return Err(SolveError::Numerical("final iterate infeasible"))
        }
    };
    let duals = MultiplierEstimates {
        balance: lambda,
        monotone_mu: config.barrier_mu_final,
    };
    let kkt = kkt_residual(objective, constraints, &phi, &duals);
    let feasibility_residual = constraints.max_residual(&phi);
    Ok(SolveReport {
        phi_star: phi,
        objective_value,
        kkt_residual: kkt,
        feasibility_residual,
        iterations,
        converged: converged && feasibility_residual <= 10.0 * 1e-9,
        multiplier_estimates: duals,
        stage_objectives,
    })
}

/// Sup-norm of the projected Lagrangian gradient over the free variables.
///
/// Inequality duals are the barrier estimates `mu / D_x phi` with
/// `mu = duals.monotone_mu`; balance duals default to the per-level least
/// squares fit when `duals.balance` is empty.
pub fn kkt_residual(
    objective: &DiscreteObjective,
    constraints: &ConstraintSystem,
    phi: &PotentialField,
    duals: &MultiplierEstimates,
) -> f64 {
    let Ok(ws) = Workspace::build(constraints) else {
        return f64::INFINITY;
    };
    let full = objective.gradient(phi, 0.0);
    let nodes_x = ws.n_x + 1;
    let mut g = vec![0.0; ws.n_vars];
    for v in 0..ws.n_vars {
        let (i, j) = ws.node_of_var[v];
        g[v] = full[i * nodes_x + j];
    }
    // Subtract the inequality-dual terms.
    if duals.monotone_mu > 0.0 {
        for i in 0..=ws.n_t {
            for j in 0..ws.n_x {
                if !ws.cell_width_variable(i, j) {
                    continue;
                }
                let y = phi.forward_dx(i, j);
                if y <= 0.0 {
                    continue;
                }
                let nu = duals.monotone_mu / y;
                if let Some(v) = ws.var_at(i, j) {
                    g[v] += nu / ws.h_x;
                }
                if let Some(v) = ws.var_at(i, j + 1) {
                    g[v] -= nu / ws.h_x;
                }
            }
        }
    }
    // Variables whose stencil touches a constraint that is (numerically)
    // active carry free inequality duals instead of a vanishing gradient,
    // so they are excluded from the stationarity measure.
    let tiny = |i: usize, j: usize| -> bool {
        j < ws.n_x && fx::abs(phi.forward_dx(i, j)) < ACTIVE_TOL
    };
    let included = |v: usize| -> bool {
        let (i, j) = ws.node_of_var[v];
        let width_left = j > 0 && tiny(i, j - 1);
        let width_right = tiny(i, j);
        let flux_below = j > 0 && tiny(i - 1, j - 1) || tiny(i - 1, j);
        !(width_left || width_right || flux_below)
    };
    if duals.balance.len() == ws.n_t {
        let mut sup = 0.0;
        for k in 0..ws.n_t {
            for &v in &ws.level_vars[k] {
                if included(v) {
                    sup = fx::maxf(sup, fx::abs(g[v] - duals.balance[k] * ws.h_x));
                }
            }
        }
        sup
    } else {
        // Least-squares balance duals on the included variables.
        let mut sup = 0.0;
        for k in 0..ws.n_t {
            let vars: Vec<usize> = ws.level_vars[k]
                .iter()
                .copied()
                .filter(|&v| included(v))
                .collect();
            if vars.is_empty() {
                continue;
            }
            let sum: f64 = vars.iter().map(|&v| g[v]).sum();
            let lam = sum / (vars.len() as f64 * ws.h_x);
            for &v in &vars {
                sup = fx::maxf(sup, fx::abs(g[v] - lam * ws.h_x));
            }
        }
        sup
    }
}
