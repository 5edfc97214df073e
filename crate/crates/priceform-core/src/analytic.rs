//! Closed-form benchmark: quadratic running cost with a concave quadratic
//! congestion term. The value function is a quadratic polynomial in space
//! whose coefficients satisfy a small ODE system in time, the price has an
//! explicit formula, and the density is transported along an affine drift.
//! Everything here is independent of the variational solver and serves as
//! its reference.

use alloc::vec::Vec;

use crate::fx;
use crate::grid::{Grid, PotentialField};
use crate::setup::{InitialDensity, SupplyPath};

/// Parameters of the benchmark family: cost weight `c` of the quadratic
/// Hamiltonian `p^2 / (2c)`, congestion strength `eta`, and congestion
/// center `kappa` in `V(x) = -eta/2 (x - kappa)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqParams {
    pub c: f64,
    pub eta: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticError {
    /// The quadratic coefficient escaped in finite time while integrating
    /// backward; the benchmark is not defined for these parameters.
    RiccatiBlowup { t: f64 },
}

impl core::fmt::Display for AnalyticError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            AnalyticError::RiccatiBlowup { t } => {
                write!(f, "quadratic coefficient blew up near t = {t}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for AnalyticError {}

/// Explicit price at time `t`:
/// `eta (kappa - mean0) (T - t) - eta \int_t^T \int_0^s Q - c Q(t)`,
/// where `mean0` is the mean of the initial density.
pub fn explicit_price(params: &LqParams, mean0: f64, supply: &SupplyPath, t: f64) -> f64 {
    let horizon = supply.horizon();
    // Inner integral of the cumulative supply over [t, T] by a fine
    // composite trapezoid; the cumulative itself is already tabulated.
    let panels = 8192usize;
    let h = (horizon - t) / panels as f64;
    let mut inner = 0.0;
    if h > 0.0 {
        for k in 0..=panels {
            let s = t + h * k as f64;
            let w = if k == 0 || k == panels { 0.5 } else { 1.0 };
            inner += w * supply.cumulative(s);
        }
        inner *= h;
    }
    params.eta * (params.kappa - mean0) * (horizon - t) - params.eta * inner
        - params.c * supply.value(t)
}

/// Coefficients of the quadratic value-function ansatz
/// `u(t, x) = a0(t) + a1(t) x + a2(t) x^2`, tabulated on a uniform time
/// grid (ascending).
#[derive(Debug, Clone)]
pub struct AnsatzCoefficients {
    pub t_nodes: Vec<f64>,
    pub a0: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
}

impl AnsatzCoefficients {
    fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.t_nodes.len() - 1;
        let h = self.t_nodes[1] - self.t_nodes[0];
        let pos = ((t - self.t_nodes[0]) / h).clamp(0.0, n as f64);
        let k = (pos as usize).min(n - 1);
        (k, pos - k as f64)
    }

    /// Linear interpolation of the three coefficients at `t`.
    pub fn at(&self, t: f64) -> (f64, f64, f64) {
        let (k, w) = self.locate(t);
        (
            self.a0[k] * (1.0 - w) + self.a0[k + 1] * w,
            self.a1[k] * (1.0 - w) + self.a1[k + 1] * w,
            self.a2[k] * (1.0 - w) + self.a2[k + 1] * w,
        )
    }

    /// Value of the ansatz at `(t, x)`.
    pub fn u(&self, t: f64, x: f64) -> f64 {
        let (a0, a1, a2) = self.at(t);
        a0 + a1 * x + a2 * x * x
    }

    /// Spatial derivative of the ansatz at `(t, x)`.
    pub fn u_x(&self, t: f64, x: f64) -> f64 {
        let (_, a1, a2) = self.at(t);
        a1 + 2.0 * a2 * x
    }
}

/// Integrates the coefficient ODEs backward from zero terminal data:
/// `a2' = 2 a2^2 / c - eta / 2`,
/// `a1' = (2 a2 / c)(price + a1) + eta kappa`,
/// `a0' = (price + a1)^2 / (2c) - eta kappa^2 / 2`.
pub fn solve_ansatz_odes(
    params: &LqParams,
    price: &dyn Fn(f64) -> f64,
    horizon: f64,
    n_steps: usize,
) -> Result<AnsatzCoefficients, AnalyticError> {
    assert!(n_steps >= 1 && horizon > 0.0);
    let h = horizon / n_steps as f64;
    let rhs = |t: f64, a: [f64; 3]| -> [f64; 3] {
        let [_, a1, a2] = a;
        let p = price(t) + a1;
        [
            p * p / (2.0 * params.c) - params.eta * params.kappa * params.kappa / 2.0,
            2.0 * a2 / params.c * p + params.eta * params.kappa,
            2.0 * a2 * a2 / params.c - params.eta / 2.0,
        ]
    };
    let mut a = [0.0f64; 3];
    let mut rev: Vec<[f64; 3]> = Vec::with_capacity(n_steps + 1);
    rev.push(a);
    for k in 0..n_steps {
        let t = horizon - h * k as f64;
        let step = -h;
        let k1 = rhs(t, a);
        let add = |a: [f64; 3], k: [f64; 3], s: f64| {
            [a[0] + s * k[0], a[1] + s * k[1], a[2] + s * k[2]]
        };
        let k2 = rhs(t + 0.5 * step, add(a, k1, 0.5 * step));
        let k3 = rhs(t + 0.5 * step, add(a, k2, 0.5 * step));
        let k4 = rhs(t + step, add(a, k3, step));
        for d in 0..3 {
            a[d] += step / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
        }
        if !a.iter().all(|v| v.is_finite()) || fx::abs(a[2]) > 1e8 {
            return Err(AnalyticError::RiccatiBlowup {
                t: horizon - h * (k + 1) as f64,
            });
        }
        rev.push(a);
    }
    rev.reverse();
    let t_nodes = (0..=n_steps).map(|k| h * k as f64).collect();
    Ok(AnsatzCoefficients {
        t_nodes,
        a0: rev.iter().map(|a| a[0]).collect(),
        a1: rev.iter().map(|a| a[1]).collect(),
        a2: rev.iter().map(|a| a[2]).collect(),
    })
}

/// Sup-norm residual of `-u_t + (price + u_x)^2 / (2c) + V(x)` over the
/// interior tabulation nodes and the given spatial samples. The time
/// derivative is taken by a fourth-order finite-difference stencil on the
/// tabulated coefficients, so this check is independent of the ODE
/// right-hand sides used to produce them.
pub fn hj_residual(
    params: &LqParams,
    coeffs: &AnsatzCoefficients,
    price: &dyn Fn(f64) -> f64,
    x_samples: &[f64],
) -> f64 {
    let n = coeffs.t_nodes.len();
    assert!(n >= 5, "need at least five tabulation nodes");
    let h = coeffs.t_nodes[1] - coeffs.t_nodes[0];
    let d4 = |v: &[f64], i: usize| -> f64 {
        (-v[i + 2] + 8.0 * v[i + 1] - 8.0 * v[i - 1] + v[i - 2]) / (12.0 * h)
    };
    let mut sup = 0.0;
    for i in 2..n - 2 {
        let t = coeffs.t_nodes[i];
        let (da0, da1, da2) = (d4(&coeffs.a0, i), d4(&coeffs.a1, i), d4(&coeffs.a2, i));
        let p = price(t);
        for &x in x_samples {
            let u_t = da0 + da1 * x + da2 * x * x;
            let u_x = coeffs.a1[i] + 2.0 * coeffs.a2[i] * x;
            let v = -params.eta / 2.0 * (x - params.kappa) * (x - params.kappa);
            let q = p + u_x;
            let res = -u_t + q * q / (2.0 * params.c) + v;
            sup = fx::maxf(sup, fx::abs(res));
        }
    }
    sup
}

/// Optimal drift of the benchmark: `b(t, x) = -(price + a1 + 2 a2 x) / c`.
pub fn lq_drift<'a>(
    params: &'a LqParams,
    coeffs: &'a AnsatzCoefficients,
    price: &'a dyn Fn(f64) -> f64,
) -> impl Fn(f64, f64) -> f64 + 'a {
    let c = params.c;
    move |t: f64, x: f64| -(price(t) + coeffs.u_x(t, x)) / c
}

/// Linear interpolation of a tabulated initial density, zero outside the
/// grid.
pub fn density_interp<'a>(m0: &'a InitialDensity, grid: &'a Grid) -> impl Fn(f64) -> f64 + 'a {
    move |x: f64| {
        let h = grid.h_x();
        let pos = (x + grid.radius) / h;
        if pos < 0.0 || pos > grid.n_x as f64 {
            return 0.0;
        }
        let k = (pos as usize).min(grid.n_x - 1);
        let w = pos - k as f64;
        m0.values[k] * (1.0 - w) + m0.values[k + 1] * w
    }
}

/// Density at `(t, x)` transported along the drift `b` from the initial
/// profile `m0`: the characteristic through `(t, x)` is integrated backward
/// to its foot `y`, and the accumulated divergence gives the Jacobian, so
/// `m(t, x) = m0(y) exp(-\int_0^t b_x)` along the path.
pub fn transported_density_at(
    b: &dyn Fn(f64, f64) -> f64,
    m0: &dyn Fn(f64) -> f64,
    t: f64,
    x: f64,
    substeps_per_unit: usize,
) -> f64 {
    if t <= 0.0 {
        return m0(x);
    }
    let n = (fx::ceil(t * substeps_per_unit as f64) as usize).max(1);
    let h = t / n as f64;
    let dx = 1e-6;
    let bx = |s: f64, x: f64| (b(s, x + dx) - b(s, x - dx)) / (2.0 * dx);
    // Augmented backward system: position and accumulated divergence.
    let mut pos = x;
    let mut div = 0.0;
    for k in 0..n {
        let s = t - h * k as f64;
        let step = -h;
        let k1 = (b(s, pos), bx(s, pos));
        let k2 = (
            b(s + 0.5 * step, pos + 0.5 * step * k1.0),
            bx(s + 0.5 * step, pos + 0.5 * step * k1.0),
        );
        let k3 = (
            b(s + 0.5 * step, pos + 0.5 * step * k2.0),
            bx(s + 0.5 * step, pos + 0.5 * step * k2.0),
        );
        let k4 = (
            b(s + step, pos + step * k3.0),
            bx(s + step, pos + step * k3.0),
        );
        pos += step / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        div += step / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    // Backward integration accumulates -\int_0^t b_x in `div`.
    m0(pos) * fx::exp(div)
}

/// Transported density sampled on every node of `grid`, row-major with time
/// as the slow index.
pub fn transport_density(
    grid: &Grid,
    b: &dyn Fn(f64, f64) -> f64,
    m0: &dyn Fn(f64) -> f64,
    substeps_per_unit: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.nodes_t() * grid.nodes_x());
    for i in 0..grid.nodes_t() {
        for j in 0..grid.nodes_x() {
            out.push(transported_density_at(
                b,
                m0,
                grid.t(i),
                grid.x(j),
                substeps_per_unit,
            ));
        }
    }
    out
}

/// Potential built from the transported benchmark density:
/// `phi(t, x) = M0(x) - \int_0^t (b m)(s, x) ds`, evaluated with a fine
/// composite trapezoid in time, then made monotone per level and clipped to
/// `[0, 1]` so the discrete objective sees an admissible field.
pub fn analytic_potential(
    grid: &Grid,
    b: &dyn Fn(f64, f64) -> f64,
    m0: &dyn Fn(f64) -> f64,
    m0_cdf: &[f64],
    fine_factor: usize,
) -> PotentialField {
    assert_eq!(m0_cdf.len(), grid.nodes_x());
    let fine = fine_factor.max(1);
    let substeps = (fine * grid.n_t).max(200) / grid.n_t.max(1);
    let mut phi = PotentialField::zeros(grid.clone());
    for j in 0..grid.nodes_x() {
        let x = grid.x(j);
        let flux = |s: f64| b(s, x) * transported_density_at(b, m0, s, x, 2 * substeps);
        let mut acc = 0.0;
        let mut prev = flux(0.0);
        phi.set(0, j, m0_cdf[j]);
        for i in 1..grid.nodes_t() {
            // Sub-sampled trapezoid over the step [t_{i-1}, t_i].
            let h = grid.h_t() / fine as f64;
            for k in 1..=fine {
                let s = grid.t(i - 1) + h * k as f64;
                let cur = flux(s);
                acc += 0.5 * h * (prev + cur);
                prev = cur;
            }
            phi.set(i, j, m0_cdf[j] - acc);
        }
    }
    // Enforce admissibility: exact boundary values, monotone levels, range.
    for i in 0..grid.nodes_t() {
        phi.set(i, 0, 0.0);
        phi.set(i, grid.n_x, 1.0);
        let mut run = 0.0;
        for j in 0..grid.nodes_x() {
            let v = phi.get(i, j).clamp(0.0, 1.0);
            run = fx::maxf(run, v);
            phi.set(i, j, run);
        }
        phi.set(i, grid.n_x, 1.0);
    }
    phi
}
