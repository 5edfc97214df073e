//! Problem data: supply path, initial density, potential and terminal cost.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::cost::ConvexCost;
use crate::fx;
use crate::grid::Grid;

pub type ScalarFn = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// Mean-reverting supply model `Q' = Qbar(t) - alpha Q`, `Q(0) = q0`.
pub struct SupplyModel {
    pub qbar: ScalarFn,
    pub alpha: f64,
    pub q0: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupplyError {
    /// Time at which the average-supply evaluation became non-finite.
    pub time_of_failure: f64,
}

impl core::fmt::Display for SupplyError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "average supply evaluated non-finite at t = {}",
            self.time_of_failure
        )
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SupplyError {}

/// Supply samples on uniform nodes of `[0, T]` with the running integral
/// `q(t) = int_0^t Q` and the L1 norm of `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupplyPath {
    pub t_nodes: Vec<f64>,
    pub q: Vec<f64>,
    pub q_cum: Vec<f64>,
    pub q_l1: f64,
}

impl SupplyPath {
    pub fn horizon(&self) -> f64 {
        *self.t_nodes.last().unwrap()
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.t_nodes.len() - 1;
        let h = self.horizon() / n as f64;
        let s = crate::fx::floor(t / h);
        let k = (s as usize).min(n - 1);
        let w = (t - self.t_nodes[k]) / h;
        (k, w.clamp(0.0, 1.0))
    }

    /// Linear interpolation of `Q` between nodes.
    pub fn value(&self, t: f64) -> f64 {
        let (k, w) = self.locate(t);
        (1.0 - w) * self.q[k] + w * self.q[k + 1]
    }

    /// Linear interpolation of the cumulative integral `q(t)`.
    pub fn cumulative(&self, t: f64) -> f64 {
        let (k, w) = self.locate(t);
        (1.0 - w) * self.q_cum[k] + w * self.q_cum[k + 1]
    }
}

/// Classical RK4 integration of the supply ODE on `n_steps` uniform steps;
/// the cumulative integral and L1 norm are filled by trapezoid on the same
/// nodes.
pub fn integrate_supply(model: &SupplyModel, n_steps: usize) -> Result<SupplyPath, SupplyError> {
    assert!(n_steps >= 2, "supply integration needs at least 2 steps");
    let h = model.horizon / n_steps as f64;
    let rhs = |t: f64, q: f64| (model.qbar)(t) - model.alpha * q;

    let mut t_nodes = Vec::with_capacity(n_steps + 1);
    let mut q = Vec::with_capacity(n_steps + 1);
    let mut state = model.q0;
    for k in 0..=n_steps {
        let t = k as f64 * h;
        t_nodes.push(t);
        q.push(state);
        if k == n_steps {
            break;
        }
        let k1 = rhs(t, state);
        let k2 = rhs(t + 0.5 * h, state + 0.5 * h * k1);
        let k3 = rhs(t + 0.5 * h, state + 0.5 * h * k2);
        let k4 = rhs(t + h, state + h * k3);
        if !(k1.is_finite() && k2.is_finite() && k3.is_finite() && k4.is_finite()) {
            return Err(SupplyError { time_of_failure: t });
        }
        state += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }

    let mut q_cum = Vec::with_capacity(n_steps + 1);
    let mut q_l1 = 0.0;
    let mut acc = 0.0;
    q_cum.push(0.0);
    for k in 0..n_steps {
        acc += 0.5 * h * (q[k] + q[k + 1]);
        q_l1 += 0.5 * h * (fx::abs(q[k]) + fx::abs(q[k + 1]));
        q_cum.push(acc);
    }

    Ok(SupplyPath {
        t_nodes,
        q,
        q_cum,
        q_l1,
    })
}

/// Compactly supported initial density sampled on a grid, normalized so the
/// trapezoidal mass is exactly one.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialDensity {
    /// Node samples on the grid's space axis.
    pub values: Vec<f64>,
    /// Support radius: the density vanishes outside `[-r0, r0]`.
    pub r0: f64,
    /// First moment `int x m0 dx` by trapezoid.
    pub mbar0: f64,
}

impl InitialDensity {
    /// Samples a density function and normalizes by trapezoid. The function
    /// must be nonnegative and vanish outside `[-r0, r0]`.
    pub fn from_fn(grid: &Grid, r0: f64, density: impl Fn(f64) -> f64) -> Self {
        assert!(r0 > 0.0 && r0 < grid.radius, "support must fit inside the domain");
        let h = grid.h_x();
        let mut values: Vec<f64> = (0..grid.nodes_x())
            .map(|j| {
                let x = grid.x(j);
                if fx::abs(x) >= r0 {
                    0.0
                } else {
                    density(x)
                }
            })
            .collect();
        for &v in &values {
            assert!(v >= 0.0 && v.is_finite(), "initial density must be nonnegative");
        }
        let mass = trapezoid(&values, h);
        assert!(mass > 0.0, "initial density has zero mass");
        for v in values.iter_mut() {
            *v /= mass;
        }
        let mbar0 = {
            let xm: Vec<f64> = (0..grid.nodes_x()).map(|j| grid.x(j) * values[j]).collect();
            trapezoid(&xm, h)
        };
        Self { values, r0, mbar0 }
    }

    /// Smooth bump `exp(-1 / (1 - (x/r0)^2))` on `(-r0, r0)`.
    pub fn bump(grid: &Grid, r0: f64) -> Self {
        Self::from_fn(grid, r0, |x| {
            let s = x / r0;
            let w = 1.0 - s * s;
            if w <= 0.0 {
                0.0
            } else {
                fx::exp(-1.0 / w)
            }
        })
    }

    /// Uniform density on `[-r0, r0]`.
    pub fn uniform(grid: &Grid, r0: f64) -> Self {
        Self::from_fn(grid, r0, |x| if fx::abs(x) < r0 { 1.0 } else { 0.0 })
    }
}

/// Trapezoidal cumulative `M0(x_j)` of the sampled initial density.
/// `M0(-R) = 0` and `M0(R) = 1` by normalization; monotone because the
/// samples are nonnegative.
pub fn cumulative_density(m0: &InitialDensity, grid: &Grid) -> Vec<f64> {
    let h = grid.h_x();
    let mut out = Vec::with_capacity(grid.nodes_x());
    let mut acc = 0.0;
    out.push(0.0);
    for j in 0..grid.n_x {
        acc += 0.5 * h * (m0.values[j] + m0.values[j + 1]);
        out.push(acc);
    }
    // Renormalize by the accumulated total: the samples have unit trapezoid
    // mass up to rounding, and dividing by the running sum itself makes the
    // last entry exactly one (flat tails stay exactly one, not one ulp off).
    if acc > 0.0 {
        for v in out.iter_mut() {
            *v /= acc;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadiusSelection {
    pub radius: f64,
    /// Set when a configured radius does not dominate the support branch
    /// `R0 + ||Q||_L1`. Not a failure: inspecting the transported support
    /// can justify a smaller domain.
    pub warning: Option<String>,
}

/// Truncation radius for the space domain.
///
/// A configured radius wins (with a warning when it does not dominate the
/// support branch). Otherwise the larger of the support branch
/// `R0 + ||Q||_L1` and, when a Lipschitz bound `C0` is available, the branch
/// `(R0 + C0 T)(1 + C0 T e^(C0 T))`, times a 1.05 safety factor.
pub fn select_radius(
    m0: &InitialDensity,
    supply: &SupplyPath,
    lipschitz_bound: Option<f64>,
    configured: Option<f64>,
) -> RadiusSelection {
    let support_branch = m0.r0 + supply.q_l1;
    if let Some(r) = configured {
        let warning = if r <= support_branch {
            Some(format!(
                "configured radius {r} does not exceed support branch {support_branch}; \
                 verify the transported support stays inside the domain"
            ))
        } else {
            None
        };
        return RadiusSelection { radius: r, warning };
    }
    let mut lower = support_branch;
    if let Some(c0) = lipschitz_bound {
        let t = supply.horizon();
        let lip_branch = (m0.r0 + c0 * t) * (1.0 + c0 * t * fx::exp(c0 * t));
        lower = fx::maxf(lower, lip_branch);
    }
    RadiusSelection {
        radius: 1.05 * lower,
        warning: None,
    }
}

/// Full problem instance consumed by the discretization and the recovery.
pub struct ProblemInstance {
    pub cost: Arc<dyn ConvexCost + Send + Sync>,
    pub supply: SupplyPath,
    pub v: ScalarFn,
    pub u_terminal: ScalarFn,
    pub u_terminal_prime: ScalarFn,
    pub m0: InitialDensity,
    pub horizon: f64,
    pub radius: f64,
    /// Set when `V` and `u_T` are the linear-quadratic specializations.
    pub lq_params: Option<crate::analytic::LqParams>,
}

impl ProblemInstance {
    /// Linear-quadratic instance: `V(x) = -(eta/2)(x - kappa)^2`, `u_T = 0`.
    pub fn linear_quadratic(
        params: crate::analytic::LqParams,
        supply: SupplyPath,
        m0: InitialDensity,
        horizon: f64,
        radius: f64,
    ) -> Self {
        let eta = params.eta;
        let kappa = params.kappa;
        Self {
            cost: Arc::new(crate::cost::QuadraticCost::new(params.c)),
            supply,
            v: Box::new(move |x| -0.5 * eta * (x - kappa) * (x - kappa)),
            u_terminal: Box::new(|_| 0.0),
            u_terminal_prime: Box::new(|_| 0.0),
            m0,
            horizon,
            radius,
            lq_params: Some(params),
        }
    }
}

pub(crate) fn trapezoid(values: &[f64], h: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    h * (0.5 * (values[0] + values[values.len() - 1]) + inner)
}
