//! Solution containers and error reporting used to compare numeric output
//! against the closed-form benchmark or against refined runs.

use alloc::vec::Vec;

use crate::fx;
use crate::grid::Grid;
use crate::recovery::PriceSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Produced by the variational solver.
    Numeric,
    /// Produced by the closed-form benchmark.
    Analytic,
}

/// A full solution triple on a grid: value function on nodes, density per
/// cell row, and the recovered price path.
#[derive(Debug, Clone)]
pub struct MfgSolution {
    pub grid: Grid,
    /// Value function, row-major over `(n_t + 1) x (n_x + 1)` nodes.
    pub u: Vec<f64>,
    /// Density, one row of `n_x` cell values per time level.
    pub m: Vec<Vec<f64>>,
    pub price: PriceSeries,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FieldError {
    pub sup: f64,
    pub l1: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ErrorReport {
    pub u: FieldError,
    pub m: FieldError,
    pub price: FieldError,
    /// Difference of objective values when both sides carry one.
    pub objective_gap: Option<f64>,
    pub max_balance_residual: Option<f64>,
    pub max_clearing_residual: Option<f64>,
    /// Fraction of cells on which the density mask is active (first
    /// argument of the comparison).
    pub mask_coverage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareError {
    GridMismatch,
}

impl core::fmt::Display for CompareError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            CompareError::GridMismatch => write!(f, "solutions live on different grids"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CompareError {}

fn field_error(a: &[f64], b: &[f64], weight: f64) -> FieldError {
    debug_assert_eq!(a.len(), b.len());
    let mut sup = 0.0;
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = fx::abs(x - y);
        sup = fx::maxf(sup, d);
        l1 += d * weight;
        l2 += d * d * weight;
    }
    FieldError {
        sup,
        l1,
        l2: fx::sqrt(l2),
    }
}

/// Symmetric comparison of two solutions on the same grid.
pub fn compare(a: &MfgSolution, b: &MfgSolution) -> Result<ErrorReport, CompareError> {
    let ga = &a.grid;
    let gb = &b.grid;
    if ga.n_t != gb.n_t
        || ga.n_x != gb.n_x
        || ga.horizon != gb.horizon
        || ga.radius != gb.radius
    {
        return Err(CompareError::GridMismatch);
    }
    let cell = ga.h_t() * ga.h_x();
    let u = field_error(&a.u, &b.u, cell);

    let fa: Vec<f64> = a.m.iter().flatten().copied().collect();
    let fb: Vec<f64> = b.m.iter().flatten().copied().collect();
    if fa.len() != fb.len() {
        return Err(CompareError::GridMismatch);
    }
    let m = field_error(&fa, &fb, cell);

    // Prices are compared on the overlap of their report windows.
    let overlap = a.price.value.len().min(b.price.value.len());
    let (pa, pb) = (
        &a.price.value[a.price.value.len() - overlap..],
        &b.price.value[b.price.value.len() - overlap..],
    );
    let price = field_error(pa, pb, ga.h_t());

    let eps = crate::recovery::mask_threshold(ga.h_x());
    let total = a.m.len() * ga.n_x;
    let on: usize = a
        .m
        .iter()
        .map(|row| row.iter().filter(|&&v| v > eps).count())
        .sum();
    Ok(ErrorReport {
        u,
        m,
        price,
        objective_gap: None,
        max_balance_residual: None,
        max_clearing_residual: None,
        mask_coverage: if total > 0 {
            on as f64 / total as f64
        } else {
            0.0
        },
    })
}

/// Empirical convergence orders from a sequence of errors at matching step
/// sizes: `order_k = log(e_k / e_{k+1}) / log(h_k / h_{k+1})`.
pub fn refinement_orders(errors: &[f64], steps: &[f64]) -> Vec<f64> {
    assert_eq!(errors.len(), steps.len());
    let mut out = Vec::new();
    for k in 0..errors.len().saturating_sub(1) {
        let e = fx::ln(errors[k] / errors[k + 1]);
        let h = fx::ln(steps[k] / steps[k + 1]);
        out.push(e / h);
    }
    out
}
