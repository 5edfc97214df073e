//! Hamiltonian, its Legendre transform, and the perspective integrand.
//!
//! The running cost of the variational problem is the perspective function
//! `L(z, y) = F(z/y) y` of the Legendre transform `F` of the Hamiltonian `H`,
//! extended by `+inf` for `y = 0, z != 0` and by `0` at the origin. The
//! quadratic pair `H(p) = p^2 / (2c)`, `F(v) = c v^2 / 2` is the concrete
//! instance used by the benchmark; other convex pairs can be supplied through
//! the [`ConvexCost`] trait with analytic derivatives.

use crate::fx;

/// Extended-real value of the perspective integrand.
///
/// Infinity is a structural variant so infeasibility can be detected exactly,
/// never a large sentinel number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LValue {
    Finite(f64),
    Infinite,
}

impl LValue {
    pub fn is_finite(&self) -> bool {
        matches!(self, LValue::Finite(_))
    }

    /// Finite payload, panicking on the infinite variant.
    pub fn unwrap(self) -> f64 {
        match self {
            LValue::Finite(v) => v,
            LValue::Infinite => panic!("LValue::unwrap on infinite value"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostError {
    /// `y < 0` is outside the domain of `L`.
    NegativeDensity,
    /// A derivative of `L` was requested at `y = 0`.
    DegeneratePoint,
    /// An input was NaN or infinite.
    NonFinite,
}

impl core::fmt::Display for CostError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            CostError::NegativeDensity => write!(f, "density argument y must be nonnegative"),
            CostError::DegeneratePoint => write!(f, "derivative of L undefined at y = 0"),
            CostError::NonFinite => write!(f, "non-finite input"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CostError {}

/// A convex Hamiltonian together with its Legendre transform, both with
/// analytic derivatives. `f_prime` must invert `h_prime`.
pub trait ConvexCost {
    fn h(&self, p: f64) -> f64;
    fn h_prime(&self, p: f64) -> f64;
    fn f(&self, v: f64) -> f64;
    fn f_prime(&self, v: f64) -> f64;
    fn f_second(&self, v: f64) -> f64;

    /// Growth constants: `F(v) >= c_growth * |v|^p_growth`.
    fn growth(&self) -> (f64, f64);
}

/// Quadratic cost family: `H(p) = p^2 / (2c)`, `F(v) = c v^2 / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticCost {
    c: f64,
}

impl QuadraticCost {
    /// Panics if `c <= 0` or `c` is not finite.
    pub fn new(c: f64) -> Self {
        assert!(c.is_finite() && c > 0.0, "cost weight c must be positive");
        Self { c }
    }

    pub fn weight(&self) -> f64 {
        self.c
    }
}

impl ConvexCost for QuadraticCost {
    fn h(&self, p: f64) -> f64 {
        p * p / (2.0 * self.c)
    }

    fn h_prime(&self, p: f64) -> f64 {
        p / self.c
    }

    fn f(&self, v: f64) -> f64 {
        self.c * v * v / 2.0
    }

    fn f_prime(&self, v: f64) -> f64 {
        self.c * v
    }

    fn f_second(&self, _v: f64) -> f64 {
        self.c
    }

    fn growth(&self) -> (f64, f64) {
        (self.c / 2.0, 2.0)
    }
}

/// Perspective integrand `L(z, y) = F(z/y) y`, extended by `+inf` for
/// `y = 0, z != 0` and `0` for `z = y = 0`.
pub fn eval_l(model: &dyn ConvexCost, z: f64, y: f64) -> Result<LValue, CostError> {
    if !z.is_finite() || !y.is_finite() {
        return Err(CostError::NonFinite);
    }
    if y < 0.0 {
        return Err(CostError::NegativeDensity);
    }
    if y == 0.0 {
        if z == 0.0 {
            Ok(LValue::Finite(0.0))
        } else {
            Ok(LValue::Infinite)
        }
    } else {
        Ok(LValue::Finite(model.f(z / y) * y))
    }
}

/// `dL/dz = F'(z/y)`, defined for `y > 0`.
pub fn eval_l_z(model: &dyn ConvexCost, z: f64, y: f64) -> Result<f64, CostError> {
    if !z.is_finite() || !y.is_finite() {
        return Err(CostError::NonFinite);
    }
    if y <= 0.0 {
        return Err(CostError::DegeneratePoint);
    }
    Ok(model.f_prime(z / y))
}

/// `dL/dy = F(r) - r F'(r)` with `r = z/y`, defined for `y > 0`.
pub fn eval_l_y(model: &dyn ConvexCost, z: f64, y: f64) -> Result<f64, CostError> {
    if !z.is_finite() || !y.is_finite() {
        return Err(CostError::NonFinite);
    }
    if y <= 0.0 {
        return Err(CostError::DegeneratePoint);
    }
    let r = z / y;
    Ok(model.f(r) - r * model.f_prime(r))
}

/// `H(F'(r))`, the integrand of the value-function reconstruction.
pub fn eval_h_of_fprime(model: &dyn ConvexCost, r: f64) -> Result<f64, CostError> {
    if !r.is_finite() {
        return Err(CostError::NonFinite);
    }
    Ok(model.h(model.f_prime(r)))
}

/// Spot-checks the growth bound `F(v) >= c |v|^p` on a sample of points.
pub fn growth_bound_holds(model: &dyn ConvexCost, samples: &[f64]) -> bool {
    let (c, p) = model.growth();
    samples
        .iter()
        .all(|&v| model.f(v) >= c * fx::powf(fx::abs(v), p) - 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(c: f64) -> QuadraticCost {
        QuadraticCost::new(c)
    }

    #[test]
    fn l_zero_flux() {
        let m = quad(1.0);
        assert_eq!(eval_l(&m, 0.0, 0.5).unwrap(), LValue::Finite(0.0));
    }

    #[test]
    fn l_infinite_at_degenerate_cell() {
        let m = quad(1.0);
        assert_eq!(eval_l(&m, 1.0, 0.0).unwrap(), LValue::Infinite);
        assert_eq!(eval_l(&m, 0.0, 0.0).unwrap(), LValue::Finite(0.0));
    }

    #[test]
    fn l_hand_value() {
        let m = quad(1.0);
        // F(1/2) * 2 = (1/2)(1/4) * 2
        assert!((eval_l(&m, 1.0, 2.0).unwrap().unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn l_rejects_bad_inputs() {
        let m = quad(1.0);
        assert_eq!(eval_l(&m, 1.0, -0.1), Err(CostError::NegativeDensity));
        assert_eq!(eval_l(&m, f64::NAN, 1.0), Err(CostError::NonFinite));
        assert_eq!(eval_l(&m, 1.0, f64::INFINITY), Err(CostError::NonFinite));
    }

    #[test]
    fn l_z_values() {
        assert_eq!(eval_l_z(&quad(1.0), 0.0, 1.0).unwrap(), 0.0);
        assert!((eval_l_z(&quad(2.0), 1.0, 2.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((eval_l_z(&quad(1.0), -0.3, 0.6).unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(
            eval_l_z(&quad(1.0), 1.0, 0.0),
            Err(CostError::DegeneratePoint)
        );
    }

    #[test]
    fn l_y_values() {
        assert_eq!(eval_l_y(&quad(1.0), 0.0, 1.0).unwrap(), 0.0);
        assert!((eval_l_y(&quad(1.0), 1.0, 1.0).unwrap() + 0.5).abs() < 1e-15);
        assert!((eval_l_y(&quad(4.0), 2.0, 1.0).unwrap() + 8.0).abs() < 1e-15);
        assert_eq!(
            eval_l_y(&quad(1.0), 1.0, 0.0),
            Err(CostError::DegeneratePoint)
        );
    }

    #[test]
    fn h_of_fprime_values() {
        assert_eq!(eval_h_of_fprime(&quad(1.0), 0.0).unwrap(), 0.0);
        assert!((eval_h_of_fprime(&quad(1.0), 2.0).unwrap() - 2.0).abs() < 1e-15);
        assert!((eval_h_of_fprime(&quad(3.0), 1.0).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn conjugacy_quadratic() {
        // F' inverts H' for the quadratic family.
        let m = quad(2.5);
        for &p in &[-3.0, -0.7, 0.0, 0.2, 5.0] {
            assert!((m.f_prime(m.h_prime(p)) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn growth_bound_exact_for_quadratic() {
        let m = quad(1.7);
        let samples: alloc::vec::Vec<f64> = (-20..=20).map(|k| k as f64 * 0.37).collect();
        assert!(growth_bound_holds(&m, &samples));
    }
}
