//! Frequency-alignment calibration.
//!
//! At the balanced steady state every class sees positives with probability
//! `p = 1/C`. The normalized steady-state strength `x* = Q*/Q_max` is the
//! unique root in `(0, 1)` of
//!
//! ```text
//! g(x) = (1 − p) x^r + x − p
//! ```
//!
//! and `α = 1 / x*^r` makes every negative weight `α w(Q*)` equal to one.
//! The root depends only on `C` and `r`, never on `λ`.

use crate::error::{Result, TalError};
use crate::kernel::{Exponent, MemoryKernel, QState};
use crate::loss::TalConfig;
use crate::scalar::Scalar;

pub const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    /// `r = 1`: `x* = 1/(2C − 1)`.
    Linear,
    /// `r = 2`: root of the quadratic.
    Quadratic,
    /// Bisection-guarded Newton iteration.
    Newton { iterations: usize },
}

impl SolveMethod {
    pub fn label(&self) -> &'static str {
        match self {
            SolveMethod::Linear => "closed-form-linear",
            SolveMethod::Quadratic => "closed-form-quadratic",
            SolveMethod::Newton { .. } => "newton-bisection",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationResult<T> {
    pub x_star: T,
    pub alpha: T,
    pub class_count: usize,
    pub exponent: T,
    pub residual: T,
    pub method: SolveMethod,
}

/// `g(x) = (1 − p) x^r + x − p`.
pub fn steady_state_residual<T: Scalar>(prior: T, r: T, x: T) -> T {
    (T::one() - prior) * x.powf(r) + x - prior
}

fn residual_derivative<T: Scalar>(prior: T, r: T, x: T) -> T {
    (T::one() - prior) * r * x.powf(r - T::one()) + T::one()
}

fn check_classes(classes: usize) -> Result<()> {
    if classes < 2 {
        return Err(TalError::CalibrationDomain(format!(
            "class count {classes} below 2 (g(1) = 2(1 - 1/C) must be positive)"
        )));
    }
    Ok(())
}

/// Solves for `(x*, α)` given `C ≥ 2` and `r ≥ 1`.
pub fn solve_calibration<T: Scalar>(classes: usize, r: T) -> Result<CalibrationResult<T>> {
    solve_with(classes, Exponent::new(r)?)
}

/// Same as [`solve_calibration`] but admits `0 < r < 1` for the ablation grid.
pub fn solve_calibration_relaxed<T: Scalar>(classes: usize, r: T) -> Result<CalibrationResult<T>> {
    solve_with(classes, Exponent::relaxed(r)?)
}

pub(crate) fn solve_with<T: Scalar>(classes: usize, exponent: Exponent<T>) -> Result<CalibrationResult<T>> {
    check_classes(classes)?;
    let r = exponent.value();
    let c = T::from_count(classes);
    let prior = T::one() / c;
    let (x_star, alpha, method) = if r == T::one() {
        let two_c_minus_one = T::lit(2.0) * c - T::one();
        (T::one() / two_c_minus_one, two_c_minus_one, SolveMethod::Linear)
    } else if r == T::lit(2.0) {
        // Rationalized root of (1 − p)x² + x − p; avoids cancellation for large C.
        let disc = T::one() + T::lit(4.0) * prior * (T::one() - prior);
        let x = T::lit(2.0) * prior / (T::one() + disc.sqrt());
        let half_sum = (c + (c * c + T::lit(4.0) * c - T::lit(4.0)).sqrt()) / T::lit(2.0);
        (x, half_sum * half_sum, SolveMethod::Quadratic)
    } else {
        let (x, iterations) = bracketed_newton(prior, r)?;
        (x, T::one() / x.powf(r), SolveMethod::Newton { iterations })
    };
    Ok(CalibrationResult {
        x_star,
        alpha,
        class_count: classes,
        exponent: r,
        residual: steady_state_residual(prior, r, x_star),
        method,
    })
}

/// Numeric root for any `r`, bypassing the closed forms.
pub fn solve_calibration_numeric<T: Scalar>(classes: usize, r: T) -> Result<CalibrationResult<T>> {
    check_classes(classes)?;
    let r = Exponent::relaxed(r)?.value();
    let prior = T::one() / T::from_count(classes);
    let (x_star, iterations) = bracketed_newton(prior, r)?;
    Ok(CalibrationResult {
        x_star,
        alpha: T::one() / x_star.powf(r),
        class_count: classes,
        exponent: r,
        residual: steady_state_residual(prior, r, x_star),
        method: SolveMethod::Newton { iterations },
    })
}

/// Steady state for an arbitrary positive prior `p ∈ (0, 1)`.
pub fn solve_steady_state<T: Scalar>(prior: T, r: T) -> Result<T> {
    if !(prior > T::zero() && prior < T::one()) {
        return Err(TalError::CalibrationDomain(format!("prior {prior} outside (0, 1)")));
    }
    bracketed_newton(prior, r).map(|(x, _)| x)
}

/// Newton from `x⁰ = p`, kept inside a sign-change bracket; steps that leave
/// the bracket are replaced by the midpoint.
fn bracketed_newton<T: Scalar>(prior: T, r: T) -> Result<(T, usize)> {
    let tol = T::solver_tolerance();
    let (mut lo, mut hi) = (T::zero(), T::one());
    let mut x = prior;
    let mut g = steady_state_residual(prior, r, x);
    for iteration in 1..=MAX_ITERATIONS {
        if g.abs() < tol {
            return Ok((x, iteration - 1));
        }
        if g < T::zero() {
            lo = x;
        } else {
            hi = x;
        }
        let step = x - g / residual_derivative(prior, r, x);
        x = if step > lo && step < hi { step } else { (lo + hi) / T::lit(2.0) };
        g = steady_state_residual(prior, r, x);
        if hi - lo <= T::epsilon() * hi {
            // Bracket collapsed to adjacent floats; the closer endpoint is the best available.
            return Ok((x, iteration));
        }
    }
    if g.abs() < tol {
        return Ok((x, MAX_ITERATIONS));
    }
    Err(TalError::NonConvergence {
        iterations: MAX_ITERATIONS,
        residual: g.to_f64().unwrap_or(f64::NAN),
    })
}

/// `α · w(x* Q_max)` evaluated through the loss's negative-weight path.
/// Equals one whenever calibration and the loss agree.
pub fn degeneracy_check<T: Scalar>(classes: usize, r: T) -> Result<T> {
    let calibration = solve_calibration(classes, r)?;
    let kernel = MemoryKernel::new(T::lit(0.9))?;
    let config = TalConfig::new(kernel, r, classes, T::lit(crate::loss::DEFAULT_EPSILON))?;
    let q = QState::from_values(vec![calibration.x_star * kernel.q_max(); classes])?;
    Ok(config.negative_weights(&q)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Plain bisection on g, independent of the solver under test.
    fn bisect(classes: usize, r: f64) -> f64 {
        let p = 1.0 / classes as f64;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (1.0 - p) * mid.powf(r) + mid - p < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn linear_case_ten_classes() {
        let c = solve_calibration(10, 1.0f64).unwrap();
        assert!((c.x_star - 1.0 / 19.0).abs() < 1e-15);
        assert_eq!(c.alpha, 19.0);
        assert_eq!(c.method, SolveMethod::Linear);
    }

    #[test]
    fn quadratic_case_two_classes() {
        let c = solve_calibration(2, 2.0f64).unwrap();
        let expected = 2f64.sqrt() - 1.0;
        assert!((c.x_star - expected).abs() < 1e-15);
        assert!((c.alpha - (3.0 + 2.0 * 2f64.sqrt())).abs() < 1e-12);
        assert!((c.x_star - bisect(2, 2.0)).abs() < 1e-14);
    }

    #[test]
    fn general_exponent_matches_bisection() {
        for &(classes, r) in &[(100usize, 5.0f64), (3, 3.5), (7, 1.5), (1000, 10.0), (2, 1.01)] {
            let c = solve_calibration(classes, r).unwrap();
            assert!(c.residual.abs() < 1e-12, "{classes} {r}: {}", c.residual);
            assert!((c.x_star - bisect(classes, r)).abs() < 1e-13);
            assert!((c.alpha * c.x_star.powf(r) - 1.0).abs() < 1e-12);
            assert!(c.x_star > 0.0 && c.x_star < 1.0);
        }
    }

    #[test]
    fn rejects_bad_domain() {
        assert!(matches!(solve_calibration(1, 1.0f64), Err(TalError::CalibrationDomain(_))));
        assert!(matches!(solve_calibration(10, 0.5f64), Err(TalError::CalibrationDomain(_))));
        assert!(solve_calibration_relaxed(10, 0.5f64).is_ok());
    }

    #[test]
    fn closed_and_numeric_agree() {
        for classes in (2..=1000).step_by(37) {
            for &r in &[1.0f64, 2.0] {
                let a = solve_calibration(classes, r).unwrap();
                let b = solve_calibration_numeric(classes, r).unwrap();
                assert!((a.x_star - b.x_star).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn x_star_decreases_with_class_count() {
        for &r in &[1.0f64, 2.0, 3.5] {
            let xs: Vec<f64> = (2..200).map(|c| solve_calibration(c, r).unwrap().x_star).collect();
            assert!(xs.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn general_prior_steady_state() {
        let x = solve_steady_state(0.3f64, 1.0).unwrap();
        assert!((x - 0.3 / 1.7).abs() < 1e-14);
        assert!(solve_steady_state(1.0f64, 1.0).is_err());
    }

    #[test]
    fn degeneracy_probe_is_one() {
        for &(classes, r) in &[(10usize, 1.0f64), (7, 2.0), (3, 3.5)] {
            assert!((degeneracy_check(classes, r).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_precision() {
        let c = solve_calibration(10, 3.0f32).unwrap();
        assert!(c.residual.abs() < 1e-5);
    }
}
