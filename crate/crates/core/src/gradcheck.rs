//! Finite-difference verification of analytic gradients.
//!
//! `grad_check` perturbs one coordinate at a time and compares the central
//! difference (f(x+h) - f(x-h)) / 2h against the supplied analytic gradient.
//! Callers are responsible for staying away from non-differentiable points
//! (relu kinks, max-pool ties); the check itself assumes smoothness.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default perturbation used across the test suites.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Maximum over coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
pub fn grad_check<F>(f: F, point: &Tensor, analytic: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    if analytic.len() != point.numel() {
        return Err(Error::ShapeMismatch {
            op: "grad_check",
            expected: format!("{} gradient entries", point.numel()),
            got: format!("{}", analytic.len()),
        });
    }
    if let Some(i) = analytic.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            op: "grad_check",
            detail: format!("analytic gradient entry {i} is {}", analytic[i]),
        });
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::invalid(format!("grad_check: bad step {step}")));
    }

    let mut max_rel = 0.0f64;
    let mut x = point.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + step;
        let fp = f(&x)?;
        x.data_mut()[i] = orig - step;
        let fm = f(&x)?;
        x.data_mut()[i] = orig;
        let numeric = (fp - fm) / (2.0 * step);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        // f(x) = sum x^2, df/dx = 2x
        let point = Tensor::new(&[4], vec![0.5, -1.25, 2.0, 3.75]).unwrap();
        let analytic: Vec<f64> = point.data().iter().map(|&v| 2.0 * v).collect();
        let err = grad_check(
            |x| Ok(x.data().iter().map(|v| v * v).sum()),
            &point,
            &analytic,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-7, "relative error {err}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let point = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let err = grad_check(
            |x| Ok(x.data().iter().map(|v| v * v).sum()),
            &point,
            &[2.0, 3.0], // true gradient is [2, 4]
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err > 0.1);
    }

    #[test]
    fn non_finite_analytic_rejected() {
        let point = Tensor::zeros(&[2]);
        let res = grad_check(|_| Ok(0.0), &point, &[f64::NAN, 0.0], DEFAULT_STEP);
        assert!(matches!(res, Err(Error::NonFinite { .. })));
    }
}
