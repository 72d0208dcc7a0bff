//! Numerical gradient checking via central finite differences.
//!
//! These helpers exist so gradient tests and examples share one oracle
//! instead of each hand-rolling perturbation loops.

use crate::error::Result;
use crate::tensorcore::Tensor;

/// Step size used by the test suites. Central differences at this step
/// leave truncation error far below the comparison tolerance.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Tolerance on [`relative_error`] accepted by the gradient checks.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Central-difference gradient of a scalar function at `x`.
///
/// `f` is evaluated at `2 * rows * cols` perturbed points; it must be a
/// pure function of its argument.
pub fn finite_difference<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let mut grad = Tensor::zeros(x.rows(), x.cols());
    let mut probe = x.detach();
    for i in 0..x.data().len() {
        let base = probe.data()[i];
        probe.data_mut()[i] = base + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = base - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = base;
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Worst entry-wise discrepancy `|a - n| / max(|a|, |n|, 1)`.
///
/// The floor of 1 in the denominator turns the measure into absolute
/// error for small gradients, where true relative error is meaningless.
pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        let denom = a.abs().max(n.abs()).max(1.0);
        worst = worst.max((a - n).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_a_hand_differentiated_quadratic() {
        // f(x) = sum(x^2), df/dx = 2x.
        let x = Tensor::from_vec(2, 2, vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let fd = finite_difference(|t| Ok(t.data().iter().map(|v| v * v).sum()), &x, DEFAULT_STEP).unwrap();
        let mut analytic = x.detach();
        for v in analytic.data_mut() {
            *v *= 2.0;
        }
        assert!(relative_error(&analytic, &fd) < 1e-9);
    }

    #[test]
    fn relative_error_floors_the_denominator() {
        let a = Tensor::from_vec(1, 1, vec![1e-7]).unwrap();
        let n = Tensor::from_vec(1, 1, vec![0.0]).unwrap();
        assert!((relative_error(&a, &n) - 1e-7).abs() < 1e-20);
    }
}
