use crate::error::{Error, Result};
use crate::scalar::Real;

/// Compares an analytic gradient to central differences.
///
/// Returns `max_i |g_analytic - g_fd| / max(1, |g_fd|)`. `step` must lie in
/// `[1e-7, 1e-3]`.
pub fn gradient_check<T, F, G>(f: F, grad: G, point: &[T], step: T) -> Result<T>
where
    T: Real,
    F: Fn(&[T]) -> T,
    G: Fn(&[T]) -> Vec<T>,
{
    if !(step >= T::c(1e-7) && step <= T::c(1e-3)) {
        return Err(Error::precondition(format!(
            "finite-difference step {step} outside [1e-7, 1e-3]"
        )));
    }
    let analytic = grad(point);
    if analytic.len() != point.len() {
        return Err(Error::DimensionMismatch {
            expected: point.len(),
            found: analytic.len(),
        });
    }
    let mut x = point.to_vec();
    let mut worst = T::zero();
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let fp = f(&x);
        x[i] = orig - step;
        let fm = f(&x);
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::EvaluationFailed(format!(
                "non-finite value near coordinate {i}"
            )));
        }
        let fd = (fp - fm) / (T::c(2.0) * step);
        let err = (analytic[i] - fd).abs() / fd.abs().max(T::one());
        if err > worst || err.is_nan() {
            worst = err;
        }
    }
    Ok(worst)
}
