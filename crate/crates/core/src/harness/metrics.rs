//! Reconstruction quality metrics.

use ndarray::Array1;

/// Mean squared error per coordinate.
pub fn mse(xhat: &Array1<f64>, x0: &Array1<f64>) -> f64 {
    assert_eq!(xhat.len(), x0.len(), "mse inputs must have equal length");
    let diff = xhat - x0;
    diff.dot(&diff) / x0.len() as f64
}

/// Peak signal-to-noise ratio in decibels; identical inputs report `+∞`.
pub fn psnr(xhat: &Array1<f64>, x0: &Array1<f64>, peak: f64) -> f64 {
    let e = mse(xhat, x0);
    if e == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (peak * peak / e).log10()
}
