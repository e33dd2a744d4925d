//! Shared oracles for the integration suite.
//!
//! Everything here recomputes expected values through routes the library does
//! not use: Gauss–Jordan elimination instead of spectral factors, Cartesian
//! grid quadrature instead of radial quadrature, finite differences instead
//! of closed-form posterior means. Tests compare the two routes.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

/// Solves `a·x = b` by Gauss–Jordan elimination with partial pivoting.
/// Panics on singular systems (test inputs are well conditioned).
pub fn gauss_jordan_solve(a: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    assert_eq!(n, b.len());
    let mut m = Array2::<f64>::zeros((n, n + 1));
    for i in 0..n {
        for j in 0..n {
            m[[i, j]] = a[[i, j]];
        }
        m[[i, n]] = b[i];
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[[i, col]].abs().total_cmp(&m[[j, col]].abs()))
            .unwrap();
        assert!(m[[pivot, col]].abs() > 1e-300, "singular system in oracle");
        if pivot != col {
            for j in 0..=n {
                let tmp = m[[col, j]];
                m[[col, j]] = m[[pivot, j]];
                m[[pivot, j]] = tmp;
            }
        }
        let p = m[[col, col]];
        for j in 0..=n {
            m[[col, j]] /= p;
        }
        for i in 0..n {
            if i != col {
                let f = m[[i, col]];
                if f != 0.0 {
                    for j in 0..=n {
                        m[[i, j]] -= f * m[[col, j]];
                    }
                }
            }
        }
    }
    Array1::from_shape_fn(n, |i| m[[i, n]])
}

/// Minimizer of `data_w·‖y − a·x‖² + Σᵢ wᵢ·‖x − μᵢ‖²` computed densely:
/// `(data_w·aᵀa + Σwᵢ·I)·x = data_w·aᵀy + Σwᵢ·μᵢ`.
pub fn dense_map_solve(
    a: &Array2<f64>,
    y: &Array1<f64>,
    data_w: f64,
    priors: &[(f64, Array1<f64>)],
) -> Array1<f64> {
    let d = a.ncols();
    let mut lhs = a.t().dot(a) * data_w;
    let mut rhs = a.t().dot(y) * data_w;
    for (w, mu) in priors {
        for i in 0..d {
            lhs[[i, i]] += w;
            rhs[i] += w * mu[i];
        }
    }
    gauss_jordan_solve(&lhs, &rhs)
}

/// Standard normal density.
pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let z = x - mean;
    (-z * z / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Standard normal CDF via the error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Posterior mean and total variance of a complex scalar `z ~ CN(z̄, ν_z)`
/// observed through `y = |z| + N(0, σ_y²)`, by brute-force quadrature on a
/// Cartesian grid over the complex plane. Deliberately ignores the radial
/// structure the library exploits.
pub fn cartesian_magnitude_moments(
    y: f64,
    zbar: C64,
    nu_z: f64,
    sigma_y2: f64,
) -> (C64, f64) {
    let s = (nu_z / 2.0).sqrt(); // per-coordinate prior std
    let reach = zbar.norm() + y.abs() + 8.0 * s + 8.0 * sigma_y2.sqrt();
    let n = 1201usize;
    let step = 2.0 * reach / (n - 1) as f64;
    let mut w_sum = 0.0;
    let mut m_re = 0.0;
    let mut m_im = 0.0;
    let mut second = 0.0;
    for i in 0..n {
        let re = -reach + step * i as f64;
        let pr = normal_pdf(re, zbar.re, nu_z / 2.0);
        if pr < 1e-300 {
            continue;
        }
        for j in 0..n {
            let im = -reach + step * j as f64;
            let pi = normal_pdf(im, zbar.im, nu_z / 2.0);
            if pi < 1e-300 {
                continue;
            }
            let mag = (re * re + im * im).sqrt();
            let like = normal_pdf(y, mag, sigma_y2);
            let w = pr * pi * like;
            w_sum += w;
            m_re += w * re;
            m_im += w * im;
            second += w * (re * re + im * im);
        }
    }
    assert!(w_sum > 0.0, "magnitude oracle grid missed the posterior mass");
    let mean = C64::new(m_re / w_sum, m_im / w_sum);
    let var = second / w_sum - mean.norm_sqr();
    (mean, var.max(0.0))
}

/// Posterior mean and variance of `z ~ N(z̄, ν_z)` given that `z + N(0, σ_y²)`
/// landed in `[lo, hi)`, by 1-D grid quadrature with the interval likelihood
/// expressed through the normal CDF.
pub fn grid_dequant_moments(
    lo: f64,
    hi: f64,
    zbar: f64,
    nu_z: f64,
    sigma_y2: f64,
) -> (f64, f64) {
    let s = nu_z.sqrt();
    let sy = sigma_y2.sqrt();
    let left = (zbar - 10.0 * s).min(lo - 10.0 * sy);
    let right = (zbar + 10.0 * s).max(hi + 10.0 * sy);
    let n = 200_001usize;
    let step = (right - left) / (n - 1) as f64;
    let mut w_sum = 0.0;
    let mut mean = 0.0;
    let mut second = 0.0;
    for i in 0..n {
        let z = left + step * i as f64;
        let prior = normal_pdf(z, zbar, nu_z);
        let like = if sy > 0.0 {
            normal_cdf((hi - z) / sy) - normal_cdf((lo - z) / sy)
        } else if z >= lo && z < hi {
            1.0
        } else {
            0.0
        };
        let w = prior * like;
        w_sum += w;
        mean += w * z;
        second += w * z * z;
    }
    assert!(w_sum > 0.0, "dequantization oracle grid missed the posterior mass");
    mean /= w_sum;
    ((mean), (second / w_sum - mean * mean).max(0.0))
}

/// Log marginal density of `r = x + N(0, σ²I)` per coordinate group, for a
/// scalar mixture prior with the given weights, per-coordinate means, and
/// per-component variances. `r` and the component means live in the same
/// d-dimensional space; components are isotropic.
pub fn mixture_log_marginal(
    r: &Array1<f64>,
    weights: &[f64],
    means: &[Array1<f64>],
    variances: &[f64],
    sigma2: f64,
) -> f64 {
    let d = r.len() as f64;
    let mut terms: Vec<f64> = Vec::with_capacity(weights.len());
    for ((w, mu), v) in weights.iter().zip(means).zip(variances) {
        let tot = v + sigma2;
        let diff = r - mu;
        let quad = diff.dot(&diff) / tot;
        terms.push(w.ln() - 0.5 * quad - 0.5 * d * (2.0 * std::f64::consts::PI * tot).ln());
    }
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Gradient of [`mixture_log_marginal`] in `r` by central differences.
pub fn numeric_log_marginal_grad(
    r: &Array1<f64>,
    weights: &[f64],
    means: &[Array1<f64>],
    variances: &[f64],
    sigma2: f64,
) -> Array1<f64> {
    let h = 1e-5;
    let mut grad = Array1::zeros(r.len());
    let mut probe = r.clone();
    for i in 0..r.len() {
        probe[i] = r[i] + h;
        let up = mixture_log_marginal(&probe, weights, means, variances, sigma2);
        probe[i] = r[i] - h;
        let dn = mixture_log_marginal(&probe, weights, means, variances, sigma2);
        probe[i] = r[i];
        grad[i] = (up - dn) / (2.0 * h);
    }
    grad
}

/// Mean squared difference per coordinate.
pub fn mse(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a - b;
    diff.dot(&diff) / a.len() as f64
}

/// Relative L2 distance `‖a − b‖ / ‖b‖`.
pub fn rel_l2(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let diff = a - b;
    diff.dot(&diff).sqrt() / b.dot(b).sqrt().max(1e-300)
}

/// Sample mean of a slice.
pub fn sample_mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance of a slice.
pub fn sample_var(xs: &[f64]) -> f64 {
    let m = sample_mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}
