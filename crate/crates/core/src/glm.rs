//! Nonlinear measurement channels and the expectation-propagation step that
//! converts them into pseudo-Gaussian measurements `ȳ = Ax + N(0, σ̄_y²)`.
//!
//! Each outer iteration forms a Gaussian prior `z ~ N(Ax̄, ν̄_z)` on the
//! noiseless channel input, computes per-entry posterior moments under the
//! actual channel, and maps the posterior back to an extrinsic Gaussian
//! pseudo-measurement. The standard linear solver then runs unchanged.

use ndarray::Array1;

use crate::error::{FireError, Result};
use crate::fire::{estimate_nu, solve_decrease_renoise, FireSettings, NuMode};
use crate::operators::{LinearOperator, C64};
use crate::priors::{stochastic_denoise, Denoiser};
use crate::record::{GlmRow, IterRow, TruthRow};
use crate::rng::{standard_normal_vec, RngStream};

/// Multiplicative clamp keeping the posterior variance strictly below the
/// prior variance so the extrinsic noise level stays finite.
const EXTRINSIC_CLAMP: f64 = 1e-6;
/// Relative floor on the averaged posterior variance.
const POSTERIOR_VAR_REL_FLOOR: f64 = 1e-12;

/// A scalar measurement entry: one real coordinate or one complex pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EntryValue {
    Real(f64),
    Complex(C64),
}

/// Per-entry observation model for `y_j` given the noiseless channel input
/// `z_j`. Variances are totals per entry (both real coordinates combined in
/// the complex case).
#[derive(Debug, Clone)]
pub enum MeasurementChannel {
    /// `y_j = z_j + N(0, σ_y²)`.
    Gaussian { sigma_y2: f64 },
    /// `y_j = |z_j| + N(0, σ_y²)` with complex `z_j`.
    Magnitude { sigma_y2: f64 },
    /// `y_j = bin index of (z_j + N(0, σ_y²))` against `edges`; entry `b`
    /// means the perturbed value fell in `[edges[b], edges[b+1])`.
    Dequantization { edges: Vec<f64>, sigma_y2: f64 },
}

impl MeasurementChannel {
    pub fn validate(&self, op: &LinearOperator) -> Result<()> {
        match self {
            MeasurementChannel::Gaussian { sigma_y2 } => {
                if !(*sigma_y2 >= 0.0) {
                    return Err(FireError::Config("gaussian channel needs sigma_y2 >= 0".into()));
                }
            }
            MeasurementChannel::Magnitude { sigma_y2 } => {
                if !(*sigma_y2 > 0.0) {
                    return Err(FireError::Config("magnitude channel needs sigma_y2 > 0".into()));
                }
                if !op.complex_output() {
                    return Err(FireError::Config(
                        "magnitude channel requires complex measurement entries".into(),
                    ));
                }
            }
            MeasurementChannel::Dequantization { edges, sigma_y2 } => {
                if !(*sigma_y2 >= 0.0) {
                    return Err(FireError::Config(
                        "dequantization channel needs sigma_y2 >= 0".into(),
                    ));
                }
                if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(FireError::Config(
                        "dequantization edges must be strictly increasing with >= 2 entries"
                            .into(),
                    ));
                }
                if op.complex_output() {
                    return Err(FireError::Config(
                        "dequantization channel requires real measurement entries".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Number of stored values per measurement entry in the observation
    /// vector (complex Gaussian observations are interleaved).
    fn observed_len(&self, op: &LinearOperator) -> usize {
        match self {
            MeasurementChannel::Gaussian { .. } => op.output_dim(),
            MeasurementChannel::Magnitude { .. } => op.measurement_entries(),
            MeasurementChannel::Dequantization { .. } => op.output_dim(),
        }
    }

    /// Posterior mean and total variance of `z_j ~ prior N(z̄_j, ν_z)` given
    /// the observed `y_j`. `laplace` selects the fast approximate moments for
    /// channels that otherwise need quadrature.
    pub fn posterior_moments(
        &self,
        y_j: EntryValue,
        zbar_j: EntryValue,
        nu_z: f64,
        laplace: bool,
    ) -> Result<(EntryValue, f64)> {
        if !(nu_z > 0.0) {
            return Err(FireError::ContractViolation("channel prior variance must be positive".into()));
        }
        match (self, zbar_j, y_j) {
            (MeasurementChannel::Gaussian { sigma_y2 }, EntryValue::Real(zb), EntryValue::Real(y)) => {
                let (m, v) = gaussian_moments_real(y, zb, nu_z, *sigma_y2);
                Ok((EntryValue::Real(m), v))
            }
            (
                MeasurementChannel::Gaussian { sigma_y2 },
                EntryValue::Complex(zb),
                EntryValue::Complex(y),
            ) => {
                // Same conjugate update on each coordinate; variances are
                // totals so the scalar weights carry over unchanged.
                if *sigma_y2 == 0.0 {
                    return Ok((EntryValue::Complex(y), 0.0));
                }
                let v = 1.0 / (1.0 / nu_z + 1.0 / sigma_y2);
                let m = (y / *sigma_y2 + zb / nu_z) * v;
                Ok((EntryValue::Complex(m), v))
            }
            (
                MeasurementChannel::Magnitude { sigma_y2 },
                EntryValue::Complex(zb),
                EntryValue::Real(y),
            ) => {
                let (m, v) = if laplace {
                    magnitude_moments_laplace(y, zb, nu_z, *sigma_y2)
                } else {
                    magnitude_moments_quadrature(y, zb, nu_z, *sigma_y2)
                };
                Ok((EntryValue::Complex(m), v))
            }
            (
                MeasurementChannel::Dequantization { edges, sigma_y2 },
                EntryValue::Real(zb),
                EntryValue::Real(y),
            ) => {
                let bin = y.round();
                if !(bin >= 0.0) || bin as usize + 1 >= edges.len() || (y - bin).abs() > 1e-9 {
                    return Err(FireError::ContractViolation(format!(
                        "dequantization observation {y} is not a valid bin index"
                    )));
                }
                let b = bin as usize;
                let (m, v) =
                    truncated_gaussian_moments(zb, nu_z, *sigma_y2, edges[b], edges[b + 1]);
                Ok((EntryValue::Real(m), v))
            }
            _ => Err(FireError::ContractViolation(
                "channel and measurement entry kinds do not match".into(),
            )),
        }
    }
}

fn gaussian_moments_real(y: f64, zbar: f64, nu_z: f64, sigma_y2: f64) -> (f64, f64) {
    if sigma_y2 == 0.0 {
        return (y, 0.0);
    }
    let v = 1.0 / (1.0 / nu_z + 1.0 / sigma_y2);
    ((y / sigma_y2 + zbar / nu_z) * v, v)
}

/// Posterior mean and variance of `z ~ N(zbar, nu_z)` observed through a
/// noisy quantizer reporting `z + N(0, σ_y²) ∈ [lo, hi]`. Closed form via the
/// joint-Gaussian reduction to a truncated normal on the perturbed value.
pub fn truncated_gaussian_moments(
    zbar: f64,
    nu_z: f64,
    sigma_y2: f64,
    lo: f64,
    hi: f64,
) -> (f64, f64) {
    let s2 = nu_z + sigma_y2;
    let s = s2.sqrt();
    let alpha = (lo - zbar) / s;
    let beta = (hi - zbar) / s;
    let z_mass = phi_interval(alpha, beta);
    if !(z_mass > 0.0) || !z_mass.is_finite() {
        // Observation is in an extreme tail: collapse to the nearest edge.
        let target = if lo.is_finite() && zbar < lo {
            lo
        } else if hi.is_finite() && zbar > hi {
            hi
        } else {
            zbar
        };
        return (target, nu_z * POSTERIOR_VAR_REL_FLOOR);
    }
    let pdf_a = std_normal_pdf(alpha);
    let pdf_b = std_normal_pdf(beta);
    let ratio1 = (pdf_a - pdf_b) / z_mass;
    let a_term = if alpha.is_finite() { alpha * pdf_a } else { 0.0 };
    let b_term = if beta.is_finite() { beta * pdf_b } else { 0.0 };
    let ratio2 = (a_term - b_term) / z_mass;
    let mean = zbar + nu_z * ratio1 / s;
    let var = nu_z + nu_z * nu_z * (ratio2 - ratio1 * ratio1) / s2;
    (mean, var.max(0.0))
}

fn std_normal_pdf(x: f64) -> f64 {
    if !x.is_finite() {
        return 0.0;
    }
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `Φ(b) − Φ(a)` evaluated in whichever tail keeps the difference accurate.
fn phi_interval(a: f64, b: f64) -> f64 {
    let sqrt2 = std::f64::consts::SQRT_2;
    if a >= 0.0 {
        0.5 * (libm::erfc(a / sqrt2) - libm::erfc(b / sqrt2))
    } else if b <= 0.0 {
        0.5 * (libm::erfc(-b / sqrt2) - libm::erfc(-a / sqrt2))
    } else {
        0.5 * (libm::erf(b / sqrt2) - libm::erf(a / sqrt2))
    }
}

/// `ln I₀(x)` for x ≥ 0 via the standard polynomial fits (absolute error
/// below 2e-7 in the scaled function).
pub fn log_i0(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < 3.75 {
        let t = (x / 3.75) * (x / 3.75);
        let p = 1.0
            + t * (3.5156229
                + t * (3.0899424
                    + t * (1.2067492 + t * (0.2659732 + t * (0.0360768 + t * 0.0045813)))));
        p.ln()
    } else {
        let t = 3.75 / x;
        let p = 0.39894228
            + t * (0.01328592
                + t * (0.00225319
                    + t * (-0.00157565
                        + t * (0.00916281
                            + t * (-0.02057706
                                + t * (0.02635537 + t * (-0.01647633 + t * 0.00392377)))))));
        x - 0.5 * x.ln() + p.ln()
    }
}

/// `I₁(x)/I₀(x)` for x ≥ 0; monotone from 0 to 1.
pub fn i1_over_i0(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < 3.75 {
        let t = (x / 3.75) * (x / 3.75);
        let p1 = 0.5
            + t * (0.87890594
                + t * (0.51498869
                    + t * (0.15084934 + t * (0.02658733 + t * (0.00301532 + t * 0.00032411)))));
        let p0 = 1.0
            + t * (3.5156229
                + t * (3.0899424
                    + t * (1.2067492 + t * (0.2659732 + t * (0.0360768 + t * 0.0045813)))));
        x * p1 / p0
    } else {
        let t = 3.75 / x;
        let p1 = 0.39894228
            + t * (-0.03988024
                + t * (-0.00362018
                    + t * (0.00163801
                        + t * (-0.01031555
                            + t * (0.02282967
                                + t * (-0.02895312 + t * (0.01787654 - t * 0.00420059)))))));
        let p0 = 0.39894228
            + t * (0.01328592
                + t * (0.00225319
                    + t * (-0.00157565
                        + t * (0.00916281
                            + t * (-0.02057706
                                + t * (0.02635537 + t * (-0.01647633 + t * 0.00392377)))))));
        p1 / p0
    }
}

const MAGNITUDE_QUAD_POINTS: usize = 501;
const MAGNITUDE_QUAD_WIDTHS: f64 = 8.0;

/// Posterior moments of a complex `z ~ CN(zbar, nu_z)` given `y = |z| + noise`
/// by quadrature over the radial coordinate. The angular integral is
/// analytic, leaving a smooth one-dimensional weight.
pub fn magnitude_moments_quadrature(y: f64, zbar: C64, nu_z: f64, sigma_y2: f64) -> (C64, f64) {
    let r = zbar.norm();
    let b = 2.0 * r / nu_z;
    // Curvature of the radial log-density near its peak sets the grid scale.
    let h_rr = 2.0 / nu_z + 1.0 / sigma_y2;
    let width = h_rr.sqrt().recip();
    let rho_star = (b + y / sigma_y2) / h_rr;
    let lo = (rho_star - MAGNITUDE_QUAD_WIDTHS * width).max(0.0);
    let hi = rho_star.max(0.0) + MAGNITUDE_QUAD_WIDTHS * width;
    let n = MAGNITUDE_QUAD_POINTS;
    let step = (hi - lo) / (n - 1) as f64;

    // log weight up to a constant: ln ρ − ρ²/ν − (y−ρ)²/(2σ²) + ln I₀(bρ)
    let mut logs = Vec::with_capacity(n);
    let mut max_log = f64::NEG_INFINITY;
    for i in 0..n {
        let rho = lo + step * i as f64;
        let lw = if rho <= 0.0 {
            f64::NEG_INFINITY
        } else {
            rho.ln() - rho * rho / nu_z - (y - rho) * (y - rho) / (2.0 * sigma_y2)
                + log_i0(b * rho)
        };
        if lw > max_log {
            max_log = lw;
        }
        logs.push(lw);
    }
    if !max_log.is_finite() {
        return (zbar, nu_z * POSTERIOR_VAR_REL_FLOOR);
    }
    let mut z0 = 0.0; // ∫ w
    let mut z1 = 0.0; // ∫ ρ (I₁/I₀)(bρ) w  — radial part of E[z]
    let mut z2 = 0.0; // ∫ ρ² w             — E|z|²
    for (i, lw) in logs.iter().enumerate() {
        let w0 = (lw - max_log).exp();
        if w0 == 0.0 {
            continue;
        }
        let trap = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        let rho = lo + step * i as f64;
        let w = w0 * trap;
        z0 += w;
        z1 += w * rho * i1_over_i0(b * rho);
        z2 += w * rho * rho;
    }
    if z0 <= 0.0 {
        return (zbar, nu_z * POSTERIOR_VAR_REL_FLOOR);
    }
    let mean_radial = z1 / z0;
    let second = z2 / z0;
    let dir = if r > 0.0 { zbar / r } else { C64::new(0.0, 0.0) };
    let mean = dir * mean_radial;
    let var = (second - mean_radial * mean_radial).max(0.0);
    (mean, var)
}

/// Fast approximate magnitude moments: a Gaussian fit of the posterior at its
/// polar-coordinate mode, accurate at moderate to high signal-to-noise.
pub fn magnitude_moments_laplace(y: f64, zbar: C64, nu_z: f64, sigma_y2: f64) -> (C64, f64) {
    let r = zbar.norm();
    if r == 0.0 {
        // No phase information: the mean is zero and the spread is set by the
        // radial fit alone.
        return magnitude_moments_quadrature(y, zbar, nu_z, sigma_y2);
    }
    let h_rr = 2.0 / nu_z + 1.0 / sigma_y2;
    let rho_star = ((2.0 * r / nu_z + y / sigma_y2) / h_rr).max(1e-12 * (r + nu_z.sqrt()));
    // Angular curvature at the mode; clamp to keep the fit positive when the
    // observation pulls the radius inward.
    let h_tt = (2.0 * r / (nu_z * rho_star) - (y - rho_star) / (rho_star * sigma_y2))
        .max(2.0 / (nu_z * 10.0));
    let var = 1.0 / h_rr + 1.0 / h_tt;
    let mean = zbar / r * rho_star;
    (mean, var.min(nu_z * (1.0 - EXTRINSIC_CLAMP)))
}

/// Squared-magnitude measurement with intensity-proportional noise:
/// `y_j = sqrt(max(0, |z_j|² + w_j))` with `w_j ~ N(0, α²|z_j|²)`.
pub fn shot_noise_measure(
    z_interleaved: &Array1<f64>,
    alpha: f64,
    rng: &mut RngStream,
) -> Array1<f64> {
    let m_ch = z_interleaved.len() / 2;
    let eps = standard_normal_vec(m_ch, rng);
    Array1::from_shape_fn(m_ch, |j| {
        let zsq = z_interleaved[2 * j] * z_interleaved[2 * j]
            + z_interleaved[2 * j + 1] * z_interleaved[2 * j + 1];
        (zsq + alpha * zsq.sqrt() * eps[j]).max(0.0).sqrt()
    })
}

/// Effective additive noise level on magnitudes implied by shot noise:
/// linearizing `sqrt(|z|² + w)` with `w ~ N(0, α²|z|²)` gives
/// `y ≈ |z| + w/(2|z|)`, whose standard deviation is `α/2` regardless of the
/// signal level.
pub fn magnitude_noise_from_shot(alpha: f64) -> f64 {
    alpha * alpha / 4.0
}

/// Outcome of one expectation-propagation pass over the channel.
pub struct ExtrinsicResult {
    /// Pseudo-measurements in the operator's real output embedding.
    pub ybar: Array1<f64>,
    /// Per-entry pseudo-noise total variance.
    pub sigma_y_bar2: f64,
    pub nu_z_bar: f64,
    pub nu_z_hat: f64,
    /// Whether the posterior-variance clamp engaged.
    pub clamped: bool,
}

/// Converts channel observations into Gaussian pseudo-measurements around the
/// current prediction `z̄ = Ax̄` with entrywise prior variance `ν̄_z`.
pub fn ep_extrinsic(
    y: &Array1<f64>,
    op: &LinearOperator,
    zbar: &Array1<f64>,
    nu_z_bar: f64,
    channel: &MeasurementChannel,
    laplace: bool,
) -> Result<ExtrinsicResult> {
    let m_ch = op.measurement_entries();
    if y.len() != channel.observed_len(op) {
        return Err(FireError::DimensionMismatch(format!(
            "channel observation length {} does not match expected {}",
            y.len(),
            channel.observed_len(op)
        )));
    }
    if zbar.len() != op.output_dim() {
        return Err(FireError::DimensionMismatch(
            "prediction length does not match operator output".into(),
        ));
    }
    let complex = op.complex_output();
    let mut zhat = vec![EntryValue::Real(0.0); m_ch];
    let mut v_sum = 0.0;
    for j in 0..m_ch {
        let zb = if complex {
            EntryValue::Complex(C64::new(zbar[2 * j], zbar[2 * j + 1]))
        } else {
            EntryValue::Real(zbar[j])
        };
        let yj = match channel {
            MeasurementChannel::Gaussian { .. } if complex => {
                EntryValue::Complex(C64::new(y[2 * j], y[2 * j + 1]))
            }
            _ => EntryValue::Real(y[j]),
        };
        let (m, v) = channel.posterior_moments(yj, zb, nu_z_bar, laplace)?;
        zhat[j] = m;
        v_sum += v;
    }
    let mut nu_z_hat = v_sum / m_ch as f64;
    let mut clamped = false;
    if nu_z_hat >= nu_z_bar {
        nu_z_hat = (1.0 - EXTRINSIC_CLAMP) * nu_z_bar;
        clamped = true;
    }
    nu_z_hat = nu_z_hat.max(POSTERIOR_VAR_REL_FLOOR * nu_z_bar);
    let sigma_y_bar2 = 1.0 / (1.0 / nu_z_hat - 1.0 / nu_z_bar);
    let mut ybar = Array1::zeros(op.output_dim());
    for j in 0..m_ch {
        match zhat[j] {
            EntryValue::Real(m) => {
                ybar[j] = sigma_y_bar2 * (m / nu_z_hat - zbar[j] / nu_z_bar);
            }
            EntryValue::Complex(m) => {
                ybar[2 * j] = sigma_y_bar2 * (m.re / nu_z_hat - zbar[2 * j] / nu_z_bar);
                ybar[2 * j + 1] = sigma_y_bar2 * (m.im / nu_z_hat - zbar[2 * j + 1] / nu_z_bar);
            }
        }
    }
    Ok(ExtrinsicResult { ybar, sigma_y_bar2, nu_z_bar, nu_z_hat, clamped })
}

/// Runs the renoising loop on a generalized-linear model `y ~ channel(Ax₀)`
/// and returns the final solve output with per-iteration diagnostics.
#[allow(clippy::too_many_arguments)]
pub fn fire_glm(
    y: &Array1<f64>,
    op: &LinearOperator,
    channel: &MeasurementChannel,
    r_init: &Array1<f64>,
    sigma_init: f64,
    n_iters: usize,
    rho: f64,
    denoiser: &dyn Denoiser,
    settings: &FireSettings,
    rng: &mut RngStream,
) -> Result<(Array1<f64>, Vec<IterRow>)> {
    if n_iters == 0 {
        return Err(FireError::ContractViolation("need at least one iteration".into()));
    }
    if !(rho > 1.0) {
        return Err(FireError::ContractViolation(format!("rho must exceed 1, got {rho}")));
    }
    if !(sigma_init > 0.0) {
        return Err(FireError::ContractViolation("sigma_init must be positive".into()));
    }
    channel.validate(op)?;
    if r_init.len() != op.input_dim() || denoiser.dim() != op.input_dim() {
        return Err(FireError::DimensionMismatch(
            "fire_glm: iterate or denoiser dimension does not match the operator".into(),
        ));
    }
    let nu_floor = settings.nu_floor();
    let m_ch = op.measurement_entries() as f64;
    let complex = op.complex_output();

    let mut r = r_init.clone();
    let mut sigma2 = sigma_init * sigma_init;
    let mut rows = Vec::with_capacity(n_iters);
    let mut xhat = Array1::zeros(op.input_dim());
    for n in 1..=n_iters {
        let sigma = sigma2.sqrt();
        let xbar = if settings.stochastic_denoise {
            stochastic_denoise(denoiser, &r, sigma, rng).0
        } else {
            denoiser.denoise(&r, sigma, rng)
        };
        let nu_prior =
            (settings.glm_nu_factor * denoiser.output_err_var(sigma)).max(nu_floor);
        let zbar = op.apply(&xbar)?;
        let nu_z_bar = nu_prior * op.frob_sq() / m_ch;
        let ext =
            ep_extrinsic(y, op, &zbar, nu_z_bar, channel, settings.laplace_channel)?;
        // Per-real-coordinate pseudo-noise level: a complex entry splits its
        // total variance evenly across its two coordinates.
        let sigma_eff2 = if complex { ext.sigma_y_bar2 / 2.0 } else { ext.sigma_y_bar2 };
        let sigma_eff = settings.clamp_sigma_y(sigma_eff2.sqrt());
        let est = estimate_nu(&ext.ybar, op, &xbar, sigma_eff, nu_floor)?;
        let nu = match settings.nu_mode {
            NuMode::Estimated => est.nu,
            NuMode::Lookup => denoiser.output_err_var(sigma).max(nu_floor),
        };
        let (xh, renoised, sigma2_next, sigma_hat_y2, cg_iters) = solve_decrease_renoise(
            &ext.ybar,
            op,
            &xbar,
            sigma_eff,
            nu,
            sigma2,
            rho,
            n == n_iters,
            settings,
            rng,
        )?;
        let truth = settings.ground_truth.as_ref().map(|x0| {
            let z0 = op.apply(x0).expect("ground truth dimension already checked");
            let pseudo = &ext.ybar - &z0;
            TruthRow {
                input_err_var: err_var(&r, x0),
                denoised_err_var: err_var(&xbar, x0),
                solved_err_var: err_var(&xh, x0),
                // Per measurement entry, matching the sigma_y_bar2 convention
                // (a complex entry owns the summed variance of its pair).
                pseudo_noise_var: Some(
                    pseudo.dot(&pseudo) / op.measurement_entries() as f64,
                ),
            }
        });
        rows.push(IterRow {
            step_k: 0,
            iter_n: n,
            sigma2,
            nu,
            resid_sq: est.resid_sq,
            sigma_hat_y2,
            cg_iters,
            glm: Some(GlmRow {
                nu_z_bar: ext.nu_z_bar,
                nu_z_hat: ext.nu_z_hat,
                sigma_y_bar2: ext.sigma_y_bar2,
                pseudo_resid_sq: est.resid_sq,
                clamped: ext.clamped,
            }),
            truth,
        });
        xhat = xh;
        if let Some(next) = renoised {
            r = next;
        }
        sigma2 = sigma2_next;
    }
    Ok((xhat, rows))
}

fn err_var(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let diff = a - b;
    diff.dot(&diff) / a.len() as f64
}
