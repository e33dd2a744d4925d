//! Spectral factorizations backing the exact solve and colored-noise paths.
//!
//! Each variant exposes the same three capabilities: an exact Tikhonov-type
//! solve, sampling of noise with prescribed per-singular-direction variance,
//! and the full d-point variance spectrum. Dense factors come from a singular
//! value decomposition; masks, circulant convolutions, and isometries use
//! their closed-form spectra instead.

use ndarray::{Array1, Array2};

use super::fft::{C64, Fft1d};
use crate::error::{FireError, Result};
use crate::rng::{standard_normal_vec, RngStream};

/// Thin SVD of a dense matrix: `a = u · diag(s) · vt` with `r = min(m, d)`
/// columns. Directions outside the row space of `vt` are handled implicitly
/// as singular value zero.
#[derive(Debug, Clone)]
pub struct DenseSvd {
    pub u: Array2<f64>,  // m x r
    pub s: Array1<f64>,  // r, descending
    pub vt: Array2<f64>, // r x d
}

/// Exact spectral description of an operator, when its kind admits one.
#[derive(Clone)]
pub enum SvdFactors {
    /// Thin SVD of a dense matrix.
    Dense(DenseSvd),
    /// Row-selection operator: singular value 1 on kept coordinates, 0 elsewhere.
    Mask { d: usize, kept: Vec<usize> },
    /// Circular convolution: singular values are DFT magnitudes of the kernel.
    Circulant {
        d: usize,
        kernel_fft: Vec<C64>,
        fft: Fft1d,
    },
    /// Column-isometric operator (`adjoint ∘ apply = identity`): all singular
    /// values equal 1 and every input direction is measured.
    Isometry { d: usize },
}

impl SvdFactors {
    /// Largest singular value.
    pub fn smax(&self) -> f64 {
        match self {
            SvdFactors::Dense(f) => f.s.iter().cloned().fold(0.0, f64::max),
            SvdFactors::Mask { kept, .. } => {
                if kept.is_empty() {
                    0.0
                } else {
                    1.0
                }
            }
            SvdFactors::Circulant { kernel_fft, .. } => {
                kernel_fft.iter().map(|z| z.norm()).fold(0.0, f64::max)
            }
            SvdFactors::Isometry { .. } => 1.0,
        }
    }

    /// All `d` squared singular values of the input space (zeros included for
    /// unmeasured directions), in no particular order.
    pub fn squared_spectrum(&self) -> Vec<f64> {
        match self {
            SvdFactors::Dense(f) => {
                let d = f.vt.ncols();
                let mut out: Vec<f64> = f.s.iter().map(|s| s * s).collect();
                out.resize(d, 0.0);
                out
            }
            SvdFactors::Mask { d, kept } => {
                let mut out = vec![1.0; kept.len()];
                out.resize(*d, 0.0);
                out
            }
            SvdFactors::Circulant { kernel_fft, .. } => {
                kernel_fft.iter().map(|z| z.norm_sqr()).collect()
            }
            SvdFactors::Isometry { d } => vec![1.0; *d],
        }
    }

    /// Exact minimizer of `data_w·‖y − Ax‖² + prior_w·‖x − x̄‖²`.
    ///
    /// `aty` must hold `Aᵀy` for the isometry variant (the only one that needs
    /// it); other variants ignore it.
    pub fn solve_regularized(
        &self,
        y: &Array1<f64>,
        aty: Option<&Array1<f64>>,
        xbar: &Array1<f64>,
        data_w: f64,
        prior_w: f64,
    ) -> Result<Array1<f64>> {
        if data_w < 0.0 || prior_w <= 0.0 {
            return Err(FireError::ContractViolation(format!(
                "solve_regularized needs data_w >= 0 and prior_w > 0, got {data_w} and {prior_w}"
            )));
        }
        match self {
            SvdFactors::Dense(f) => {
                // x̂ = x̄ + V diag(data_w·s/(data_w·s² + prior_w)) (Uᵀy − S Vᵀx̄)
                let uty = f.u.t().dot(y);
                let vtx = f.vt.dot(xbar);
                let mut k = Array1::zeros(f.s.len());
                for i in 0..f.s.len() {
                    let s = f.s[i];
                    k[i] = data_w * s * (uty[i] - s * vtx[i]) / (data_w * s * s + prior_w);
                }
                Ok(xbar + &f.vt.t().dot(&k))
            }
            SvdFactors::Mask { kept, .. } => {
                let mut x = xbar.clone();
                for (j, &i) in kept.iter().enumerate() {
                    x[i] = (data_w * y[j] + prior_w * xbar[i]) / (data_w + prior_w);
                }
                Ok(x)
            }
            SvdFactors::Circulant { d, kernel_fft, fft } => {
                let mut yf: Vec<C64> = y.iter().map(|&v| C64::new(v, 0.0)).collect();
                let mut xf: Vec<C64> = xbar.iter().map(|&v| C64::new(v, 0.0)).collect();
                fft.forward_raw(&mut yf);
                fft.forward_raw(&mut xf);
                // Unnormalized transforms cancel in the ratio below.
                let mut kf = vec![C64::new(0.0, 0.0); *d];
                for f_idx in 0..*d {
                    let h = kernel_fft[f_idx];
                    let denom = data_w * h.norm_sqr() + prior_w;
                    kf[f_idx] = h.conj() * (yf[f_idx] - h * xf[f_idx]) * (data_w / denom);
                }
                fft.inverse_unitary(&mut kf);
                let scale = 1.0 / (*d as f64).sqrt(); // finish 1/d inverse normalization
                let mut x = xbar.clone();
                for i in 0..*d {
                    x[i] += kf[i].re * scale;
                }
                Ok(x)
            }
            SvdFactors::Isometry { .. } => {
                let aty = aty.ok_or_else(|| {
                    FireError::ContractViolation("isometry solve requires Aᵀy".into())
                })?;
                let denom = data_w + prior_w;
                Ok(aty.mapv(|v| v * data_w / denom) + xbar.mapv(|v| v * prior_w / denom))
            }
        }
    }

    /// Draws noise with covariance `V diag(λ(sᵢ²)) Vᵀ`, where `λ` maps each
    /// squared singular value (zero for unmeasured directions) to a variance.
    ///
    /// Requires `λ(s²) ≥ λ(0) ≥ 0` for every spectrum point, which holds for
    /// the renoising variance profiles this library produces.
    pub fn sample_colored(
        &self,
        lam: &dyn Fn(f64) -> f64,
        rng: &mut RngStream,
    ) -> Result<Array1<f64>> {
        let lam0 = lam(0.0);
        let check = |v: f64| -> Result<f64> {
            if v < -1e-12 {
                return Err(FireError::ContractViolation(format!(
                    "negative renoising variance {v:.3e}"
                )));
            }
            Ok(v.max(0.0))
        };
        let lam0 = check(lam0)?;
        match self {
            SvdFactors::Dense(f) => {
                let d = f.vt.ncols();
                let mut c = standard_normal_vec(d, rng).mapv(|e| e * lam0.sqrt());
                let eps = standard_normal_vec(f.s.len(), rng);
                let mut w = Array1::zeros(f.s.len());
                for i in 0..f.s.len() {
                    let li = check(lam(f.s[i] * f.s[i]))?;
                    let extra = (li - lam0).max(0.0);
                    w[i] = extra.sqrt() * eps[i];
                }
                c += &f.vt.t().dot(&w);
                Ok(c)
            }
            SvdFactors::Mask { d, kept } => {
                // Coordinates are themselves the singular directions: kept
                // ones carry λ(1), dropped ones λ(0).
                let l1 = check(lam(1.0))?;
                let eps = standard_normal_vec(*d, rng);
                let mut c = eps.mapv(|e| e * lam0.sqrt());
                for &i in kept {
                    c[i] = eps[i] * l1.sqrt();
                }
                Ok(c)
            }
            SvdFactors::Circulant { d, kernel_fft, fft } => {
                let eps = standard_normal_vec(*d, rng);
                let mut buf: Vec<C64> = eps.iter().map(|&v| C64::new(v, 0.0)).collect();
                fft.forward_unitary(&mut buf);
                for f_idx in 0..*d {
                    let li = check(lam(kernel_fft[f_idx].norm_sqr()))?;
                    buf[f_idx] *= li.sqrt();
                }
                fft.inverse_unitary(&mut buf);
                Ok(Array1::from_iter(buf.iter().map(|z| z.re)))
            }
            SvdFactors::Isometry { d } => {
                let l1 = check(lam(1.0))?;
                Ok(standard_normal_vec(*d, rng).mapv(|e| e * l1.sqrt()))
            }
        }
    }
}
