//! Measurement operators for linear and generalized-linear inverse problems.
//!
//! An operator maps a real signal of length `d` to a real measurement vector
//! of length `m`. Complex-valued measurements (oversampled Fourier, coded
//! diffraction) are embedded as interleaved `[re, im]` pairs, so `m` counts
//! real scalars; [`LinearOperator::measurement_entries`] reports the number
//! of channel entries (complex pairs for those kinds).
//!
//! Every operator caches its largest singular value and squared Frobenius
//! norm at construction, and carries exact spectral factors whenever its kind
//! admits them. Operators are immutable after construction and safe to share
//! across threads.

mod fft;
mod svd;

pub use fft::{deinterleave, interleave_into, C64, Fft1d, Fft2d};
pub use svd::{DenseSvd, SvdFactors};

use ndarray::{Array1, Array2};

use crate::error::{FireError, Result};
use crate::rng::{derive_stream, standard_normal_vec, RngStream};

/// Default probe count for randomized Frobenius-norm estimation.
pub const FROBENIUS_PROBES: usize = 25;

#[derive(Clone)]
enum OperatorKind {
    Dense {
        a: Array2<f64>,
    },
    Mask {
        kept: Vec<usize>,
    },
    CircularConv {
        kernel_fft: Vec<C64>,
        fft: Fft1d,
    },
    DecimatedConv {
        kernel_fft: Vec<C64>,
        fft: Fft1d,
        factor: usize,
    },
    OversampledFourier {
        height: usize,
        width: usize,
        fft: Fft2d,
    },
    CodedDiffraction {
        height: usize,
        width: usize,
        masks: Vec<Vec<C64>>,
        mask_seed: u64,
        fft: Fft2d,
    },
}

/// A fixed measurement operator with cached spectral summaries.
#[derive(Clone)]
pub struct LinearOperator {
    kind: OperatorKind,
    d: usize,
    m: usize,
    complex_output: bool,
    smax: f64,
    frob_sq: f64,
    svd: Option<SvdFactors>,
}

impl LinearOperator {
    /// Dense real matrix with exact SVD factors.
    pub fn dense(a: Array2<f64>) -> Result<Self> {
        Self::dense_with_options(a, true)
    }

    /// Dense real matrix; `with_svd = false` skips factor computation so the
    /// iterative solve and approximate renoising paths get exercised instead.
    pub fn dense_with_options(a: Array2<f64>, with_svd: bool) -> Result<Self> {
        let (m, d) = (a.nrows(), a.ncols());
        if m == 0 || d == 0 {
            return Err(FireError::ContractViolation(
                "dense operator needs at least one row and column".into(),
            ));
        }
        let frob_sq = a.iter().map(|v| v * v).sum();
        if frob_sq <= 0.0 {
            return Err(FireError::ContractViolation("operator must be nonzero".into()));
        }
        let mut op = LinearOperator {
            kind: OperatorKind::Dense { a },
            d,
            m,
            complex_output: false,
            smax: f64::NAN,
            frob_sq,
            svd: None,
        };
        if with_svd {
            let a = match &op.kind {
                OperatorKind::Dense { a } => a,
                _ => unreachable!(),
            };
            let na = nalgebra::DMatrix::from_row_iterator(m, d, a.iter().cloned());
            let f = na.svd(true, true);
            let (u, s, vt) = (
                f.u.expect("svd requested u"),
                f.singular_values,
                f.v_t.expect("svd requested v_t"),
            );
            let r = s.len();
            let dense = DenseSvd {
                u: Array2::from_shape_fn((m, r), |(i, j)| u[(i, j)]),
                s: Array1::from_iter(s.iter().cloned()),
                vt: Array2::from_shape_fn((r, d), |(i, j)| vt[(i, j)]),
            };
            op.smax = dense.s.iter().cloned().fold(0.0, f64::max);
            op.svd = Some(SvdFactors::Dense(dense));
            Ok(op)
        } else {
            Ok(op.finish_smax_by_power_iteration())
        }
    }

    /// Row-selection (inpainting-style) operator keeping the listed
    /// coordinates, which must be strictly increasing.
    pub fn mask(d: usize, kept: Vec<usize>) -> Result<Self> {
        if kept.is_empty() {
            return Err(FireError::ContractViolation("mask keeps no coordinates".into()));
        }
        if kept.windows(2).any(|w| w[0] >= w[1]) || *kept.last().unwrap() >= d {
            return Err(FireError::ContractViolation(
                "mask indices must be strictly increasing and < d".into(),
            ));
        }
        let m = kept.len();
        Ok(LinearOperator {
            kind: OperatorKind::Mask { kept: kept.clone() },
            d,
            m,
            complex_output: false,
            smax: 1.0,
            frob_sq: m as f64,
            svd: Some(SvdFactors::Mask { d, kept }),
        })
    }

    /// Circular convolution on a length-`d` signal with the given kernel taps
    /// (anchored at index 0, zero-padded to length `d`).
    pub fn circular_conv(d: usize, taps: &[f64]) -> Result<Self> {
        if taps.is_empty() || taps.len() > d {
            return Err(FireError::ContractViolation(
                "kernel must be nonempty and no longer than the signal".into(),
            ));
        }
        let tap_energy: f64 = taps.iter().map(|v| v * v).sum();
        if tap_energy <= 0.0 {
            return Err(FireError::ContractViolation("operator must be nonzero".into()));
        }
        let fft = Fft1d::new(d);
        let mut kernel_fft: Vec<C64> = taps.iter().map(|&v| C64::new(v, 0.0)).collect();
        kernel_fft.resize(d, C64::new(0.0, 0.0));
        fft.forward_raw(&mut kernel_fft);
        let smax = kernel_fft.iter().map(|z| z.norm()).fold(0.0, f64::max);
        Ok(LinearOperator {
            kind: OperatorKind::CircularConv {
                kernel_fft: kernel_fft.clone(),
                fft: fft.clone(),
            },
            d,
            m: d,
            complex_output: false,
            smax,
            frob_sq: d as f64 * tap_energy,
            svd: Some(SvdFactors::Circulant { d, kernel_fft, fft }),
        })
    }

    /// Circular convolution followed by keeping every `factor`-th sample
    /// (super-resolution style). No exact factors; solves go through CG and
    /// the largest singular value comes from power iteration.
    pub fn decimated_conv(d: usize, taps: &[f64], factor: usize) -> Result<Self> {
        if factor == 0 || d % factor != 0 {
            return Err(FireError::ContractViolation(
                "decimation factor must divide the signal length".into(),
            ));
        }
        if taps.is_empty() || taps.len() > d {
            return Err(FireError::ContractViolation(
                "kernel must be nonempty and no longer than the signal".into(),
            ));
        }
        let tap_energy: f64 = taps.iter().map(|v| v * v).sum();
        if tap_energy <= 0.0 {
            return Err(FireError::ContractViolation("operator must be nonzero".into()));
        }
        let fft = Fft1d::new(d);
        let mut kernel_fft: Vec<C64> = taps.iter().map(|&v| C64::new(v, 0.0)).collect();
        kernel_fft.resize(d, C64::new(0.0, 0.0));
        fft.forward_raw(&mut kernel_fft);
        let m = d / factor;
        let op = LinearOperator {
            kind: OperatorKind::DecimatedConv { kernel_fft, fft, factor },
            d,
            m,
            complex_output: false,
            smax: f64::NAN,
            frob_sq: m as f64 * tap_energy,
            svd: None,
        };
        Ok(op.finish_smax_by_power_iteration())
    }

    /// Unitary 2-D Fourier transform of the image zero-padded to twice its
    /// height and width. Output is complex, interleaved; the operator is a
    /// column isometry.
    pub fn oversampled_fourier(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(FireError::ContractViolation("empty image shape".into()));
        }
        let d = height * width;
        let entries = 4 * d;
        Ok(LinearOperator {
            kind: OperatorKind::OversampledFourier {
                height,
                width,
                fft: Fft2d::new(2 * height, 2 * width),
            },
            d,
            m: 2 * entries,
            complex_output: true,
            smax: 1.0,
            frob_sq: d as f64,
            svd: Some(SvdFactors::Isometry { d }),
        })
    }

    /// Coded diffraction patterns: `levels` unit-modulus phase masks followed
    /// by unitary 2-D Fourier transforms, scaled so the stack is a column
    /// isometry. Masks are regenerable from `mask_seed`.
    pub fn coded_diffraction(height: usize, width: usize, levels: usize, mask_seed: u64) -> Result<Self> {
        if height == 0 || width == 0 || levels == 0 {
            return Err(FireError::ContractViolation(
                "coded diffraction needs a nonempty image and at least one mask".into(),
            ));
        }
        let d = height * width;
        let masks: Vec<Vec<C64>> = (0..levels)
            .map(|l| {
                let mut rng = derive_stream(mask_seed, l as u64, "operators", "cdp-mask");
                (0..d)
                    .map(|_| {
                        use rand::Rng;
                        let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                        C64::new(theta.cos(), theta.sin())
                    })
                    .collect()
            })
            .collect();
        let entries = levels * d;
        Ok(LinearOperator {
            kind: OperatorKind::CodedDiffraction {
                height,
                width,
                masks,
                mask_seed,
                fft: Fft2d::new(height, width),
            },
            d,
            m: 2 * entries,
            complex_output: true,
            smax: 1.0,
            frob_sq: d as f64,
            svd: Some(SvdFactors::Isometry { d }),
        })
    }

    fn finish_smax_by_power_iteration(mut self) -> Self {
        let r = power_iteration_smax(&self, 600, 1e-13);
        self.smax = r.smax;
        self
    }

    /// Signal (input) dimension.
    pub fn input_dim(&self) -> usize {
        self.d
    }

    /// Measurement dimension in real scalars (complex entries count twice).
    pub fn output_dim(&self) -> usize {
        self.m
    }

    /// Number of measurement entries as seen by scalar channels: complex
    /// pairs for Fourier-type kinds, real scalars otherwise.
    pub fn measurement_entries(&self) -> usize {
        if self.complex_output {
            self.m / 2
        } else {
            self.m
        }
    }

    /// Whether measurements are interleaved complex pairs.
    pub fn complex_output(&self) -> bool {
        self.complex_output
    }

    /// Largest singular value (exact where the kind permits, power-iteration
    /// estimate otherwise).
    pub fn smax(&self) -> f64 {
        self.smax
    }

    /// Squared Frobenius norm, from the kind's closed form.
    pub fn frob_sq(&self) -> f64 {
        self.frob_sq
    }

    /// Exact spectral factors, when the kind admits them.
    pub fn svd(&self) -> Option<&SvdFactors> {
        self.svd.as_ref()
    }

    /// For coded diffraction: the seed its masks were generated from.
    pub fn mask_seed(&self) -> Option<u64> {
        match &self.kind {
            OperatorKind::CodedDiffraction { mask_seed, .. } => Some(*mask_seed),
            _ => None,
        }
    }

    /// Applies the operator. Errors on input length mismatch.
    pub fn apply(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.d {
            return Err(FireError::DimensionMismatch(format!(
                "apply: expected input length {}, got {}",
                self.d,
                x.len()
            )));
        }
        Ok(match &self.kind {
            OperatorKind::Dense { a } => a.dot(x),
            OperatorKind::Mask { kept } => Array1::from_iter(kept.iter().map(|&i| x[i])),
            OperatorKind::CircularConv { kernel_fft, fft } => {
                circ_apply(x, kernel_fft, fft, false)
            }
            OperatorKind::DecimatedConv { kernel_fft, fft, factor } => {
                let full = circ_apply(x, kernel_fft, fft, false);
                Array1::from_iter(full.iter().step_by(*factor).cloned())
            }
            OperatorKind::OversampledFourier { height, width, fft } => {
                let (ph, pw) = (2 * height, 2 * width);
                let mut buf = vec![C64::new(0.0, 0.0); ph * pw];
                for r in 0..*height {
                    for c in 0..*width {
                        buf[r * pw + c] = C64::new(x[r * width + c], 0.0);
                    }
                }
                fft.forward_unitary(&mut buf);
                let mut y = Array1::zeros(self.m);
                interleave_into(&buf, y.as_slice_mut().unwrap());
                y
            }
            OperatorKind::CodedDiffraction { height, width, masks, fft, .. } => {
                let d = height * width;
                let scale = 1.0 / (masks.len() as f64).sqrt();
                let mut y = Array1::zeros(self.m);
                for (l, mask) in masks.iter().enumerate() {
                    let mut buf: Vec<C64> =
                        (0..d).map(|i| mask[i] * x[i] * scale).collect();
                    fft.forward_unitary(&mut buf);
                    interleave_into(&buf, &mut y.as_slice_mut().unwrap()[2 * l * d..2 * (l + 1) * d]);
                }
                y
            }
        })
    }

    /// Applies the adjoint (real-embedding transpose). Errors on length mismatch.
    pub fn adjoint(&self, y: &Array1<f64>) -> Result<Array1<f64>> {
        if y.len() != self.m {
            return Err(FireError::DimensionMismatch(format!(
                "adjoint: expected input length {}, got {}",
                self.m,
                y.len()
            )));
        }
        Ok(match &self.kind {
            OperatorKind::Dense { a } => a.t().dot(y),
            OperatorKind::Mask { kept } => {
                let mut x = Array1::zeros(self.d);
                for (j, &i) in kept.iter().enumerate() {
                    x[i] = y[j];
                }
                x
            }
            OperatorKind::CircularConv { kernel_fft, fft } => {
                circ_apply(y, kernel_fft, fft, true)
            }
            OperatorKind::DecimatedConv { kernel_fft, fft, factor } => {
                let mut up = Array1::zeros(self.d);
                for (j, &v) in y.iter().enumerate() {
                    up[j * factor] = v;
                }
                circ_apply(&up, kernel_fft, fft, true)
            }
            OperatorKind::OversampledFourier { height, width, fft } => {
                let (ph, pw) = (2 * height, 2 * width);
                let mut buf = deinterleave(y.as_slice().unwrap());
                debug_assert_eq!(buf.len(), ph * pw);
                fft.inverse_unitary(&mut buf);
                Array1::from_shape_fn(self.d, |i| {
                    let (r, c) = (i / width, i % width);
                    buf[r * pw + c].re
                })
            }
            OperatorKind::CodedDiffraction { height, width, masks, fft, .. } => {
                let d = height * width;
                let scale = 1.0 / (masks.len() as f64).sqrt();
                let mut x = Array1::zeros(self.d);
                for (l, mask) in masks.iter().enumerate() {
                    let mut buf = deinterleave(&y.as_slice().unwrap()[2 * l * d..2 * (l + 1) * d]);
                    fft.inverse_unitary(&mut buf);
                    for i in 0..d {
                        x[i] += (mask[i].conj() * buf[i]).re * scale;
                    }
                }
                x
            }
        })
    }

    /// Exact minimizer of `data_w·‖y − Ax‖² + prior_w·‖x − x̄‖²` via the
    /// operator's spectral factors. Errors when the kind has none.
    pub fn solve_regularized(
        &self,
        y: &Array1<f64>,
        xbar: &Array1<f64>,
        data_w: f64,
        prior_w: f64,
    ) -> Result<Array1<f64>> {
        let factors = self.svd.as_ref().ok_or_else(|| {
            FireError::ContractViolation(
                "exact solve requires spectral factors; use the CG path".into(),
            )
        })?;
        let aty = match factors {
            SvdFactors::Isometry { .. } => Some(self.adjoint(y)?),
            _ => None,
        };
        factors.solve_regularized(y, aty.as_ref(), xbar, data_w, prior_w)
    }

    /// Samples noise with covariance `V diag(λ(s²)) Vᵀ` over the operator's
    /// right singular directions. Errors when the kind lacks factors.
    pub fn sample_colored(
        &self,
        lam: &dyn Fn(f64) -> f64,
        rng: &mut RngStream,
    ) -> Result<Array1<f64>> {
        let factors = self.svd.as_ref().ok_or_else(|| {
            FireError::ContractViolation(
                "exact colored sampling requires spectral factors".into(),
            )
        })?;
        factors.sample_colored(lam, rng)
    }

    /// The full d-point variance spectrum `λ(s²)` over singular directions.
    pub fn lambda_spectrum(&self, lam: &dyn Fn(f64) -> f64) -> Result<Vec<f64>> {
        let factors = self.svd.as_ref().ok_or_else(|| {
            FireError::ContractViolation("spectrum requires spectral factors".into())
        })?;
        Ok(factors.squared_spectrum().into_iter().map(lam).collect())
    }

    /// Materializes the operator as a dense matrix (test and diagnostic use).
    pub fn materialize(&self) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((self.m, self.d));
        let mut e = Array1::zeros(self.d);
        for i in 0..self.d {
            e[i] = 1.0;
            let col = self.apply(&e)?;
            out.column_mut(i).assign(&col);
            e[i] = 0.0;
        }
        Ok(out)
    }
}

fn circ_apply(x: &Array1<f64>, kernel_fft: &[C64], fft: &Fft1d, adjoint: bool) -> Array1<f64> {
    let d = x.len();
    let mut buf: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
    fft.forward_raw(&mut buf);
    for (v, h) in buf.iter_mut().zip(kernel_fft) {
        *v *= if adjoint { h.conj() } else { *h };
    }
    fft.inverse_unitary(&mut buf);
    let scale = 1.0 / (d as f64).sqrt(); // finish 1/d inverse normalization
    Array1::from_iter(buf.iter().map(|z| z.re * scale))
}

/// Outcome of power iteration on `AᵀA`.
#[derive(Debug, Clone, Copy)]
pub struct PowerIterResult {
    pub smax: f64,
    pub converged: bool,
    pub iters: usize,
}

/// Estimates the largest singular value by power iteration on `AᵀA` from a
/// fixed internal start vector. Returns the best estimate with a convergence
/// flag rather than failing on slow spectra.
pub fn power_iteration_smax(op: &LinearOperator, max_iters: usize, tol: f64) -> PowerIterResult {
    let mut rng = derive_stream(0x9e3779b97f4a7c15, 0, "operators", "power-iteration");
    let mut v = standard_normal_vec(op.input_dim(), &mut rng);
    let norm = v.dot(&v).sqrt();
    v.mapv_inplace(|t| t / norm);
    let mut est = 0.0;
    for it in 1..=max_iters {
        let av = op.apply(&v).expect("dimension fixed by construction");
        let atav = op.adjoint(&av).expect("dimension fixed by construction");
        let norm = atav.dot(&atav).sqrt();
        if norm == 0.0 {
            return PowerIterResult { smax: 0.0, converged: true, iters: it };
        }
        let new_est = av.dot(&av).sqrt(); // ‖Av‖ with ‖v‖ = 1
        v = atav.mapv(|t| t / norm);
        if (new_est - est).abs() <= tol * new_est.max(f64::MIN_POSITIVE) {
            return PowerIterResult { smax: new_est, converged: true, iters: it };
        }
        est = new_est;
    }
    PowerIterResult { smax: est, converged: false, iters: max_iters }
}

/// Unbiased randomized estimate of `‖A‖_F²` from `probes` Gaussian probes:
/// the mean of `‖Aw‖²` over `w ~ N(0, I)`.
pub fn estimate_frobenius_sq(op: &LinearOperator, probes: usize, rng: &mut RngStream) -> f64 {
    assert!(probes > 0, "need at least one probe");
    let mut acc = 0.0;
    for _ in 0..probes {
        let w = standard_normal_vec(op.input_dim(), rng);
        let aw = op.apply(&w).expect("dimension fixed by construction");
        acc += aw.dot(&aw);
    }
    acc / probes as f64
}
