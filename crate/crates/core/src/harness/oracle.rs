//! Analytic references used to check the solvers: the exact Gaussian
//! posterior for linear measurements, and an idealized denoiser whose output
//! error is white by construction.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};

use crate::error::{FireError, Result};
use crate::priors::Denoiser;
use crate::rng::{standard_normal_vec, RngStream};

/// Gaussian prior over the signal, isotropic or with a full covariance.
#[derive(Debug, Clone)]
pub enum GaussianPrior {
    Isotropic { mean: Array1<f64>, variance: f64 },
    Full { mean: Array1<f64>, cov: Array2<f64> },
}

impl GaussianPrior {
    pub fn dim(&self) -> usize {
        match self {
            GaussianPrior::Isotropic { mean, .. } => mean.len(),
            GaussianPrior::Full { mean, .. } => mean.len(),
        }
    }

    fn precision(&self) -> Result<DMatrix<f64>> {
        let d = self.dim();
        match self {
            GaussianPrior::Isotropic { variance, .. } => {
                if !(*variance > 0.0) {
                    return Err(FireError::ContractViolation(
                        "prior variance must be positive".into(),
                    ));
                }
                Ok(DMatrix::identity(d, d) / *variance)
            }
            GaussianPrior::Full { cov, .. } => {
                let m = DMatrix::from_fn(d, d, |i, j| cov[[i, j]]);
                m.clone()
                    .cholesky()
                    .map(|c| c.inverse())
                    .ok_or_else(|| {
                        FireError::ContractViolation(
                            "prior covariance is not positive definite".into(),
                        )
                    })
            }
        }
    }

    fn mean_vec(&self) -> DVector<f64> {
        let mean = match self {
            GaussianPrior::Isotropic { mean, .. } => mean,
            GaussianPrior::Full { mean, .. } => mean,
        };
        DVector::from_iterator(mean.len(), mean.iter().copied())
    }
}

#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
}

/// Exact posterior of `x ~ prior` given `y = A x + N(0, σ_y² I)`, by the
/// normal equations on the materialized matrix (deliberately independent of
/// the operator implementations under test). Zero-row matrices return the
/// prior. A singular system is jittered and a warning printed.
pub fn gaussian_posterior_oracle(
    prior: &GaussianPrior,
    a: &Array2<f64>,
    sigma_y: f64,
    y: &Array1<f64>,
) -> Result<GaussianPosterior> {
    let d = prior.dim();
    let m = a.nrows();
    if a.ncols() != d || y.len() != m {
        return Err(FireError::DimensionMismatch(
            "oracle: matrix shape does not match prior or measurements".into(),
        ));
    }
    if m > 0 && !(sigma_y > 0.0) {
        return Err(FireError::ContractViolation("oracle needs sigma_y > 0".into()));
    }
    let mut precision = prior.precision()?;
    let mut rhs = &precision * prior.mean_vec();
    if m > 0 {
        let an = DMatrix::from_fn(m, d, |i, j| a[[i, j]]);
        let yv = DVector::from_iterator(m, y.iter().copied());
        let w = 1.0 / (sigma_y * sigma_y);
        precision += an.transpose() * &an * w;
        rhs += an.transpose() * yv * w;
    }
    let chol = match precision.clone().cholesky() {
        Some(c) => c,
        None => {
            let jitter = 1e-10 * precision.diagonal().amax().max(1.0);
            eprintln!(
                "warning: singular posterior system; adding diagonal jitter {jitter:.3e}"
            );
            (precision + DMatrix::identity(d, d) * jitter).cholesky().ok_or_else(|| {
                FireError::ContractViolation("posterior system is singular beyond repair".into())
            })?
        }
    };
    let mean = chol.solve(&rhs);
    let cov = chol.inverse();
    Ok(GaussianPosterior {
        mean: Array1::from_iter(mean.iter().copied()),
        cov: Array2::from_shape_fn((d, d), |(i, j)| cov[(i, j)]),
    })
}

/// Folds an identity observation `r = x + N(0, σ_r² I)` into a Gaussian
/// prior, yielding the prior for conditional-mean targets `E{x | r, y}`.
pub fn combine_with_identity_observation(
    prior: &GaussianPrior,
    r: &Array1<f64>,
    sigma_r: f64,
) -> Result<GaussianPrior> {
    if r.len() != prior.dim() {
        return Err(FireError::DimensionMismatch("observation length mismatch".into()));
    }
    if !(sigma_r > 0.0) {
        return Err(FireError::ContractViolation("sigma_r must be positive".into()));
    }
    let eye = Array2::eye(prior.dim());
    let post = gaussian_posterior_oracle(prior, &eye, sigma_r, r)?;
    Ok(GaussianPrior::Full { mean: post.mean, cov: post.cov })
}

/// Denoiser whose output error is exactly white Gaussian with variance
/// `gain·σ²`, regardless of the input: it perturbs the true signal instead
/// of estimating it. Used to test iteration-level error-decay predictions in
/// isolation from any real prior.
pub struct IdealizedDenoiser {
    pub x0: Array1<f64>,
    /// Output error variance as a fraction of the input variance σ².
    pub gain: f64,
}

impl Denoiser for IdealizedDenoiser {
    fn dim(&self) -> usize {
        self.x0.len()
    }

    fn denoise(&self, _r: &Array1<f64>, sigma: f64, rng: &mut RngStream) -> Array1<f64> {
        let level = (self.gain * sigma * sigma).sqrt();
        &self.x0 + &standard_normal_vec(self.x0.len(), rng).mapv(|e| e * level)
    }

    fn output_err_var(&self, sigma: f64) -> f64 {
        self.gain * sigma * sigma
    }
}
