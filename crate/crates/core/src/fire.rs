//! Conditional denoising by iterative renoising for standard linear models
//! `y = Ax₀ + σ_y w`.
//!
//! Each iteration denoises the current iterate, estimates the denoiser's
//! output error variance from the measurement residual, solves a regularized
//! least-squares problem fusing measurements with the denoised estimate,
//! shrinks the target input variance geometrically, and re-adds colored
//! noise shaped so the next denoiser input error is white again. The final
//! iteration returns the solve output without renoising.

use ndarray::Array1;

use crate::error::{FireError, Result};
use crate::operators::LinearOperator;
use crate::priors::{stochastic_denoise, Denoiser};
use crate::record::{IterRow, TruthRow};
use crate::rng::{standard_normal_vec, RngStream};

/// Relative floor applied to σ_y: zero-noise inputs are clamped to
/// `SIGMA_Y_REL_FLOOR × signal_scale`.
pub const SIGMA_Y_REL_FLOOR: f64 = 1e-6;

/// Conjugate-gradient solve settings.
#[derive(Debug, Clone)]
pub struct CgSettings {
    /// Relative-residual stopping tolerance.
    pub tol: f64,
    pub max_iters: usize,
    /// Inflate the solve noise level so the normal-equation condition number
    /// stays bounded by `1/condition_cap + 1`.
    pub speedup: bool,
    /// Lower bound on `σ_y²/(ν·s_max²)` enforced by the speedup.
    pub condition_cap: f64,
}

impl Default for CgSettings {
    fn default() -> Self {
        CgSettings { tol: 1e-8, max_iters: 1000, speedup: false, condition_cap: 1e-4 }
    }
}

/// Which linear-solve implementation to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolvePath {
    /// Exact spectral solve when factors exist, CG otherwise.
    Auto,
    /// Require the exact spectral solve; errors if the operator lacks factors.
    Svd,
    /// Always use conjugate gradients.
    Cg,
}

/// How renoising noise is shaped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenoisePath {
    /// Exact spectral sampling when factors exist, approximation otherwise.
    Auto,
    Svd,
    /// Factor-free approximation `√(σ²−ν)ε₁ + √ξ Aᵀε₂`.
    Approx,
}

/// Where the per-iteration output-error variance ν comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NuMode {
    /// Unbiased residual-based estimate.
    Estimated,
    /// Denoiser's own table value ν̂(σ) (idealized-theory and ablation runs).
    Lookup,
}

/// Solver settings shared by the linear and generalized-linear loops.
#[derive(Clone)]
pub struct FireSettings {
    pub solve_path: SolvePath,
    pub renoise_path: RenoisePath,
    pub cg: CgSettings,
    /// Perturb the denoiser output by its own error level before use.
    pub stochastic_denoise: bool,
    pub nu_mode: NuMode,
    /// ν is floored at `nu_floor_rel × signal_scale²`.
    pub nu_floor_rel: f64,
    /// Typical root-mean-square signal value; anchors the σ_y and ν floors.
    pub signal_scale: f64,
    /// Multiplier on the table value ν̂(σ) in the generalized-linear loop.
    pub glm_nu_factor: f64,
    /// Use the fast approximate magnitude-channel moments.
    pub laplace_channel: bool,
    /// Ground truth for instrumentation; enables the truth columns.
    pub ground_truth: Option<Array1<f64>>,
}

impl Default for FireSettings {
    fn default() -> Self {
        FireSettings {
            solve_path: SolvePath::Auto,
            renoise_path: RenoisePath::Auto,
            cg: CgSettings::default(),
            stochastic_denoise: true,
            nu_mode: NuMode::Estimated,
            nu_floor_rel: 1e-8,
            signal_scale: 1.0,
            glm_nu_factor: 2.0,
            laplace_channel: false,
            ground_truth: None,
        }
    }
}

impl FireSettings {
    pub fn nu_floor(&self) -> f64 {
        self.nu_floor_rel * self.signal_scale * self.signal_scale
    }

    pub fn clamp_sigma_y(&self, sigma_y: f64) -> f64 {
        sigma_y.max(SIGMA_Y_REL_FLOOR * self.signal_scale)
    }
}

/// Residual-based output-error estimate.
#[derive(Debug, Clone, Copy)]
pub struct NuEstimate {
    pub nu: f64,
    pub resid_sq: f64,
    /// Whether the raw estimate fell below the floor.
    pub floored: bool,
}

/// Unbiased estimate of the denoiser output error variance from the
/// measurement residual: `(‖y − A x̄‖² − m σ_y²)/‖A‖_F²`, floored at
/// `nu_floor`. `σ_y` is the per-coordinate noise level of `y`.
pub fn estimate_nu(
    y: &Array1<f64>,
    op: &LinearOperator,
    xbar: &Array1<f64>,
    sigma_y: f64,
    nu_floor: f64,
) -> Result<NuEstimate> {
    if !(nu_floor > 0.0) {
        return Err(FireError::ContractViolation("nu floor must be positive".into()));
    }
    let resid = y - &op.apply(xbar)?;
    let resid_sq = resid.dot(&resid);
    let m = op.output_dim() as f64;
    let raw = (resid_sq - m * sigma_y * sigma_y) / op.frob_sq();
    let floored = raw < nu_floor;
    Ok(NuEstimate { nu: raw.max(nu_floor), resid_sq, floored })
}

/// Exact solve of `argmin ‖y − Ax‖²/σ_y² + ‖x − x̄‖²/ν` via spectral factors.
pub fn mmse_update_svd(
    y: &Array1<f64>,
    op: &LinearOperator,
    xbar: &Array1<f64>,
    sigma_y: f64,
    nu: f64,
) -> Result<Array1<f64>> {
    if !(sigma_y > 0.0) || !(nu > 0.0) {
        return Err(FireError::ContractViolation(
            "mmse update needs positive sigma_y and nu".into(),
        ));
    }
    op.solve_regularized(y, xbar, 1.0 / (sigma_y * sigma_y), 1.0 / nu)
}

/// Outcome of the conjugate-gradient solve path.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Array1<f64>,
    /// Effective squared noise level used in the system (inflated when the
    /// conditioning speedup is active).
    pub sigma_hat_y2: f64,
    pub iters: usize,
    pub converged: bool,
}

/// Effective solve noise under the conditioning speedup:
/// `σ̂_y² = ν·s_max²·max{cap, σ_y²/(ν·s_max²)}`; without it, `σ_y²`.
pub fn effective_sigma_y2(sigma_y: f64, nu: f64, smax: f64, cg: &CgSettings) -> f64 {
    let sy2 = sigma_y * sigma_y;
    if !cg.speedup || smax == 0.0 {
        return sy2;
    }
    let ratio = sy2 / (nu * smax * smax);
    if ratio >= cg.condition_cap {
        sy2
    } else {
        nu * smax * smax * cg.condition_cap
    }
}

/// Conjugate-gradient solve of `argmin ‖y − Ax‖²/σ̂_y² + ‖x − x̄‖²/ν`,
/// warm-started at `x̄`, with σ̂_y² from [`effective_sigma_y2`].
pub fn mmse_update_cg(
    y: &Array1<f64>,
    op: &LinearOperator,
    xbar: &Array1<f64>,
    sigma_y: f64,
    nu: f64,
    cg: &CgSettings,
) -> Result<CgOutcome> {
    if !(sigma_y > 0.0) || !(nu > 0.0) {
        return Err(FireError::ContractViolation(
            "mmse update needs positive sigma_y and nu".into(),
        ));
    }
    let sigma_hat_y2 = effective_sigma_y2(sigma_y, nu, op.smax(), cg);
    let wd = 1.0 / sigma_hat_y2;
    let wp = 1.0 / nu;
    let matvec = |v: &Array1<f64>| -> Result<Array1<f64>> {
        Ok(op.adjoint(&op.apply(v)?)?.mapv(|t| t * wd) + v.mapv(|t| t * wp))
    };
    let b = op.adjoint(y)?.mapv(|t| t * wd) + xbar.mapv(|t| t * wp);
    let bnorm = b.dot(&b).sqrt();
    if bnorm == 0.0 {
        return Ok(CgOutcome { x: Array1::zeros(xbar.len()), sigma_hat_y2, iters: 0, converged: true });
    }
    let mut x = xbar.clone();
    let mut r = &b - &matvec(&x)?;
    let mut p = r.clone();
    let mut rs = r.dot(&r);
    if rs.sqrt() <= cg.tol * bnorm {
        return Ok(CgOutcome { x, sigma_hat_y2, iters: 0, converged: true });
    }
    let mut grew = 0usize;
    for it in 1..=cg.max_iters {
        let mp = matvec(&p)?;
        let denom = p.dot(&mp);
        if denom <= 0.0 {
            return Err(FireError::ContractViolation(
                "cg encountered a non-positive curvature direction".into(),
            ));
        }
        let alpha = rs / denom;
        x = &x + &p.mapv(|t| t * alpha);
        r = &r - &mp.mapv(|t| t * alpha);
        let rs_new = r.dot(&r);
        if rs_new.sqrt() <= cg.tol * bnorm {
            return Ok(CgOutcome { x, sigma_hat_y2, iters: it, converged: true });
        }
        if rs_new > rs {
            grew += 1;
            if grew >= 10 {
                return Err(FireError::CgDivergence {
                    iter: it,
                    grew_iters: grew,
                    rel_residual: rs_new.sqrt() / bnorm,
                });
            }
        } else {
            grew = 0;
        }
        let beta = rs_new / rs;
        p = &r + &p.mapv(|t| t * beta);
        rs = rs_new;
    }
    Ok(CgOutcome { x, sigma_hat_y2, iters: cg.max_iters, converged: false })
}

/// Per-direction renoising variance: `λ(s²) = σ² − γ(s²)` with
/// `γ = (s²σ_y²/σ̂_y⁴ + 1/ν) / (s²/σ̂_y² + 1/ν)²`, which reduces to
/// `σ² − (s²/σ_y² + 1/ν)⁻¹` when σ̂_y = σ_y.
pub fn lambda_profile(
    sigma2: f64,
    nu: f64,
    sigma_y: f64,
    sigma_hat_y2: f64,
) -> impl Fn(f64) -> f64 {
    let sy2 = sigma_y * sigma_y;
    move |s_sq: f64| {
        let denom = s_sq / sigma_hat_y2 + 1.0 / nu;
        let gamma = (s_sq * sy2 / (sigma_hat_y2 * sigma_hat_y2) + 1.0 / nu) / (denom * denom);
        sigma2 - gamma
    }
}

/// Exact colored renoising: noise with covariance `σ²I − C` over the
/// operator's singular directions, where `C` is the solve-error covariance.
pub fn colored_noise_svd(
    op: &LinearOperator,
    sigma2: f64,
    nu: f64,
    sigma_y: f64,
    sigma_hat_y2: f64,
    rng: &mut RngStream,
) -> Result<Array1<f64>> {
    check_renoise_args(sigma2, nu, sigma_y, sigma_hat_y2)?;
    let lam = lambda_profile(sigma2, nu, sigma_y, sigma_hat_y2);
    op.sample_colored(&lam, rng)
}

/// Scalar weight of the `AᵀA` term in the factor-free renoising
/// approximation `Σ̂ = (σ² − ν)I + ξ AᵀA`.
pub fn xi_coefficient(nu: f64, sigma_y: f64, sigma_hat_y2: f64, smax: f64) -> f64 {
    if smax == 0.0 {
        return 0.0;
    }
    let s_sq = smax * smax;
    let sy2 = sigma_y * sigma_y;
    let denom = s_sq / sigma_hat_y2 + 1.0 / nu;
    let gamma_max = (s_sq * sy2 / (sigma_hat_y2 * sigma_hat_y2) + 1.0 / nu) / (denom * denom);
    ((nu - gamma_max) / s_sq).max(0.0)
}

/// Factor-free colored renoising `c = √(σ²−ν) ε₁ + √ξ Aᵀε₂`, matching the
/// exact spectrum at the unmeasured and top singular directions.
pub fn colored_noise_approx(
    op: &LinearOperator,
    sigma2: f64,
    nu: f64,
    sigma_y: f64,
    sigma_hat_y2: f64,
    rng: &mut RngStream,
) -> Result<Array1<f64>> {
    check_renoise_args(sigma2, nu, sigma_y, sigma_hat_y2)?;
    if sigma2 < nu {
        return Err(FireError::ContractViolation(format!(
            "renoising needs σ² ≥ ν, got σ²={sigma2:.3e} < ν={nu:.3e}"
        )));
    }
    let xi = xi_coefficient(nu, sigma_y, sigma_hat_y2, op.smax());
    let eps1 = standard_normal_vec(op.input_dim(), rng);
    let eps2 = standard_normal_vec(op.output_dim(), rng);
    let mut c = eps1.mapv(|e| e * (sigma2 - nu).sqrt());
    c += &op.adjoint(&eps2)?.mapv(|t| t * xi.sqrt());
    Ok(c)
}

fn check_renoise_args(sigma2: f64, nu: f64, sigma_y: f64, sigma_hat_y2: f64) -> Result<()> {
    if !(sigma2 > 0.0) || !(nu > 0.0) || !(sigma_y > 0.0) || !(sigma_hat_y2 > 0.0) {
        return Err(FireError::ContractViolation(
            "renoising needs positive sigma2, nu, sigma_y, sigma_hat_y2".into(),
        ));
    }
    Ok(())
}

pub(crate) enum SolveChoice {
    Svd,
    Cg,
}

pub(crate) fn pick_solve(op: &LinearOperator, settings: &FireSettings) -> Result<SolveChoice> {
    match settings.solve_path {
        SolvePath::Svd => {
            if op.svd().is_none() {
                return Err(FireError::ContractViolation(
                    "svd solve requested but operator has no spectral factors".into(),
                ));
            }
            Ok(SolveChoice::Svd)
        }
        SolvePath::Cg => Ok(SolveChoice::Cg),
        SolvePath::Auto => Ok(if op.svd().is_some() { SolveChoice::Svd } else { SolveChoice::Cg }),
    }
}

pub(crate) fn pick_renoise(op: &LinearOperator, settings: &FireSettings) -> Result<RenoisePath> {
    match settings.renoise_path {
        RenoisePath::Svd => {
            if op.svd().is_none() {
                return Err(FireError::ContractViolation(
                    "svd renoising requested but operator has no spectral factors".into(),
                ));
            }
            Ok(RenoisePath::Svd)
        }
        RenoisePath::Approx => Ok(RenoisePath::Approx),
        RenoisePath::Auto => {
            Ok(if op.svd().is_some() { RenoisePath::Svd } else { RenoisePath::Approx })
        }
    }
}

/// One shared inner iteration: solve + variance decrease + optional renoise.
/// Returns `(x̂, σ²_next, row fields)`. Used by both the linear loop below and
/// the generalized-linear loop.
#[allow(clippy::too_many_arguments)]
pub(crate) fn solve_decrease_renoise(
    y_eff: &Array1<f64>,
    op: &LinearOperator,
    xbar: &Array1<f64>,
    sigma_y_eff: f64,
    nu: f64,
    sigma2: f64,
    rho: f64,
    last_iter: bool,
    settings: &FireSettings,
    rng: &mut RngStream,
) -> Result<(Array1<f64>, Option<Array1<f64>>, f64, f64, Option<usize>)> {
    let (xhat, sigma_hat_y2, cg_iters) = match pick_solve(op, settings)? {
        SolveChoice::Svd => {
            (mmse_update_svd(y_eff, op, xbar, sigma_y_eff, nu)?, sigma_y_eff * sigma_y_eff, None)
        }
        SolveChoice::Cg => {
            let out = mmse_update_cg(y_eff, op, xbar, sigma_y_eff, nu, &settings.cg)?;
            (out.x, out.sigma_hat_y2, Some(out.iters))
        }
    };
    let sigma2_next = (sigma2 / rho).max(nu);
    let renoised = if last_iter {
        None
    } else {
        let c = match pick_renoise(op, settings)? {
            RenoisePath::Svd => {
                colored_noise_svd(op, sigma2_next, nu, sigma_y_eff, sigma_hat_y2, rng)?
            }
            _ => colored_noise_approx(op, sigma2_next, nu, sigma_y_eff, sigma_hat_y2, rng)?,
        };
        Some(&xhat + &c)
    };
    Ok((xhat, renoised, sigma2_next, sigma_hat_y2, cg_iters))
}

fn err_var(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let diff = a - b;
    diff.dot(&diff) / a.len() as f64
}

/// Runs the renoising loop on a standard linear model and returns the final
/// solve output together with per-iteration diagnostics.
#[allow(clippy::too_many_arguments)]
pub fn fire_slm(
    y: &Array1<f64>,
    op: &LinearOperator,
    sigma_y: f64,
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
    if y.len() != op.output_dim() || r_init.len() != op.input_dim() {
        return Err(FireError::DimensionMismatch(
            "fire_slm: measurement or iterate length does not match the operator".into(),
        ));
    }
    if denoiser.dim() != op.input_dim() {
        return Err(FireError::DimensionMismatch(
            "fire_slm: denoiser dimension does not match the operator".into(),
        ));
    }
    let sigma_y = settings.clamp_sigma_y(sigma_y);
    let nu_floor = settings.nu_floor();

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
        let est = estimate_nu(y, op, &xbar, sigma_y, nu_floor)?;
        let nu = match settings.nu_mode {
            NuMode::Estimated => est.nu,
            NuMode::Lookup => denoiser.output_err_var(sigma).max(nu_floor),
        };
        let (xh, renoised, sigma2_next, sigma_hat_y2, cg_iters) = solve_decrease_renoise(
            y,
            op,
            &xbar,
            sigma_y,
            nu,
            sigma2,
            rho,
            n == n_iters,
            settings,
            rng,
        )?;
        let truth = settings.ground_truth.as_ref().map(|x0| TruthRow {
            input_err_var: err_var(&r, x0),
            denoised_err_var: err_var(&xbar, x0),
            solved_err_var: err_var(&xh, x0),
            pseudo_noise_var: None,
        });
        rows.push(IterRow {
            step_k: 0,
            iter_n: n,
            sigma2,
            nu,
            resid_sq: est.resid_sq,
            sigma_hat_y2,
            cg_iters,
            glm: None,
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
