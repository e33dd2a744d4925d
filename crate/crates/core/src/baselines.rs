//! Reference posterior samplers used for comparisons: a fixed-budget
//! decomposed-diffusion sampler, a plug-and-play half-quadratic-splitting
//! sampler, and an annealed regularization-by-denoising sampler.

use ndarray::Array1;

use crate::error::{FireError, Result};
use crate::fire::{mmse_update_cg, CgSettings};
use crate::operators::LinearOperator;
use crate::priors::Denoiser;
use crate::record::{IterRow, RunRecord};
use crate::rng::{standard_normal_vec, RngStream};
use crate::scheduler::{ddim_step, NoiseSchedule};

/// Decomposed diffusion sampling: denoise, then a *fixed* small number of
/// conjugate-gradient iterations on `(AᵀA + γI)x = Aᵀy + γx̄`, then a DDIM
/// transition.
#[derive(Debug, Clone)]
pub struct DdsConfig {
    /// Proximal weight γ of `‖x − x̄‖²` against `‖y − Ax‖²`.
    pub gamma: f64,
    /// Conjugate-gradient iterations per step (never run to convergence).
    pub cg_iters: usize,
    pub eta: f64,
}

impl Default for DdsConfig {
    fn default() -> Self {
        DdsConfig { gamma: 1.0, cg_iters: 5, eta: 0.8 }
    }
}

/// Fixed-iteration conjugate gradients on `(AᵀA + γI)x = b`, warm-started.
fn cg_fixed(
    op: &LinearOperator,
    b: &Array1<f64>,
    x0: &Array1<f64>,
    gamma: f64,
    iters: usize,
) -> Result<Array1<f64>> {
    let matvec =
        |v: &Array1<f64>| -> Result<Array1<f64>> { Ok(op.adjoint(&op.apply(v)?)? + v.mapv(|t| t * gamma)) };
    let mut x = x0.clone();
    let mut r = b - &matvec(&x)?;
    let mut p = r.clone();
    let mut rs = r.dot(&r);
    for _ in 0..iters {
        if rs == 0.0 {
            break;
        }
        let mp = matvec(&p)?;
        let denom = p.dot(&mp);
        if denom <= 0.0 {
            break;
        }
        let alpha = rs / denom;
        x = &x + &p.mapv(|t| t * alpha);
        r = &r - &mp.mapv(|t| t * alpha);
        let rs_new = r.dot(&r);
        let beta = rs_new / rs;
        p = &r + &p.mapv(|t| t * beta);
        rs = rs_new;
    }
    Ok(x)
}

pub fn dds_sample(
    y: &Array1<f64>,
    op: &LinearOperator,
    schedule: &NoiseSchedule,
    config: &DdsConfig,
    denoiser: &dyn Denoiser,
    rng: &mut RngStream,
) -> Result<(Array1<f64>, RunRecord)> {
    if config.cg_iters == 0 || !(config.gamma > 0.0) {
        return Err(FireError::Config("dds needs positive gamma and cg_iters".into()));
    }
    let d = op.input_dim();
    let kk = schedule.len();
    let aty = op.adjoint(y)?;
    let mut x = standard_normal_vec(d, rng).mapv(|v| v * schedule.sigmas2[kk - 1].sqrt());
    let mut record = RunRecord::new("dds");
    for k in (1..=kk).rev() {
        let sigma2_k = schedule.sigmas2[k - 1];
        let xbar = denoiser.denoise(&x, sigma2_k.sqrt(), rng);
        let b = &aty + &xbar.mapv(|v| v * config.gamma);
        let xhat = cg_fixed(op, &b, &xbar, config.gamma, config.cg_iters)?;
        let resid = y - &op.apply(&xhat)?;
        record.absorb(
            k,
            vec![IterRow {
                step_k: 0,
                iter_n: 1,
                sigma2: sigma2_k,
                nu: 1.0 / config.gamma,
                resid_sq: resid.dot(&resid),
                sigma_hat_y2: 1.0,
                cg_iters: Some(config.cg_iters),
                glm: None,
                truth: None,
            }],
        );
        let sigma2_prev = if k > 1 { schedule.sigmas2[k - 2] } else { 0.0 };
        x = ddim_step(&x, &xhat, sigma2_k, sigma2_prev, config.eta, rng)?;
    }
    Ok((x, record))
}

/// Plug-and-play half-quadratic splitting: denoise, a proximal data solve
/// whose weight tracks the noise level, then a noisy relaxation toward the
/// next level.
#[derive(Debug, Clone)]
pub struct DiffPirConfig {
    /// Regularization strength λ; the per-step prior weight is `λ/σ_k²`.
    pub lambda: f64,
    /// Fraction of the next level's variance that is re-drawn as fresh noise.
    pub eta: f64,
}

impl Default for DiffPirConfig {
    fn default() -> Self {
        DiffPirConfig { lambda: 1.0, eta: 0.5 }
    }
}

/// Regularized solve `argmin data_w‖y − Ax‖² + prior_w‖x − x̄‖²` through the
/// operator's factors when available, conjugate gradients otherwise.
fn reg_solve(
    y: &Array1<f64>,
    op: &LinearOperator,
    xbar: &Array1<f64>,
    data_w: f64,
    prior_w: f64,
) -> Result<Array1<f64>> {
    if op.svd().is_some() {
        op.solve_regularized(y, xbar, data_w, prior_w)
    } else {
        let cg = CgSettings::default();
        Ok(mmse_update_cg(y, op, xbar, data_w.sqrt().recip(), prior_w.recip(), &cg)?.x)
    }
}

pub fn diffpir_sample(
    y: &Array1<f64>,
    op: &LinearOperator,
    sigma_y: f64,
    schedule: &NoiseSchedule,
    config: &DiffPirConfig,
    denoiser: &dyn Denoiser,
    rng: &mut RngStream,
) -> Result<(Array1<f64>, RunRecord)> {
    if !(config.lambda > 0.0) || !(0.0..=1.0).contains(&config.eta) {
        return Err(FireError::Config("diffpir needs lambda > 0 and eta in [0, 1]".into()));
    }
    if !(sigma_y > 0.0) {
        return Err(FireError::Config("diffpir needs a positive noise level".into()));
    }
    let d = op.input_dim();
    let kk = schedule.len();
    let mut x = standard_normal_vec(d, rng).mapv(|v| v * schedule.sigmas2[kk - 1].sqrt());
    let mut record = RunRecord::new("diffpir");
    for k in (1..=kk).rev() {
        let sigma2_k = schedule.sigmas2[k - 1];
        let xbar = denoiser.denoise(&x, sigma2_k.sqrt(), rng);
        let data_w = 1.0 / (sigma_y * sigma_y);
        let prior_w = config.lambda / sigma2_k;
        let xhat = reg_solve(y, op, &xbar, data_w, prior_w)?;
        let resid = y - &op.apply(&xhat)?;
        record.absorb(
            k,
            vec![IterRow {
                step_k: 0,
                iter_n: 1,
                sigma2: sigma2_k,
                nu: 1.0 / prior_w,
                resid_sq: resid.dot(&resid),
                sigma_hat_y2: sigma_y * sigma_y,
                cg_iters: None,
                glm: None,
                truth: None,
            }],
        );
        let sigma2_prev = if k > 1 { schedule.sigmas2[k - 2] } else { 0.0 };
        if sigma2_prev == 0.0 {
            x = xhat;
        } else {
            let mix = ((1.0 - config.eta) * sigma2_prev / sigma2_k).sqrt();
            let noise = standard_normal_vec(d, rng)
                .mapv(|v| v * (config.eta * sigma2_prev).sqrt());
            x = x.mapv(|v| v * mix) + xhat.mapv(|v| v * (1.0 - mix)) + noise;
        }
    }
    Ok((x, record))
}

/// One annealing level of the regularization-by-denoising sampler.
#[derive(Debug, Clone)]
pub struct SnoreLevel {
    pub sigma: f64,
    /// Regularization strength at this level.
    pub alpha: f64,
    pub iters: usize,
}

/// Annealed stochastic regularization-by-denoising with a proximal data step.
#[derive(Debug, Clone)]
pub struct SnoreConfig {
    pub levels: Vec<SnoreLevel>,
    /// Proximal step size δ; stability needs `δ·α_i/σ_i² ≤ 1` at every level.
    pub delta: f64,
}

impl SnoreConfig {
    /// Geometric annealing from `sigma_max` down to `sigma_min` with
    /// `α_i = σ_i²` (so the denoiser weight is δ at every level) and an even
    /// split of the iteration budget.
    pub fn geometric(
        n_levels: usize,
        sigma_max: f64,
        sigma_min: f64,
        total_iters: usize,
        delta: f64,
    ) -> Result<Self> {
        if n_levels == 0 || total_iters < n_levels {
            return Err(FireError::Config(
                "snore needs at least one iteration per level".into(),
            ));
        }
        if !(sigma_min > 0.0) || !(sigma_max >= sigma_min) {
            return Err(FireError::Config("snore needs 0 < sigma_min <= sigma_max".into()));
        }
        let per = total_iters / n_levels;
        let mut extra = total_iters - per * n_levels;
        let mut levels = Vec::with_capacity(n_levels);
        for i in 0..n_levels {
            let t = if n_levels == 1 { 0.0 } else { i as f64 / (n_levels - 1) as f64 };
            let sigma = sigma_max * (sigma_min / sigma_max).powf(t);
            let iters = per + usize::from(extra > 0);
            extra = extra.saturating_sub(1);
            levels.push(SnoreLevel { sigma, alpha: sigma * sigma, iters });
        }
        Ok(SnoreConfig { levels, delta })
    }

    fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || !(self.delta > 0.0) {
            return Err(FireError::Config("snore needs levels and a positive delta".into()));
        }
        for l in &self.levels {
            if !(l.sigma > 0.0) || !(l.alpha >= 0.0) || l.iters == 0 {
                return Err(FireError::Config("snore level fields out of range".into()));
            }
            if self.delta * l.alpha / (l.sigma * l.sigma) > 1.0 + 1e-12 {
                return Err(FireError::Config(format!(
                    "snore is unstable: delta*alpha/sigma^2 = {} > 1 at sigma = {}",
                    self.delta * l.alpha / (l.sigma * l.sigma),
                    l.sigma
                )));
            }
        }
        Ok(())
    }
}

pub fn snore_sample(
    y: &Array1<f64>,
    op: &LinearOperator,
    sigma_y: f64,
    config: &SnoreConfig,
    denoiser: &dyn Denoiser,
    rng: &mut RngStream,
) -> Result<(Array1<f64>, RunRecord)> {
    config.validate()?;
    if !(sigma_y > 0.0) {
        return Err(FireError::Config("snore needs a positive noise level".into()));
    }
    let d = op.input_dim();
    let mut xhat = op.adjoint(y)?;
    let mut record = RunRecord::new("snore");
    let data_w = 1.0 / (sigma_y * sigma_y);
    let prior_w = 1.0 / config.delta;
    for (li, level) in config.levels.iter().enumerate() {
        let w = config.delta * level.alpha / (level.sigma * level.sigma);
        let mut rows = Vec::with_capacity(level.iters);
        for i in 1..=level.iters {
            let noise = standard_normal_vec(d, rng).mapv(|v| v * level.sigma);
            let r = &xhat + &noise;
            let den = denoiser.denoise(&r, level.sigma, rng);
            let xbar = xhat.mapv(|v| v * (1.0 - w)) + den.mapv(|v| v * w);
            xhat = reg_solve(y, op, &xbar, data_w, prior_w)?;
            let resid = y - &op.apply(&xhat)?;
            rows.push(IterRow {
                step_k: 0,
                iter_n: i,
                sigma2: level.sigma * level.sigma,
                nu: config.delta,
                resid_sq: resid.dot(&resid),
                sigma_hat_y2: sigma_y * sigma_y,
                cg_iters: None,
                glm: None,
                truth: None,
            });
        }
        record.absorb(config.levels.len() - li, rows);
    }
    Ok((xhat, record))
}

/// Proximal update of a magnitude observation `y ≈ |z|` on one complex entry
/// with pull-back weight `1/delta_z`: minimizes
/// `(y − |z|)²/(2σ_y²) + |z − z̄|²/(2δ_z)`, staying colinear with `z̄`.
pub fn magnitude_prox(
    y: f64,
    zbar: crate::operators::C64,
    sigma_y2: f64,
    delta_z: f64,
) -> crate::operators::C64 {
    let r = zbar.norm();
    if r == 0.0 {
        return zbar;
    }
    let rho = ((y / sigma_y2 + r / delta_z) / (1.0 / sigma_y2 + 1.0 / delta_z)).max(0.0);
    zbar / r * rho
}

/// Magnitude-only variant for norm-preserving operators (`AᵀA = I`): the
/// proximal data step runs per entry in measurement space and is pulled back
/// through the adjoint.
pub fn snore_sample_magnitude(
    y_mag: &Array1<f64>,
    op: &LinearOperator,
    sigma_y2: f64,
    config: &SnoreConfig,
    denoiser: &dyn Denoiser,
    rng: &mut RngStream,
) -> Result<(Array1<f64>, RunRecord)> {
    config.validate()?;
    if !op.complex_output() {
        return Err(FireError::Config(
            "magnitude sampler requires complex measurement entries".into(),
        ));
    }
    if !(sigma_y2 > 0.0) {
        return Err(FireError::Config("magnitude sampler needs a positive noise level".into()));
    }
    let m_ch = op.measurement_entries();
    if y_mag.len() != m_ch {
        return Err(FireError::DimensionMismatch(
            "magnitude observation length does not match entry count".into(),
        ));
    }
    let d = op.input_dim();
    // Zero-phase embedding of the magnitudes as the starting point.
    let mut y_embed = Array1::zeros(op.output_dim());
    for j in 0..m_ch {
        y_embed[2 * j] = y_mag[j];
    }
    let mut xhat = op.adjoint(&y_embed)?;
    let mut record = RunRecord::new("snore-mag");
    for (li, level) in config.levels.iter().enumerate() {
        let w = config.delta * level.alpha / (level.sigma * level.sigma);
        let mut rows = Vec::with_capacity(level.iters);
        for i in 1..=level.iters {
            let noise = standard_normal_vec(d, rng).mapv(|v| v * level.sigma);
            let r = &xhat + &noise;
            let den = denoiser.denoise(&r, level.sigma, rng);
            let xbar = xhat.mapv(|v| v * (1.0 - w)) + den.mapv(|v| v * w);
            let zbar = op.apply(&xbar)?;
            let mut dz = Array1::zeros(op.output_dim());
            let mut resid_sq = 0.0;
            for j in 0..m_ch {
                let zj = crate::operators::C64::new(zbar[2 * j], zbar[2 * j + 1]);
                let zj_new = magnitude_prox(y_mag[j], zj, sigma_y2, config.delta);
                dz[2 * j] = zj_new.re - zj.re;
                dz[2 * j + 1] = zj_new.im - zj.im;
                let e = y_mag[j] - zj.norm();
                resid_sq += e * e;
            }
            xhat = &xbar + &op.adjoint(&dz)?;
            rows.push(IterRow {
                step_k: 0,
                iter_n: i,
                sigma2: level.sigma * level.sigma,
                nu: config.delta,
                resid_sq,
                sigma_hat_y2: sigma_y2,
                cg_iters: None,
                glm: None,
                truth: None,
            });
        }
        record.absorb(config.levels.len() - li, rows);
    }
    Ok((xhat, record))
}
