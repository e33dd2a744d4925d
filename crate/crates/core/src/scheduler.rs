//! Noise schedules, per-step iteration budgeting, and the outer sampling
//! loops that alternate conditional denoising with stochastic DDIM
//! transitions.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{FireError, Result};
use crate::fire::{fire_slm, FireSettings};
use crate::glm::{fire_glm, MeasurementChannel};
use crate::operators::LinearOperator;
use crate::priors::Denoiser;
use crate::record::RunRecord;
use crate::rng::{standard_normal_vec, RngStream};

/// Variance ladder `σ_1² < … < σ_K²`, stored ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub sigmas2: Vec<f64>,
}

impl NoiseSchedule {
    /// Geometric ladder from `sigma_min2` up to `sigma_max2` in `k` steps;
    /// a single step uses `sigma_max2` alone.
    pub fn geometric(k: usize, sigma_min2: f64, sigma_max2: f64) -> Result<Self> {
        if k == 0 {
            return Err(FireError::Config("schedule needs at least one step".into()));
        }
        if !(sigma_min2 > 0.0) || !(sigma_max2 >= sigma_min2) {
            return Err(FireError::Config(
                "schedule needs 0 < sigma_min2 <= sigma_max2".into(),
            ));
        }
        if k == 1 {
            return Ok(NoiseSchedule { sigmas2: vec![sigma_max2] });
        }
        let ratio = sigma_max2 / sigma_min2;
        let sigmas2 = (0..k)
            .map(|i| sigma_min2 * ratio.powf(i as f64 / (k - 1) as f64))
            .collect();
        Ok(NoiseSchedule { sigmas2 })
    }

    /// Ladder equivalent to a variance-preserving diffusion with cumulative
    /// signal fractions `alpha_bars` (descending in diffusion time).
    pub fn from_vp_alpha_bars(alpha_bars: &[f64]) -> Result<Self> {
        let mut sigmas2: Vec<f64> = alpha_bars.iter().map(|&a| vp_to_ve(a)).collect();
        sigmas2.sort_by(|a, b| a.partial_cmp(b).expect("non-finite variance"));
        if sigmas2.is_empty() || sigmas2.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(FireError::Config(
                "vp schedule needs alpha_bars strictly inside (0, 1)".into(),
            ));
        }
        Ok(NoiseSchedule { sigmas2 })
    }

    pub fn len(&self) -> usize {
        self.sigmas2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas2.is_empty()
    }
}

/// Variance-exploding noise level matching a variance-preserving state with
/// cumulative signal fraction `alpha_bar`: `σ² = (1 − ᾱ)/ᾱ`.
pub fn vp_to_ve(alpha_bar: f64) -> f64 {
    (1.0 - alpha_bar) / alpha_bar
}

/// Iteration budget across the sampling steps: how many inner denoising
/// iterations each outer step receives, and the variance-decrease factor ρ
/// shared by all of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirePlan {
    #[serde(rename = "K")]
    pub k: usize,
    pub delta: f64,
    #[serde(rename = "N_tot")]
    pub n_tot: usize,
    pub rho: f64,
    /// First step (1-based, counting from the low-noise end) whose inner loop
    /// still needs only one iteration.
    pub k_thresh: usize,
    #[serde(rename = "N_k")]
    pub n_k: Vec<usize>,
    #[serde(rename = "sigma_k2")]
    pub sigmas2: Vec<f64>,
    /// Unused iterations out of the total budget.
    pub slack: usize,
}

impl FirePlan {
    pub fn total_iters(&self) -> usize {
        self.n_k.iter().sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let plan: FirePlan = serde_json::from_str(s)?;
        if plan.k == 0 || plan.n_k.len() != plan.k || plan.sigmas2.len() != plan.k {
            return Err(FireError::Config("plan fields have inconsistent lengths".into()));
        }
        Ok(plan)
    }
}

/// Inner iterations needed to contract variance `sigma2` down to `sigma_th2`
/// by repeated division by `rho`.
fn iters_to_reach(sigma2: f64, sigma_th2: f64, rho: f64) -> usize {
    if sigma2 <= sigma_th2 {
        return 1;
    }
    let raw = (sigma2.ln() - sigma_th2.ln()) / rho.ln() + 1.0;
    (raw.max(1.0)).ceil() as usize
}

fn plan_counts(sigmas2: &[f64], k_thresh: usize, rho: f64) -> Vec<usize> {
    let sigma_th2 = sigmas2[k_thresh - 1];
    sigmas2
        .iter()
        .enumerate()
        .map(|(i, &s2)| if i + 1 <= k_thresh { 1 } else { iters_to_reach(s2, sigma_th2, rho) })
        .collect()
}

/// Budgets iterations over an arbitrary ascending variance ladder: steps at
/// or below the `delta`-quantile get one iteration; each higher step gets
/// enough iterations to contract back down to the threshold variance. The
/// returned ρ is the smallest contraction factor whose total fits `n_tot`.
pub fn plan_from_variances(sigmas2: &[f64], delta: f64, n_tot: usize) -> Result<FirePlan> {
    let k = sigmas2.len();
    if k == 0 {
        return Err(FireError::Config("plan needs at least one variance".into()));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(FireError::Config(format!("delta must lie in [0, 1], got {delta}")));
    }
    if sigmas2.windows(2).any(|w| !(w[0] < w[1])) || sigmas2.iter().any(|v| !(*v > 0.0)) {
        return Err(FireError::Config(
            "plan variances must be positive and strictly increasing".into(),
        ));
    }
    let k_thresh = 1 + (((k - 1) as f64) * delta).floor() as usize;
    // Even as ρ → ∞ every step above the threshold needs two iterations, so
    // the cheapest possible plan costs 2K − k_thresh.
    let floor_cost = 2 * k - k_thresh;
    if floor_cost > n_tot {
        return Err(FireError::InfeasibleSchedule(format!(
            "{k} steps with delta={delta} need at least {floor_cost} iterations, budget is {n_tot}"
        )));
    }
    let rho = if k_thresh == k {
        // Every step runs a single iteration; the contraction factor is
        // never exercised, so report a conventional value.
        2.0
    } else {
        let feasible =
            |rho: f64| plan_counts(sigmas2, k_thresh, rho).iter().sum::<usize>() <= n_tot;
        let mut hi = 2.0;
        while !feasible(hi) {
            hi *= 2.0;
        }
        let mut lo = 1.0;
        while hi - lo > 1e-6 * hi {
            let mid = 0.5 * (lo + hi);
            if mid > 1.0 && feasible(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    let n_k = plan_counts(sigmas2, k_thresh, rho);
    let used: usize = n_k.iter().sum();
    Ok(FirePlan {
        k,
        delta,
        n_tot,
        rho,
        k_thresh,
        n_k,
        sigmas2: sigmas2.to_vec(),
        slack: n_tot - used,
    })
}

/// Budgets iterations over a geometric noise ladder.
pub fn plan_schedule(
    k: usize,
    delta: f64,
    n_tot: usize,
    sigma_min2: f64,
    sigma_max2: f64,
) -> Result<FirePlan> {
    let schedule = NoiseSchedule::geometric(k, sigma_min2, sigma_max2)?;
    if k == 1 {
        if n_tot < 1 {
            return Err(FireError::InfeasibleSchedule("budget must be positive".into()));
        }
        return Ok(FirePlan {
            k: 1,
            delta,
            n_tot,
            rho: 2.0,
            k_thresh: 1,
            n_k: vec![1],
            sigmas2: schedule.sigmas2,
            slack: n_tot - 1,
        });
    }
    plan_from_variances(&schedule.sigmas2, delta, n_tot)
}

/// One stochastic DDIM transition in variance-exploding coordinates, from
/// noise level `sigma2_k` down to `sigma2_prev`. `eta = 0` is deterministic;
/// `eta = 1` redraws as much noise as the marginals allow.
pub fn ddim_step(
    xk: &Array1<f64>,
    xhat: &Array1<f64>,
    sigma2_k: f64,
    sigma2_prev: f64,
    eta: f64,
    rng: &mut RngStream,
) -> Result<Array1<f64>> {
    if xk.len() != xhat.len() {
        return Err(FireError::DimensionMismatch("ddim_step: state length mismatch".into()));
    }
    if !(sigma2_k > 0.0) || sigma2_prev < 0.0 || sigma2_prev >= sigma2_k {
        return Err(FireError::ContractViolation(format!(
            "ddim_step needs 0 <= sigma2_prev < sigma2_k, got {sigma2_prev} and {sigma2_k}"
        )));
    }
    if eta < 0.0 {
        return Err(FireError::Config("eta must be nonnegative".into()));
    }
    if sigma2_prev == 0.0 {
        return Ok(xhat.clone());
    }
    let varsigma2 = eta * eta * sigma2_prev * (sigma2_k - sigma2_prev) / sigma2_k;
    if varsigma2 > sigma2_prev * (1.0 + 1e-12) {
        return Err(FireError::Config(format!(
            "eta={eta} injects more noise than the target level allows at this step"
        )));
    }
    let varsigma2 = varsigma2.min(sigma2_prev);
    let h = ((sigma2_prev - varsigma2) / sigma2_k).sqrt();
    let mut x = xk.mapv(|v| v * h) + xhat.mapv(|v| v * (1.0 - h));
    if varsigma2 > 0.0 {
        let n = standard_normal_vec(xk.len(), rng);
        x += &n.mapv(|v| v * varsigma2.sqrt());
    }
    Ok(x)
}

/// Posterior sampling for a standard linear model: runs the plan's inner
/// denoising loop at every noise level, connected by DDIM transitions.
#[allow(clippy::too_many_arguments)]
pub fn ddfire_sample(
    y: &Array1<f64>,
    op: &LinearOperator,
    sigma_y: f64,
    plan: &FirePlan,
    eta: f64,
    denoiser: &dyn Denoiser,
    settings: &FireSettings,
    rng: &mut RngStream,
) -> Result<(Array1<f64>, RunRecord)> {
    let d = op.input_dim();
    let kk = plan.k;
    let mut x = standard_normal_vec(d, rng).mapv(|v| v * plan.sigmas2[kk - 1].sqrt());
    let mut record = RunRecord::new("ddfire");
    for k in (1..=kk).rev() {
        let sigma2_k = plan.sigmas2[k - 1];
        let (xhat, rows) = fire_slm(
            y,
            op,
            sigma_y,
            &x,
            sigma2_k.sqrt(),
            plan.n_k[k - 1],
            plan.rho,
            denoiser,
            settings,
            rng,
        )?;
        record.absorb(k, rows);
        let sigma2_prev = if k > 1 { plan.sigmas2[k - 2] } else { 0.0 };
        x = ddim_step(&x, &xhat, sigma2_k, sigma2_prev, eta, rng)?;
    }
    Ok((x, record))
}

/// Posterior sampling for a generalized-linear model.
#[allow(clippy::too_many_arguments)]
pub fn ddfire_glm_sample(
    y: &Array1<f64>,
    op: &LinearOperator,
    channel: &MeasurementChannel,
    plan: &FirePlan,
    eta: f64,
    denoiser: &dyn Denoiser,
    settings: &FireSettings,
    rng: &mut RngStream,
) -> Result<(Array1<f64>, RunRecord)> {
    let d = op.input_dim();
    let kk = plan.k;
    let mut x = standard_normal_vec(d, rng).mapv(|v| v * plan.sigmas2[kk - 1].sqrt());
    let mut record = RunRecord::new("ddfire-glm");
    for k in (1..=kk).rev() {
        let sigma2_k = plan.sigmas2[k - 1];
        let (xhat, rows) = fire_glm(
            y,
            op,
            channel,
            &x,
            sigma2_k.sqrt(),
            plan.n_k[k - 1],
            plan.rho,
            denoiser,
            settings,
            rng,
        )?;
        record.absorb(k, rows);
        let sigma2_prev = if k > 1 { plan.sigmas2[k - 2] } else { 0.0 };
        x = ddim_step(&x, &xhat, sigma2_k, sigma2_prev, eta, rng)?;
    }
    Ok((x, record))
}

/// Side information for guided sampling: a reference estimate and its error
/// variance expressed as a Gaussian observation `x_g = x₀ + N(0, σ_g²)`.
#[derive(Debug, Clone)]
pub struct GuidanceSpec {
    pub x_guide: Array1<f64>,
    pub sigma_g2: f64,
}

impl GuidanceSpec {
    /// Builds guidance from a reference whose per-coordinate error variance
    /// is `err_var`, deliberately down-weighted so the guide steers early
    /// steps without pinning the final sample.
    pub fn from_reference(x_guide: Array1<f64>, err_var: f64) -> Self {
        GuidanceSpec { x_guide, sigma_g2: 50.0 * err_var }
    }
}

/// Guided posterior sampling: every step fuses the diffusion state with a
/// noisy guide, so the inner loop starts from the fused point and its
/// (smaller) fused variance. The iteration budget is planned over those
/// fused variances.
#[allow(clippy::too_many_arguments)]
pub fn ddfire_guided_sample(
    y: &Array1<f64>,
    op: &LinearOperator,
    sigma_y: f64,
    schedule: &NoiseSchedule,
    guidance: &GuidanceSpec,
    delta: f64,
    n_tot: usize,
    eta: f64,
    denoiser: &dyn Denoiser,
    settings: &FireSettings,
    rng: &mut RngStream,
) -> Result<(Array1<f64>, RunRecord, FirePlan)> {
    let d = op.input_dim();
    if guidance.x_guide.len() != d {
        return Err(FireError::DimensionMismatch("guide length does not match operator".into()));
    }
    if !(guidance.sigma_g2 > 0.0) {
        return Err(FireError::Config("guide variance must be positive".into()));
    }
    let sg2 = guidance.sigma_g2;
    let fused: Vec<f64> =
        schedule.sigmas2.iter().map(|&s2| 1.0 / (1.0 / s2 + 1.0 / sg2)).collect();
    let plan = plan_from_variances(&fused, delta, n_tot)?;
    let kk = schedule.len();

    // One fresh noisy view of the guide per run.
    let guide_noisy =
        &guidance.x_guide + &standard_normal_vec(d, rng).mapv(|v| v * sg2.sqrt());
    let mut x = standard_normal_vec(d, rng).mapv(|v| v * schedule.sigmas2[kk - 1].sqrt());
    let mut record = RunRecord::new("ddfire-guided");
    for k in (1..=kk).rev() {
        let sigma2_k = schedule.sigmas2[k - 1];
        let w = sigma2_k + sg2;
        let r_k = x.mapv(|v| v * (sg2 / w)) + guide_noisy.mapv(|v| v * (sigma2_k / w));
        let (xhat, rows) = fire_slm(
            y,
            op,
            sigma_y,
            &r_k,
            fused[k - 1].sqrt(),
            plan.n_k[k - 1],
            plan.rho,
            denoiser,
            settings,
            rng,
        )?;
        record.absorb(k, rows);
        let sigma2_prev = if k > 1 { schedule.sigmas2[k - 2] } else { 0.0 };
        x = ddim_step(&x, &xhat, sigma2_k, sigma2_prev, eta, rng)?;
    }
    Ok((x, record, plan))
}
