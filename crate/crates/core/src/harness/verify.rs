//! Runtime self-check suite: fast, named invariant checks across every
//! module, runnable from the command line.

use ndarray::{Array1, Array2};

use crate::fire::{estimate_nu, lambda_profile, mmse_update_cg, mmse_update_svd, CgSettings};
use crate::glm::{
    ep_extrinsic, magnitude_moments_quadrature, truncated_gaussian_moments, MeasurementChannel,
};
use crate::harness::metrics::{mse, psnr};
use crate::harness::oracle::{gaussian_posterior_oracle, GaussianPrior};
use crate::operators::{LinearOperator, C64};
use crate::priors::{DenoiserModel, NuTableConfig, PriorSpec};
use crate::rng::{derive_stream, standard_normal_vec};
use crate::scheduler::{ddim_step, plan_schedule};

/// One named invariant check with its measured value and pass threshold.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Measured figure (usually an error that should be small).
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, measured: f64, threshold: f64, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            passed: measured <= threshold,
            measured,
            threshold,
            detail: detail.into(),
        }
    }
}

fn sample_operators(seed: u64) -> Vec<(&'static str, LinearOperator)> {
    let mut rng = derive_stream(seed, 0, "verify", "dense");
    let a = Array2::from_shape_fn((6, 9), |_| {
        use rand::Rng;
        rng.sample::<f64, _>(rand_distr::StandardNormal)
    });
    vec![
        ("dense", LinearOperator::dense(a).unwrap()),
        ("mask", LinearOperator::mask(9, vec![0, 3, 4, 8]).unwrap()),
        ("circular_conv", LinearOperator::circular_conv(12, &[0.6, 0.3, 0.1]).unwrap()),
        ("decimated_conv", LinearOperator::decimated_conv(12, &[0.5, 0.5], 3).unwrap()),
        ("oversampled_fourier", LinearOperator::oversampled_fourier(2, 3).unwrap()),
        ("coded_diffraction", LinearOperator::coded_diffraction(2, 3, 2, 5).unwrap()),
    ]
}

fn adjoint_identity_check(seed: u64) -> CheckResult {
    let mut worst = 0.0f64;
    let mut worst_kind = "";
    for (kind, op) in sample_operators(seed) {
        let mut rng = derive_stream(seed, 1, "verify", kind);
        let x = standard_normal_vec(op.input_dim(), &mut rng);
        let y = standard_normal_vec(op.output_dim(), &mut rng);
        let ax = op.apply(&x).unwrap();
        let aty = op.adjoint(&y).unwrap();
        let lhs = ax.dot(&y);
        let rhs = x.dot(&aty);
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300);
        if rel > worst {
            worst = rel;
            worst_kind = kind;
        }
    }
    CheckResult::new(
        "operator_adjoint_identity",
        worst,
        1e-10,
        format!("worst relative <Ax,y> vs <x,A'y> mismatch at kind {worst_kind}"),
    )
}

fn solve_normal_equations_check(seed: u64) -> CheckResult {
    let mut worst = 0.0f64;
    let mut worst_kind = "";
    for (kind, op) in sample_operators(seed) {
        if op.svd().is_none() {
            continue;
        }
        let mut rng = derive_stream(seed, 2, "verify", kind);
        let y = standard_normal_vec(op.output_dim(), &mut rng);
        let xbar = standard_normal_vec(op.input_dim(), &mut rng);
        let (data_w, prior_w) = (4.0, 0.3);
        let x = op.solve_regularized(&y, &xbar, data_w, prior_w).unwrap();
        let lhs = op.adjoint(&op.apply(&x).unwrap()).unwrap().mapv(|v| v * data_w)
            + x.mapv(|v| v * prior_w);
        let rhs =
            op.adjoint(&y).unwrap().mapv(|v| v * data_w) + xbar.mapv(|v| v * prior_w);
        let diff = &lhs - &rhs;
        let rel = diff.dot(&diff).sqrt() / rhs.dot(&rhs).sqrt();
        if rel > worst {
            worst = rel;
            worst_kind = kind;
        }
    }
    CheckResult::new(
        "regularized_solve_normal_equations",
        worst,
        1e-9,
        format!("worst relative normal-equation residual at kind {worst_kind}"),
    )
}

fn cg_matches_factors_check(seed: u64) -> CheckResult {
    let mut rng = derive_stream(seed, 3, "verify", "cg");
    let a = Array2::from_shape_fn((10, 7), |_| {
        use rand::Rng;
        rng.sample::<f64, _>(rand_distr::StandardNormal)
    });
    let op = LinearOperator::dense(a).unwrap();
    let y = standard_normal_vec(10, &mut rng);
    let xbar = standard_normal_vec(7, &mut rng);
    let exact = mmse_update_svd(&y, &op, &xbar, 0.3, 0.8).unwrap();
    let cg = CgSettings { tol: 1e-12, ..Default::default() };
    let got = mmse_update_cg(&y, &op, &xbar, 0.3, 0.8, &cg).unwrap();
    let diff = &exact - &got.x;
    let rel = diff.dot(&diff).sqrt() / exact.dot(&exact).sqrt();
    CheckResult::new("cg_matches_factor_solve", rel, 1e-8, "dense 10x7 instance")
}

fn renoise_covariance_check(seed: u64) -> CheckResult {
    // On a circulant operator the shaped noise plus the solve error must have
    // a flat spectrum; check the sampled covariance diagonal in the Fourier
    // basis against λ(s²).
    let d = 8;
    let op = LinearOperator::circular_conv(d, &[0.7, 0.3]).unwrap();
    let (sigma2, nu, sigma_y) = (0.5, 0.2, 0.1);
    let lam = lambda_profile(sigma2, nu, sigma_y, sigma_y * sigma_y);
    let expected = op.lambda_spectrum(&lam).unwrap();
    let trials = 4000;
    let mut rng = derive_stream(seed, 4, "verify", "renoise");
    let mut acc = vec![0.0; d];
    let fft = crate::operators::Fft1d::new(d);
    for _ in 0..trials {
        let c = op.sample_colored(&lam, &mut rng).unwrap();
        let mut chat: Vec<C64> = c.iter().map(|&v| C64::new(v, 0.0)).collect();
        fft.forward_unitary(&mut chat);
        for (a, v) in acc.iter_mut().zip(chat.iter()) {
            *a += v.norm_sqr();
        }
    }
    let mut worst = 0.0f64;
    for (a, e) in acc.iter().zip(expected.iter()) {
        let emp = a / trials as f64;
        let rel = (emp - e).abs() / e.max(1e-12);
        worst = worst.max(rel);
    }
    CheckResult::new(
        "colored_renoise_spectrum",
        worst,
        0.15,
        format!("max relative spectrum error over {trials} draws"),
    )
}

fn nu_estimate_check(seed: u64) -> CheckResult {
    let d = 512;
    let op = LinearOperator::mask(d, (0..d).collect()).unwrap();
    let mut rng = derive_stream(seed, 5, "verify", "nu");
    let x0 = standard_normal_vec(d, &mut rng);
    let y = op.apply(&x0).unwrap();
    let xbar = &x0 + &standard_normal_vec(d, &mut rng).mapv(|v| v * 0.5);
    let est = estimate_nu(&y, &op, &xbar, 0.0, 1e-12).unwrap();
    let rel = (est.nu - 0.25).abs() / 0.25;
    CheckResult::new("nu_estimate_unbiased", rel, 0.25, "identity problem, true nu = 0.25")
}

fn plan_invariants_check() -> CheckResult {
    let mut violations = 0.0;
    let mut detail = String::from("grid of (K, delta, N_tot) plans");
    for &k in &[2usize, 5, 10, 16] {
        for &delta in &[0.0, 0.25, 0.4, 1.0] {
            for &n_tot in &[40usize, 60] {
                match plan_schedule(k, delta, n_tot, 1e-4, 1e2) {
                    Ok(plan) => {
                        let sum: usize = plan.n_k.iter().sum();
                        if sum > n_tot || plan.slack != n_tot - sum {
                            violations += 1.0;
                        }
                        let sigma_th2 = plan.sigmas2[plan.k_thresh - 1];
                        for (i, &n) in plan.n_k.iter().enumerate() {
                            let reached =
                                plan.sigmas2[i] / plan.rho.powi(n as i32 - 1);
                            if i + 1 > plan.k_thresh && reached > sigma_th2 * (1.0 + 1e-9) {
                                violations += 1.0;
                            }
                            if (i + 1 <= plan.k_thresh) != (n == 1) && delta > 0.0 {
                                // below threshold iff a single iteration
                                violations += 1.0;
                            }
                        }
                    }
                    Err(_) => {
                        // must only happen when the floor cost exceeds budget
                        let k_thresh = 1 + (((k - 1) as f64) * delta).floor() as usize;
                        if 2 * k - k_thresh <= n_tot {
                            violations += 1.0;
                            detail = format!("unexpected infeasible at K={k} delta={delta}");
                        }
                    }
                }
            }
        }
    }
    CheckResult::new("plan_budget_invariants", violations, 0.0, detail)
}

fn ddim_marginal_check(seed: u64) -> CheckResult {
    // With x_k ~ N(0, σ_k²) around a fixed x̂ = 0, the transition must give
    // Var(x_{k-1}) = σ_prev² for any eta in range.
    let (s2k, s2p): (f64, f64) = (4.0, 1.0);
    let n = 20000;
    let mut worst = 0.0f64;
    for (i, &eta) in [0.0, 0.5, 1.0].iter().enumerate() {
        let mut rng = derive_stream(seed, 6 + i as u64, "verify", "ddim");
        let xhat = Array1::zeros(1);
        let mut acc = 0.0;
        for _ in 0..n {
            let xk = standard_normal_vec(1, &mut rng).mapv(|v| v * s2k.sqrt());
            let out = ddim_step(&xk, &xhat, s2k, s2p, eta, &mut rng).unwrap();
            acc += out[0] * out[0];
        }
        let rel = (acc / n as f64 - s2p).abs() / s2p;
        worst = worst.max(rel);
    }
    CheckResult::new(
        "ddim_preserves_marginal_variance",
        worst,
        0.05,
        "scalar chain, eta in {0, 0.5, 1}",
    )
}

fn gaussian_channel_reduction_check(seed: u64) -> CheckResult {
    let mut rng = derive_stream(seed, 7, "verify", "ep");
    let a = Array2::from_shape_fn((5, 4), |_| {
        use rand::Rng;
        rng.sample::<f64, _>(rand_distr::StandardNormal)
    });
    let op = LinearOperator::dense(a).unwrap();
    let y = standard_normal_vec(5, &mut rng);
    let zbar = standard_normal_vec(5, &mut rng);
    let ch = MeasurementChannel::Gaussian { sigma_y2: 0.4 };
    let ext = ep_extrinsic(&y, &op, &zbar, 1.7, &ch, false).unwrap();
    let mut worst = (ext.sigma_y_bar2 - 0.4).abs() / 0.4;
    for j in 0..5 {
        worst = worst.max((ext.ybar[j] - y[j]).abs() / y[j].abs().max(1e-12));
    }
    CheckResult::new(
        "gaussian_channel_extrinsic_identity",
        worst,
        1e-9,
        "pseudo-measurements must equal raw measurements",
    )
}

fn channel_moment_quadrature_check() -> CheckResult {
    // Dequantization closed form against direct numerical integration.
    let mut worst = 0.0f64;
    for &(zbar, nu, sy2, lo, hi) in &[
        (0.0, 1.0, 0.5, 0.0, 1.0),
        (0.4, 2.0, 0.1, -1.0, 0.5),
        (-1.0, 0.5, 1.0, 0.0, f64::INFINITY),
    ] {
        let (m, v) = truncated_gaussian_moments(zbar, nu, sy2, lo, hi);
        let (mq, vq) = dequant_quadrature(zbar, nu, sy2, lo, hi);
        worst = worst.max((m - mq).abs() / vq.sqrt());
        worst = worst.max((v - vq).abs() / vq);
    }
    // Magnitude quadrature must satisfy the trivial zero-prior symmetry.
    let (m, _) = magnitude_moments_quadrature(1.0, C64::new(0.0, 0.0), 1.0, 0.1);
    worst = worst.max(m.norm());
    CheckResult::new(
        "channel_moments_match_quadrature",
        worst,
        1e-4,
        "closed forms vs direct integration",
    )
}

/// Direct grid integration of the noisy-quantizer posterior, used only as a
/// reference inside checks.
fn dequant_quadrature(zbar: f64, nu: f64, sy2: f64, lo: f64, hi: f64) -> (f64, f64) {
    let s = nu.sqrt();
    let n = 20001;
    let (a, b) = (zbar - 10.0 * s, zbar + 10.0 * s);
    let step = (b - a) / (n - 1) as f64;
    let (mut z0, mut z1, mut z2) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let z = a + step * i as f64;
        let prior = (-0.5 * (z - zbar) * (z - zbar) / nu).exp();
        let sy = sy2.sqrt().max(1e-12);
        let cdf = |t: f64| 0.5 * libm::erfc(-(t) / (sy * std::f64::consts::SQRT_2));
        let like = if sy2 == 0.0 {
            if z >= lo && z < hi {
                1.0
            } else {
                0.0
            }
        } else {
            let upper = if hi.is_finite() { cdf(hi - z) } else { 1.0 };
            let lower = if lo.is_finite() { cdf(lo - z) } else { 0.0 };
            upper - lower
        };
        let w = prior * like * if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        z0 += w;
        z1 += w * z;
        z2 += w * z * z;
    }
    let mean = z1 / z0;
    (mean, z2 / z0 - mean * mean)
}

fn fire_oracle_check(seed: u64) -> CheckResult {
    // The renoising loop is a randomized algorithm, so its conditional-mean
    // property is a statement about the mean of its output distribution:
    // average many runs on one fixed (r, y) pair and compare against the
    // analytic Gaussian conditional mean.
    use crate::fire::{fire_slm, FireSettings, NuMode};
    use crate::harness::oracle::combine_with_identity_observation;
    let (d, m) = (8, 5);
    let mut rng = derive_stream(seed, 8, "verify", "oracle");
    let a = Array2::from_shape_fn((m, d), |_| {
        use rand::Rng;
        rng.sample::<f64, _>(rand_distr::StandardNormal)
    });
    let op = LinearOperator::dense(a.clone()).unwrap();
    let spec = PriorSpec::isotropic(Array1::zeros(d), 1.0).unwrap();
    let denoiser =
        DenoiserModel::new(spec, &NuTableConfig { trials: 4000, ..Default::default() }).unwrap();
    let x0 = standard_normal_vec(d, &mut rng);
    let sigma_y = 0.1;
    let y = &op.apply(&x0).unwrap() + &standard_normal_vec(m, &mut rng).mapv(|v| v * sigma_y);
    let sigma_init = 1e5f64.sqrt();
    let r0 = &x0 + &standard_normal_vec(d, &mut rng).mapv(|v| v * sigma_init);
    let settings = FireSettings {
        stochastic_denoise: false,
        nu_mode: NuMode::Lookup,
        ..Default::default()
    };
    let runs = 2000;
    let mut mean = Array1::<f64>::zeros(d);
    for t in 0..runs {
        let mut solver_rng = derive_stream(seed, 9 + t, "verify", "oracle");
        let (xhat, _) = fire_slm(
            &y,
            &op,
            sigma_y,
            &r0,
            sigma_init,
            20,
            2.0,
            &denoiser,
            &settings,
            &mut solver_rng,
        )
        .unwrap();
        mean = mean + xhat;
    }
    mean.mapv_inplace(|v| v / runs as f64);
    let prior = GaussianPrior::Isotropic { mean: Array1::zeros(d), variance: 1.0 };
    let folded = combine_with_identity_observation(&prior, &r0, sigma_init).unwrap();
    let target = gaussian_posterior_oracle(&folded, &a, sigma_y, &y).unwrap();
    let diff = &mean - &target.mean;
    let rel = diff.dot(&diff).sqrt() / target.mean.dot(&target.mean).sqrt();
    CheckResult::new(
        "fire_matches_gaussian_conditional_mean",
        rel,
        0.03,
        format!("d=8 m=5, 20 iterations, mean of {runs} runs"),
    )
}

fn rng_discipline_check() -> CheckResult {
    let a: Vec<f64> = {
        let mut rng = derive_stream(1, 2, "mod", "tag");
        standard_normal_vec(4, &mut rng).to_vec()
    };
    let b: Vec<f64> = {
        let mut rng = derive_stream(1, 2, "mod", "tag");
        standard_normal_vec(4, &mut rng).to_vec()
    };
    let c: Vec<f64> = {
        let mut rng = derive_stream(1, 3, "mod", "tag");
        standard_normal_vec(4, &mut rng).to_vec()
    };
    let repro = a == b;
    let distinct = a != c;
    let violations = f64::from(!repro) + f64::from(!distinct);
    CheckResult::new("rng_stream_discipline", violations, 0.0, "reproducible and trial-keyed")
}

fn metrics_check() -> CheckResult {
    let x0 = Array1::from_elem(10, 0.5);
    let xhat = x0.mapv(|v| v + 0.1);
    let e1 = (mse(&xhat, &x0) - 0.01).abs();
    let e2 = (psnr(&xhat, &x0, 1.0) - 20.0).abs();
    let inf_ok = psnr(&x0, &x0, 1.0).is_infinite();
    CheckResult::new(
        "metric_closed_forms",
        e1 + e2 + f64::from(!inf_ok),
        1e-9,
        "mse/psnr closed-form cases",
    )
}

/// Runs every self-check and returns the results in execution order.
pub fn run_verification(seed: u64) -> Vec<CheckResult> {
    vec![
        adjoint_identity_check(seed),
        solve_normal_equations_check(seed),
        cg_matches_factors_check(seed),
        renoise_covariance_check(seed),
        nu_estimate_check(seed),
        plan_invariants_check(),
        ddim_marginal_check(seed),
        gaussian_channel_reduction_check(seed),
        channel_moment_quadrature_check(),
        fire_oracle_check(seed),
        rng_discipline_check(),
        metrics_check(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_passes() {
        let results = run_verification(0);
        assert_eq!(results.len(), 12);
        for r in &results {
            assert!(
                r.passed,
                "check {} failed: measured {} > threshold {} ({})",
                r.name, r.measured, r.threshold, r.detail
            );
        }
    }
}
