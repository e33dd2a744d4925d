//! Analytic signal priors and their exact conditional-mean denoisers.
//!
//! Supported priors are an isotropic Gaussian and a Gaussian mixture with
//! isotropic components. A mixture may tile the signal: the signal splits
//! into `tiles` equal blocks, each an independent draw from the block-level
//! mixture, which scales patch-style priors to image-sized signals while the
//! per-block posterior stays exact.

use ndarray::{s, Array1};

use crate::error::{FireError, Result};
use crate::rng::{standard_normal_vec, RngStream};

/// Number of noise levels in the denoiser output-error table.
pub const NU_TABLE_POINTS: usize = 40;

/// Prior over signals.
#[derive(Debug, Clone)]
pub enum PriorSpec {
    /// `x ~ N(mean, variance · I)`.
    Isotropic { mean: Array1<f64>, variance: f64 },
    /// Each of `tiles` consecutive blocks is an independent draw from a
    /// mixture of isotropic Gaussians over the block dimension.
    Mixture {
        weights: Vec<f64>,
        means: Vec<Array1<f64>>,
        variances: Vec<f64>,
        tiles: usize,
    },
}

impl PriorSpec {
    /// Mixture over the full signal (single tile).
    pub fn mixture(weights: Vec<f64>, means: Vec<Array1<f64>>, variances: Vec<f64>) -> Result<Self> {
        Self::tiled_mixture(weights, means, variances, 1)
    }

    /// Mixture over blocks, repeated `tiles` times along the signal.
    pub fn tiled_mixture(
        weights: Vec<f64>,
        means: Vec<Array1<f64>>,
        variances: Vec<f64>,
        tiles: usize,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != variances.len() {
            return Err(FireError::ContractViolation(
                "mixture needs matching, nonempty weights/means/variances".into(),
            ));
        }
        if tiles == 0 {
            return Err(FireError::ContractViolation("mixture needs at least one tile".into()));
        }
        let b = means[0].len();
        if b == 0 || means.iter().any(|m| m.len() != b) {
            return Err(FireError::ContractViolation(
                "mixture component means must share a nonzero length".into(),
            ));
        }
        if variances.iter().any(|&v| !(v > 0.0)) {
            return Err(FireError::ContractViolation(
                "mixture component variances must be positive".into(),
            ));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(FireError::ContractViolation("mixture weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(FireError::ContractViolation("mixture weights must not all vanish".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(PriorSpec::Mixture { weights, means, variances, tiles })
    }

    pub fn isotropic(mean: Array1<f64>, variance: f64) -> Result<Self> {
        if mean.is_empty() || !(variance > 0.0) {
            return Err(FireError::ContractViolation(
                "isotropic prior needs a nonempty mean and positive variance".into(),
            ));
        }
        Ok(PriorSpec::Isotropic { mean, variance })
    }

    /// Signal dimension.
    pub fn dim(&self) -> usize {
        match self {
            PriorSpec::Isotropic { mean, .. } => mean.len(),
            PriorSpec::Mixture { means, tiles, .. } => means[0].len() * tiles,
        }
    }

    /// Second moment `E‖x‖²/d`, used for signal-scale defaults.
    pub fn second_moment(&self) -> f64 {
        match self {
            PriorSpec::Isotropic { mean, variance } => {
                variance + mean.dot(mean) / mean.len() as f64
            }
            PriorSpec::Mixture { weights, means, variances, .. } => {
                let b = means[0].len() as f64;
                weights
                    .iter()
                    .zip(means.iter().zip(variances))
                    .map(|(w, (mu, v))| w * (v + mu.dot(mu) / b))
                    .sum()
            }
        }
    }

    /// Draws one signal from the prior.
    pub fn sample(&self, rng: &mut RngStream) -> Array1<f64> {
        match self {
            PriorSpec::Isotropic { mean, variance } => {
                mean + &standard_normal_vec(mean.len(), rng).mapv(|e| e * variance.sqrt())
            }
            PriorSpec::Mixture { weights, means, variances, tiles } => {
                use rand::Rng;
                let b = means[0].len();
                let mut x = Array1::zeros(b * tiles);
                for t in 0..*tiles {
                    let u: f64 = rng.random();
                    let c = pick_component(weights, u);
                    let block =
                        &means[c] + &standard_normal_vec(b, rng).mapv(|e| e * variances[c].sqrt());
                    x.slice_mut(s![t * b..(t + 1) * b]).assign(&block);
                }
                x
            }
        }
    }
}

fn pick_component(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Anything that can act as the denoiser inside the renoising loop.
///
/// `denoise` must be pure given the stream argument; analytic denoisers
/// ignore the stream entirely. `output_err_var` reports the expected squared
/// denoising error per coordinate at input noise level `sigma`.
pub trait Denoiser: Send + Sync {
    fn dim(&self) -> usize;
    fn denoise(&self, r: &Array1<f64>, sigma: f64, rng: &mut RngStream) -> Array1<f64>;
    fn output_err_var(&self, sigma: f64) -> f64;
}

/// Exact conditional-mean denoiser for a [`PriorSpec`], with a Monte-Carlo
/// table of its output error variance over a log-spaced noise grid.
pub struct DenoiserModel {
    spec: PriorSpec,
    ln_sigma: Vec<f64>,
    ln_nu: Vec<f64>,
}

/// Monte-Carlo settings for the output-error table.
#[derive(Debug, Clone)]
pub struct NuTableConfig {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub points: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for NuTableConfig {
    fn default() -> Self {
        NuTableConfig {
            sigma_min: 1e-3,
            sigma_max: 1e2,
            points: NU_TABLE_POINTS,
            trials: 10_000,
            seed: 0,
        }
    }
}

impl DenoiserModel {
    /// Builds the denoiser and its output-error table.
    pub fn new(spec: PriorSpec, table: &NuTableConfig) -> Result<Self> {
        if !(table.sigma_min > 0.0) || !(table.sigma_max > table.sigma_min) {
            return Err(FireError::ContractViolation(
                "nu table needs 0 < sigma_min < sigma_max".into(),
            ));
        }
        if table.points < 2 || table.trials == 0 {
            return Err(FireError::ContractViolation(
                "nu table needs at least two grid points and one trial".into(),
            ));
        }
        let mut model = DenoiserModel { spec, ln_sigma: vec![], ln_nu: vec![] };
        let d = model.spec.dim() as f64;
        let lmin = table.sigma_min.ln();
        let lmax = table.sigma_max.ln();
        let mut ln_sigma = Vec::with_capacity(table.points);
        let mut nu = Vec::with_capacity(table.points);
        for j in 0..table.points {
            let ls = lmin + (lmax - lmin) * j as f64 / (table.points - 1) as f64;
            let sigma = ls.exp();
            let mut rng = derive_table_stream(table.seed, j as u64);
            let mut acc = 0.0;
            for _ in 0..table.trials {
                let x0 = model.spec.sample(&mut rng);
                let r = &x0 + &standard_normal_vec(x0.len(), &mut rng).mapv(|e| e * sigma);
                let xbar = model.denoise_mean(&r, sigma);
                let diff = &xbar - &x0;
                acc += diff.dot(&diff);
            }
            let mut v = acc / (table.trials as f64 * d);
            // The conditional mean can never do worse than the identity map,
            // so clip Monte-Carlo wobble to the σ² ceiling (and keep it positive).
            v = v.min(sigma * sigma).max(f64::MIN_POSITIVE);
            ln_sigma.push(ls);
            nu.push(v.ln());
        }
        isotonic_increasing(&mut nu);
        model.ln_sigma = ln_sigma;
        model.ln_nu = nu;
        Ok(model)
    }

    pub fn spec(&self) -> &PriorSpec {
        &self.spec
    }

    /// Table rows `(sigma, nu_hat)` for export.
    pub fn nu_table(&self) -> Vec<(f64, f64)> {
        self.ln_sigma
            .iter()
            .zip(&self.ln_nu)
            .map(|(&ls, &ln)| (ls.exp(), ln.exp()))
            .collect()
    }

    /// Exact posterior mean `E{x₀ | x₀ + σε = r}`.
    pub fn denoise_mean(&self, r: &Array1<f64>, sigma: f64) -> Array1<f64> {
        assert!(sigma > 0.0, "denoise needs sigma > 0");
        assert_eq!(r.len(), self.spec.dim(), "denoise input length mismatch");
        let s2 = sigma * sigma;
        match &self.spec {
            PriorSpec::Isotropic { mean, variance } => {
                let shrink = variance / (variance + s2);
                mean + &(r - mean).mapv(|v| v * shrink)
            }
            PriorSpec::Mixture { weights, means, variances, tiles } => {
                let b = means[0].len();
                let mut out = Array1::zeros(r.len());
                for t in 0..*tiles {
                    let rb = r.slice(s![t * b..(t + 1) * b]);
                    // log responsibilities under r = x + σε marginal
                    let mut logp: Vec<f64> = weights
                        .iter()
                        .zip(means.iter().zip(variances))
                        .map(|(w, (mu, v))| {
                            let tot = v + s2;
                            let diff = &rb.to_owned() - mu;
                            w.ln() - 0.5 * (b as f64) * tot.ln() - diff.dot(&diff) / (2.0 * tot)
                        })
                        .collect();
                    let mx = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for lp in logp.iter_mut() {
                        *lp = (*lp - mx).exp();
                        z += *lp;
                    }
                    let mut block = Array1::zeros(b);
                    for (c, g) in logp.iter().enumerate() {
                        let gamma = g / z;
                        let shrink = variances[c] / (variances[c] + s2);
                        let mu = &means[c];
                        for i in 0..b {
                            block[i] += gamma * (mu[i] + shrink * (rb[i] - mu[i]));
                        }
                    }
                    out.slice_mut(s![t * b..(t + 1) * b]).assign(&block);
                }
                out
            }
        }
    }

    /// Table lookup `ν̂(σ)`: log-log linear interpolation, clamped to the grid.
    pub fn nu_lookup(&self, sigma: f64) -> f64 {
        assert!(sigma > 0.0, "nu lookup needs sigma > 0");
        let ls = sigma.ln();
        let n = self.ln_sigma.len();
        if ls <= self.ln_sigma[0] {
            return self.ln_nu[0].exp();
        }
        if ls >= self.ln_sigma[n - 1] {
            return self.ln_nu[n - 1].exp();
        }
        let mut hi = 1;
        while self.ln_sigma[hi] < ls {
            hi += 1;
        }
        let (l0, l1) = (self.ln_sigma[hi - 1], self.ln_sigma[hi]);
        let t = (ls - l0) / (l1 - l0);
        ((1.0 - t) * self.ln_nu[hi - 1] + t * self.ln_nu[hi]).exp()
    }
}

fn derive_table_stream(seed: u64, point: u64) -> RngStream {
    crate::rng::derive_stream(seed, point, "priors", "nu-table")
}

impl Denoiser for DenoiserModel {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn denoise(&self, r: &Array1<f64>, sigma: f64, _rng: &mut RngStream) -> Array1<f64> {
        self.denoise_mean(r, sigma)
    }

    fn output_err_var(&self, sigma: f64) -> f64 {
        self.nu_lookup(sigma)
    }
}

/// Denoise then re-add white noise at the denoiser's own error level, so the
/// output error stays near the white level the table predicts. Returns the
/// perturbed estimate together with the table value used.
pub fn stochastic_denoise(
    den: &dyn Denoiser,
    r: &Array1<f64>,
    sigma: f64,
    rng: &mut RngStream,
) -> (Array1<f64>, f64) {
    let base = den.denoise(r, sigma, rng);
    let nu = den.output_err_var(sigma);
    let jitter = standard_normal_vec(base.len(), rng).mapv(|e| e * nu.sqrt());
    (base + jitter, nu)
}

/// Pool-adjacent-violators pass making the sequence nondecreasing (least
/// squares over equal weights), applied to the log table.
fn isotonic_increasing(v: &mut [f64]) {
    let n = v.len();
    let mut level: Vec<f64> = Vec::with_capacity(n);
    let mut count: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        level.push(v[i]);
        count.push(1);
        while level.len() > 1 && level[level.len() - 2] > level[level.len() - 1] {
            let (l1, c1) = (level.pop().unwrap(), count.pop().unwrap());
            let (l0, c0) = (level.pop().unwrap(), count.pop().unwrap());
            let c = c0 + c1;
            level.push((l0 * c0 as f64 + l1 * c1 as f64) / c as f64);
            count.push(c);
        }
    }
    let mut idx = 0;
    for (l, c) in level.iter().zip(count) {
        for _ in 0..c {
            v[idx] = *l;
            idx += 1;
        }
    }
}
