//! Serializable experiment configuration and builders for the runtime
//! objects it describes.

use std::path::PathBuf;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{FireError, Result};
use crate::fire::{CgSettings, FireSettings, NuMode, RenoisePath, SolvePath};
use crate::operators::LinearOperator;
use crate::priors::{NuTableConfig, PriorSpec};
use crate::rng::derive_stream;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorConfig {
    Isotropic {
        dim: usize,
        #[serde(default)]
        mean: f64,
        variance: f64,
    },
    /// Mixture of isotropic Gaussians over blocks of length
    /// `means[c].len()`, repeated `tiles` times along the signal.
    Mixture {
        #[serde(default = "one")]
        tiles: usize,
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        variances: Vec<f64>,
    },
}

fn one() -> usize {
    1
}

impl PriorConfig {
    pub fn build(&self) -> Result<PriorSpec> {
        match self {
            PriorConfig::Isotropic { dim, mean, variance } => {
                PriorSpec::isotropic(Array1::from_elem(*dim, *mean), *variance)
            }
            PriorConfig::Mixture { tiles, weights, means, variances } => {
                let means = means.iter().map(|m| Array1::from_vec(m.clone())).collect();
                PriorSpec::tiled_mixture(weights.clone(), means, variances.clone(), *tiles)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorConfig {
    Identity {
        d: usize,
    },
    /// Dense matrix with independent standard-normal entries drawn from
    /// `op_seed`.
    DenseGaussian {
        m: usize,
        d: usize,
        #[serde(default)]
        op_seed: u64,
    },
    Mask {
        d: usize,
        kept: Vec<usize>,
    },
    CircularConv {
        d: usize,
        taps: Vec<f64>,
    },
    DecimatedConv {
        d: usize,
        taps: Vec<f64>,
        factor: usize,
    },
    OversampledFourier {
        height: usize,
        width: usize,
    },
    CodedDiffraction {
        height: usize,
        width: usize,
        levels: usize,
        #[serde(default)]
        mask_seed: u64,
    },
}

impl OperatorConfig {
    pub fn build(&self) -> Result<LinearOperator> {
        match self {
            OperatorConfig::Identity { d } => LinearOperator::mask(*d, (0..*d).collect()),
            OperatorConfig::DenseGaussian { m, d, op_seed } => {
                if *m == 0 || *d == 0 {
                    return Err(FireError::Config("dense operator needs m, d >= 1".into()));
                }
                let mut rng = derive_stream(*op_seed, 0, "harness", "operator-dense");
                let a = Array2::from_shape_fn((*m, *d), |_| {
                    use rand::Rng;
                    rng.sample::<f64, _>(rand_distr::StandardNormal)
                });
                LinearOperator::dense(a)
            }
            OperatorConfig::Mask { d, kept } => LinearOperator::mask(*d, kept.clone()),
            OperatorConfig::CircularConv { d, taps } => LinearOperator::circular_conv(*d, taps),
            OperatorConfig::DecimatedConv { d, taps, factor } => {
                LinearOperator::decimated_conv(*d, taps, *factor)
            }
            OperatorConfig::OversampledFourier { height, width } => {
                LinearOperator::oversampled_fourier(*height, *width)
            }
            OperatorConfig::CodedDiffraction { height, width, levels, mask_seed } => {
                LinearOperator::coded_diffraction(*height, *width, *levels, *mask_seed)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    /// Additive white noise with per-coordinate level `sigma_y`.
    Gaussian { sigma_y: f64 },
    /// Intensity-proportional noise on squared magnitudes.
    Shot { alpha: f64 },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelConfig {
    #[default]
    Gaussian,
    Magnitude,
    Dequantization {
        edges: Vec<f64>,
    },
}

fn default_true() -> bool {
    true
}

/// Serializable mirror of [`FireSettings`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FireSettingsConfig {
    /// "auto" | "svd" | "cg"
    pub solve_path: String,
    /// "auto" | "svd" | "approx"
    pub renoise_path: String,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub cg_speedup: bool,
    pub condition_cap: f64,
    #[serde(default = "default_true")]
    pub stochastic_denoise: bool,
    /// "estimated" | "lookup"
    pub nu_mode: String,
    pub nu_floor_rel: f64,
    /// Root-mean-square signal value; defaults to the prior's.
    pub signal_scale: Option<f64>,
    pub glm_nu_factor: f64,
    pub laplace_channel: bool,
    /// Record ground-truth error columns per iteration.
    pub track_truth: bool,
}

impl Default for FireSettingsConfig {
    fn default() -> Self {
        let base = FireSettings::default();
        FireSettingsConfig {
            solve_path: "auto".into(),
            renoise_path: "auto".into(),
            cg_tol: base.cg.tol,
            cg_max_iters: base.cg.max_iters,
            cg_speedup: base.cg.speedup,
            condition_cap: base.cg.condition_cap,
            stochastic_denoise: base.stochastic_denoise,
            nu_mode: "estimated".into(),
            nu_floor_rel: base.nu_floor_rel,
            signal_scale: None,
            glm_nu_factor: base.glm_nu_factor,
            laplace_channel: base.laplace_channel,
            track_truth: false,
        }
    }
}

impl FireSettingsConfig {
    pub fn build(&self, prior: &PriorSpec) -> Result<FireSettings> {
        let solve_path = match self.solve_path.as_str() {
            "auto" => SolvePath::Auto,
            "svd" => SolvePath::Svd,
            "cg" => SolvePath::Cg,
            other => {
                return Err(FireError::Config(format!("unknown solve_path \"{other}\"")));
            }
        };
        let renoise_path = match self.renoise_path.as_str() {
            "auto" => RenoisePath::Auto,
            "svd" => RenoisePath::Svd,
            "approx" => RenoisePath::Approx,
            other => {
                return Err(FireError::Config(format!("unknown renoise_path \"{other}\"")));
            }
        };
        let nu_mode = match self.nu_mode.as_str() {
            "estimated" => NuMode::Estimated,
            "lookup" => NuMode::Lookup,
            other => return Err(FireError::Config(format!("unknown nu_mode \"{other}\""))),
        };
        let signal_scale = match self.signal_scale {
            Some(s) if s > 0.0 => s,
            Some(_) => return Err(FireError::Config("signal_scale must be positive".into())),
            None => prior.second_moment().sqrt(),
        };
        Ok(FireSettings {
            solve_path,
            renoise_path,
            cg: CgSettings {
                tol: self.cg_tol,
                max_iters: self.cg_max_iters,
                speedup: self.cg_speedup,
                condition_cap: self.condition_cap,
            },
            stochastic_denoise: self.stochastic_denoise,
            nu_mode,
            nu_floor_rel: self.nu_floor_rel,
            signal_scale,
            glm_nu_factor: self.glm_nu_factor,
            laplace_channel: self.laplace_channel,
            ground_truth: None,
        })
    }
}

fn default_eta() -> f64 {
    1.0
}

fn default_rho() -> f64 {
    2.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolverConfig {
    /// Full posterior sampler: planned inner iterations across a noise ladder
    /// with stochastic transitions between levels.
    Ddfire {
        k: usize,
        delta: f64,
        n_tot: usize,
        #[serde(default = "default_eta")]
        eta: f64,
        sigma_min2: Option<f64>,
        sigma_max2: Option<f64>,
        #[serde(default)]
        settings: FireSettingsConfig,
    },
    /// Single conditional-denoising run from a known input noise level: the
    /// trial draws `r = x₀ + σ_init·ε` and iterates to the conditional mean.
    Fire {
        sigma_init2: f64,
        n_iters: usize,
        #[serde(default = "default_rho")]
        rho: f64,
        #[serde(default)]
        settings: FireSettingsConfig,
    },
    Dds {
        k: usize,
        gamma: f64,
        cg_iters: usize,
        #[serde(default = "default_eta")]
        eta: f64,
        sigma_min2: Option<f64>,
        sigma_max2: Option<f64>,
    },
    Diffpir {
        k: usize,
        lambda: f64,
        #[serde(default = "default_eta")]
        eta: f64,
        sigma_min2: Option<f64>,
        sigma_max2: Option<f64>,
    },
    Snore {
        levels: usize,
        total_iters: usize,
        delta: f64,
        sigma_min: Option<f64>,
        sigma_max: Option<f64>,
    },
}

impl SolverConfig {
    pub fn name(&self) -> &'static str {
        match self {
            SolverConfig::Ddfire { .. } => "ddfire",
            SolverConfig::Fire { .. } => "fire",
            SolverConfig::Dds { .. } => "dds",
            SolverConfig::Diffpir { .. } => "diffpir",
            SolverConfig::Snore { .. } => "snore",
        }
    }
}

/// Serializable mirror of [`NuTableConfig`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NuTableSection {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub points: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for NuTableSection {
    fn default() -> Self {
        let base = NuTableConfig::default();
        NuTableSection {
            sigma_min: base.sigma_min,
            sigma_max: base.sigma_max,
            points: base.points,
            trials: base.trials,
            seed: base.seed,
        }
    }
}

impl NuTableSection {
    pub fn build(&self) -> NuTableConfig {
        NuTableConfig {
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
            points: self.points,
            trials: self.trials,
            seed: self.seed,
        }
    }
}

/// Inputs for the renoising-spectrum export.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectraConfig {
    pub sigma2: f64,
    pub nu: f64,
    pub sigma_y: f64,
    /// Also tabulate the conditioning-capped noise level.
    #[serde(default)]
    pub speedup: bool,
    #[serde(default)]
    pub condition_cap: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub prior: PriorConfig,
    pub operator: OperatorConfig,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub channel: ChannelConfig,
    pub solver: SolverConfig,
    pub trials: u64,
    #[serde(default)]
    pub seed: u64,
    /// 0 lets the thread pool pick its own width.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Peak value used for the decibel metric.
    #[serde(default)]
    pub peak: Option<f64>,
    #[serde(default)]
    pub nu_table: NuTableSection,
    #[serde(default)]
    pub spectra: Option<SpectraConfig>,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Cross-field validation beyond what each builder checks.
    pub fn validate(&self) -> Result<()> {
        let prior = self.prior.build()?;
        let op = self.operator.build()?;
        if prior.dim() != op.input_dim() {
            return Err(FireError::Config(format!(
                "prior dimension {} does not match operator input {}",
                prior.dim(),
                op.input_dim()
            )));
        }
        match (&self.noise, &self.channel) {
            (NoiseConfig::Shot { .. }, ChannelConfig::Magnitude) => {}
            (NoiseConfig::Shot { .. }, _) => {
                return Err(FireError::Config(
                    "shot noise is only defined for the magnitude channel".into(),
                ));
            }
            (NoiseConfig::Gaussian { sigma_y }, _) if !(*sigma_y >= 0.0) => {
                return Err(FireError::Config("sigma_y must be nonnegative".into()));
            }
            _ => {}
        }
        match (&self.channel, &self.solver) {
            (ChannelConfig::Gaussian, _) => {}
            (_, SolverConfig::Ddfire { .. }) | (_, SolverConfig::Fire { .. }) => {}
            (ChannelConfig::Magnitude, SolverConfig::Snore { .. }) => {}
            (ch, sv) => {
                return Err(FireError::Config(format!(
                    "solver \"{}\" does not support the {:?} channel",
                    sv.name(),
                    ch
                )));
            }
        }
        if matches!(self.channel, ChannelConfig::Magnitude) && !op.complex_output() {
            return Err(FireError::Config(
                "magnitude channel requires a complex-output operator".into(),
            ));
        }
        if matches!(self.channel, ChannelConfig::Dequantization { .. }) && op.complex_output() {
            return Err(FireError::Config(
                "dequantization channel requires a real-output operator".into(),
            ));
        }
        Ok(())
    }
}
