//! Deterministic multi-trial experiment execution.

use std::fs::{self, File};
use std::time::Instant;

use ndarray::Array1;
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{
    dds_sample, diffpir_sample, snore_sample, snore_sample_magnitude, DdsConfig, DiffPirConfig,
    SnoreConfig,
};
use crate::error::{FireError, Result};
use crate::fire::{
    effective_sigma_y2, fire_slm, lambda_profile, xi_coefficient, CgSettings, FireSettings,
    SIGMA_Y_REL_FLOOR,
};
use crate::glm::{fire_glm, magnitude_noise_from_shot, shot_noise_measure, MeasurementChannel};
use crate::harness::config::{
    ChannelConfig, ExperimentConfig, NoiseConfig, SolverConfig, SpectraConfig,
};
use crate::harness::io::{write_f32_blob, write_nu_table_csv, SpectrumRow};
use crate::harness::metrics::{mse, psnr};
use crate::operators::{LinearOperator, C64};
use crate::priors::{DenoiserModel, PriorSpec};
use crate::record::RunRecord;
use crate::rng::{derive_stream, standard_normal_vec};
use crate::scheduler::{ddfire_glm_sample, ddfire_sample, plan_schedule, FirePlan, NoiseSchedule};

/// Per-trial outcome as it appears in the manifest. Wall time lives only
/// here, never in the CSV traces, so trace files stay bit-reproducible.
#[derive(Debug, Clone, Serialize)]
pub struct TrialSummary {
    pub trial: u64,
    pub mse: Option<f64>,
    /// Decibels; absent when the trial failed or the error was exactly zero.
    pub psnr_db: Option<f64>,
    /// Squared measurement-space residual of the final estimate, when the
    /// channel defines one.
    pub resid_sq: Option<f64>,
    pub nfe: usize,
    pub cg_iters: usize,
    pub wall_ms: f64,
    pub error: Option<String>,
}

/// In-memory result of a full experiment.
pub struct ExperimentOutcome {
    pub solver: String,
    pub trials: Vec<TrialSummary>,
    /// One record per trial (empty when the trial failed).
    pub records: Vec<RunRecord>,
    pub estimates: Vec<Option<Array1<f64>>>,
    pub truths: Vec<Array1<f64>>,
    pub plan: Option<FirePlan>,
}

impl ExperimentOutcome {
    pub fn mean_mse(&self) -> Option<f64> {
        let vals: Vec<f64> = self.trials.iter().filter_map(|t| t.mse).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    pub fn ok_trials(&self) -> usize {
        self.trials.iter().filter(|t| t.error.is_none()).count()
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    package_version: &'static str,
    solver: &'a str,
    config: &'a ExperimentConfig,
    aggregate: Aggregate,
    trials: &'a [TrialSummary],
}

#[derive(Serialize)]
struct Aggregate {
    trials_ok: usize,
    mean_mse: Option<f64>,
    total_nfe: usize,
    total_cg_iters: usize,
    wall_ms_total: f64,
}

/// Everything shared (immutably) across trials.
struct SharedSetup {
    prior: PriorSpec,
    op: LinearOperator,
    denoiser: DenoiserModel,
    settings: FireSettings,
    plan: Option<FirePlan>,
    schedule: Option<NoiseSchedule>,
    snore: Option<SnoreConfig>,
    track_truth: bool,
    peak: f64,
    sigma_y_floor: f64,
}

fn resolve_ladder(
    sigma_min2: Option<f64>,
    sigma_max2: Option<f64>,
    second_moment: f64,
) -> (f64, f64) {
    (
        sigma_min2.unwrap_or(1e-6 * second_moment),
        sigma_max2.unwrap_or(400.0 * second_moment),
    )
}

fn build_setup(config: &ExperimentConfig) -> Result<SharedSetup> {
    config.validate()?;
    let prior = config.prior.build()?;
    let op = config.operator.build()?;
    let denoiser = DenoiserModel::new(prior.clone(), &config.nu_table.build())?;
    let second = prior.second_moment();
    let default_settings = crate::harness::config::FireSettingsConfig::default();
    let (settings_cfg, track_truth) = match &config.solver {
        SolverConfig::Ddfire { settings, .. } | SolverConfig::Fire { settings, .. } => {
            (settings.clone(), settings.track_truth)
        }
        _ => (default_settings, false),
    };
    let settings = settings_cfg.build(&prior)?;
    let mut plan = None;
    let mut schedule = None;
    let mut snore = None;
    match &config.solver {
        SolverConfig::Ddfire { k, delta, n_tot, sigma_min2, sigma_max2, .. } => {
            let (lo, hi) = resolve_ladder(*sigma_min2, *sigma_max2, second);
            plan = Some(plan_schedule(*k, *delta, *n_tot, lo, hi)?);
        }
        SolverConfig::Dds { k, sigma_min2, sigma_max2, .. }
        | SolverConfig::Diffpir { k, sigma_min2, sigma_max2, .. } => {
            let (lo, hi) = resolve_ladder(*sigma_min2, *sigma_max2, second);
            schedule = Some(NoiseSchedule::geometric(*k, lo, hi)?);
        }
        SolverConfig::Snore { levels, total_iters, delta, sigma_min, sigma_max } => {
            let rms = second.sqrt();
            let hi = sigma_max.unwrap_or(rms);
            let lo = sigma_min.unwrap_or(0.05 * rms);
            snore = Some(SnoreConfig::geometric(*levels, hi, lo, *total_iters, *delta)?);
        }
        SolverConfig::Fire { .. } => {}
    }
    Ok(SharedSetup {
        prior,
        op,
        denoiser,
        settings,
        plan,
        schedule,
        snore,
        track_truth,
        peak: config.peak.unwrap_or(1.0),
        sigma_y_floor: SIGMA_Y_REL_FLOOR * second.sqrt(),
    })
}

/// Computes the iteration plan a sampler config implies, without running any
/// trials. Errors unless the solver is the planned-ladder sampler.
pub fn plan_for_config(config: &ExperimentConfig) -> Result<FirePlan> {
    config.validate()?;
    match &config.solver {
        SolverConfig::Ddfire { k, delta, n_tot, sigma_min2, sigma_max2, .. } => {
            let second = config.prior.build()?.second_moment();
            let (lo, hi) = resolve_ladder(*sigma_min2, *sigma_max2, second);
            plan_schedule(*k, *delta, *n_tot, lo, hi)
        }
        other => Err(FireError::Config(format!(
            "solver \"{}\" has no iteration plan",
            other.name()
        ))),
    }
}

/// Observations handed to the solver for one trial.
enum Observation {
    /// Linear measurements and their per-coordinate noise level.
    Linear { y: Array1<f64>, sigma_y: f64 },
    Channel { y: Array1<f64>, channel: MeasurementChannel },
}

fn quantize(u: f64, edges: &[f64]) -> f64 {
    // partition_point gives the count of edges <= u; clamp into end bins so
    // out-of-range values land in the nearest one.
    let idx = edges.partition_point(|&e| e <= u);
    (idx.max(1).min(edges.len() - 1) - 1) as f64
}

fn make_observation(
    config: &ExperimentConfig,
    setup: &SharedSetup,
    z: &Array1<f64>,
    rng: &mut crate::rng::RngStream,
) -> Result<Observation> {
    let m_ch = setup.op.measurement_entries();
    match (&config.noise, &config.channel) {
        (NoiseConfig::Gaussian { sigma_y }, ChannelConfig::Gaussian) => {
            let noise = standard_normal_vec(z.len(), rng).mapv(|v| v * *sigma_y);
            Ok(Observation::Linear { y: z + &noise, sigma_y: *sigma_y })
        }
        (NoiseConfig::Gaussian { sigma_y }, ChannelConfig::Magnitude) => {
            let noise = standard_normal_vec(m_ch, rng);
            let y = Array1::from_shape_fn(m_ch, |j| {
                let mag = C64::new(z[2 * j], z[2 * j + 1]).norm();
                mag + sigma_y * noise[j]
            });
            Ok(Observation::Channel {
                y,
                channel: MeasurementChannel::Magnitude { sigma_y2: sigma_y * sigma_y },
            })
        }
        (NoiseConfig::Shot { alpha }, ChannelConfig::Magnitude) => {
            let y = shot_noise_measure(z, *alpha, rng);
            let sigma_y2 = magnitude_noise_from_shot(*alpha);
            Ok(Observation::Channel { y, channel: MeasurementChannel::Magnitude { sigma_y2 } })
        }
        (NoiseConfig::Gaussian { sigma_y }, ChannelConfig::Dequantization { edges }) => {
            let noise = standard_normal_vec(z.len(), rng).mapv(|v| v * *sigma_y);
            let u = z + &noise;
            let y = u.mapv(|v| quantize(v, edges));
            Ok(Observation::Channel {
                y,
                channel: MeasurementChannel::Dequantization {
                    edges: edges.clone(),
                    sigma_y2: sigma_y * sigma_y,
                },
            })
        }
        _ => Err(FireError::Config("unsupported noise/channel combination".into())),
    }
}

/// Measurement-space residual of an estimate, when the channel defines one.
fn final_resid_sq(
    obs: &Observation,
    op: &LinearOperator,
    xhat: &Array1<f64>,
) -> Result<Option<f64>> {
    let z = op.apply(xhat)?;
    match obs {
        Observation::Linear { y, .. } => {
            let r = y - &z;
            Ok(Some(r.dot(&r)))
        }
        Observation::Channel { y, channel: MeasurementChannel::Magnitude { .. } } => {
            let mut acc = 0.0;
            for j in 0..y.len() {
                let e = y[j] - C64::new(z[2 * j], z[2 * j + 1]).norm();
                acc += e * e;
            }
            Ok(Some(acc))
        }
        Observation::Channel { .. } => Ok(None),
    }
}

struct TrialData {
    summary: TrialSummary,
    record: RunRecord,
    xhat: Option<Array1<f64>>,
    x0: Array1<f64>,
}

fn run_trial(config: &ExperimentConfig, setup: &SharedSetup, trial: u64) -> TrialData {
    let start = Instant::now();
    let mut truth_rng = derive_stream(config.seed, trial, "harness", "truth");
    let x0 = setup.prior.sample(&mut truth_rng);
    let mut summary = TrialSummary {
        trial,
        mse: None,
        psnr_db: None,
        resid_sq: None,
        nfe: 0,
        cg_iters: 0,
        wall_ms: 0.0,
        error: None,
    };
    let solve = (|| -> Result<(Array1<f64>, RunRecord, Observation)> {
        let z = setup.op.apply(&x0)?;
        let mut meas_rng = derive_stream(config.seed, trial, "harness", "meas");
        let obs = make_observation(config, setup, &z, &mut meas_rng)?;
        let mut solver_rng = derive_stream(config.seed, trial, "harness", "solver");
        let mut settings = setup.settings.clone();
        if setup.track_truth {
            settings.ground_truth = Some(x0.clone());
        }
        let (xhat, record) = match (&config.solver, &obs) {
            (SolverConfig::Ddfire { eta, .. }, Observation::Linear { y, sigma_y }) => {
                let plan = setup.plan.as_ref().expect("plan built in setup");
                ddfire_sample(
                    y,
                    &setup.op,
                    *sigma_y,
                    plan,
                    *eta,
                    &setup.denoiser,
                    &settings,
                    &mut solver_rng,
                )?
            }
            (SolverConfig::Ddfire { eta, .. }, Observation::Channel { y, channel }) => {
                let plan = setup.plan.as_ref().expect("plan built in setup");
                ddfire_glm_sample(
                    y,
                    &setup.op,
                    channel,
                    plan,
                    *eta,
                    &setup.denoiser,
                    &settings,
                    &mut solver_rng,
                )?
            }
            (SolverConfig::Fire { sigma_init2, n_iters, rho, .. }, obs) => {
                let mut init_rng = derive_stream(config.seed, trial, "harness", "init");
                let r0 = &x0
                    + &standard_normal_vec(x0.len(), &mut init_rng)
                        .mapv(|v| v * sigma_init2.sqrt());
                let (xhat, rows) = match obs {
                    Observation::Linear { y, sigma_y } => fire_slm(
                        y,
                        &setup.op,
                        *sigma_y,
                        &r0,
                        sigma_init2.sqrt(),
                        *n_iters,
                        *rho,
                        &setup.denoiser,
                        &settings,
                        &mut solver_rng,
                    )?,
                    Observation::Channel { y, channel } => fire_glm(
                        y,
                        &setup.op,
                        channel,
                        &r0,
                        sigma_init2.sqrt(),
                        *n_iters,
                        *rho,
                        &setup.denoiser,
                        &settings,
                        &mut solver_rng,
                    )?,
                };
                let mut record = RunRecord::new("fire");
                record.absorb(1, rows);
                (xhat, record)
            }
            (
                SolverConfig::Dds { gamma, cg_iters, eta, .. },
                Observation::Linear { y, .. },
            ) => {
                let schedule = setup.schedule.as_ref().expect("schedule built in setup");
                let cfg = DdsConfig { gamma: *gamma, cg_iters: *cg_iters, eta: *eta };
                dds_sample(y, &setup.op, schedule, &cfg, &setup.denoiser, &mut solver_rng)?
            }
            (SolverConfig::Diffpir { lambda, eta, .. }, Observation::Linear { y, sigma_y }) => {
                let schedule = setup.schedule.as_ref().expect("schedule built in setup");
                let cfg = DiffPirConfig { lambda: *lambda, eta: *eta };
                diffpir_sample(
                    y,
                    &setup.op,
                    sigma_y.max(setup.sigma_y_floor),
                    schedule,
                    &cfg,
                    &setup.denoiser,
                    &mut solver_rng,
                )?
            }
            (SolverConfig::Snore { .. }, Observation::Linear { y, sigma_y }) => {
                let cfg = setup.snore.as_ref().expect("snore config built in setup");
                snore_sample(
                    y,
                    &setup.op,
                    sigma_y.max(setup.sigma_y_floor),
                    cfg,
                    &setup.denoiser,
                    &mut solver_rng,
                )?
            }
            (
                SolverConfig::Snore { .. },
                Observation::Channel { y, channel: MeasurementChannel::Magnitude { sigma_y2 } },
            ) => {
                let cfg = setup.snore.as_ref().expect("snore config built in setup");
                snore_sample_magnitude(
                    y,
                    &setup.op,
                    *sigma_y2,
                    cfg,
                    &setup.denoiser,
                    &mut solver_rng,
                )?
            }
            _ => {
                return Err(FireError::Config(
                    "solver does not support this observation model".into(),
                ))
            }
        };
        Ok((xhat, record, obs))
    })();
    match solve {
        Ok((xhat, record, obs)) => {
            let e = mse(&xhat, &x0);
            summary.mse = Some(e);
            let p = psnr(&xhat, &x0, setup.peak);
            summary.psnr_db = p.is_finite().then_some(p);
            summary.resid_sq = final_resid_sq(&obs, &setup.op, &xhat).ok().flatten();
            summary.nfe = record.nfe;
            summary.cg_iters = record.total_cg_iters();
            summary.wall_ms = start.elapsed().as_secs_f64() * 1e3;
            TrialData { summary, record, xhat: Some(xhat), x0 }
        }
        Err(err) => {
            summary.error = Some(err.to_string());
            summary.wall_ms = start.elapsed().as_secs_f64() * 1e3;
            TrialData {
                summary,
                record: RunRecord::new(config.solver.name()),
                xhat: None,
                x0,
            }
        }
    }
}

/// Runs all trials (in parallel when `workers != 1`), writes artifacts when
/// an output directory is configured, and returns the in-memory outcome.
/// Identical configs and seeds produce identical traces at any worker count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let setup = build_setup(config)?;
    let trials: Vec<u64> = (0..config.trials).collect();
    let run_all = || -> Vec<TrialData> {
        trials.par_iter().map(|&t| run_trial(config, &setup, t)).collect()
    };
    let mut data: Vec<TrialData> = if config.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| FireError::Config(format!("thread pool: {e}")))?;
        pool.install(run_all)
    } else {
        run_all()
    };
    data.sort_by_key(|d| d.summary.trial);

    let outcome = ExperimentOutcome {
        solver: config.solver.name().to_string(),
        trials: data.iter().map(|d| d.summary.clone()).collect(),
        records: data.iter().map(|d| d.record.clone()).collect(),
        estimates: data.iter().map(|d| d.xhat.clone()).collect(),
        truths: data.iter().map(|d| d.x0.clone()).collect(),
        plan: setup.plan.clone(),
    };

    if let Some(dir) = &config.out {
        fs::create_dir_all(dir)?;
        let aggregate = Aggregate {
            trials_ok: outcome.ok_trials(),
            mean_mse: outcome.mean_mse(),
            total_nfe: outcome.trials.iter().map(|t| t.nfe).sum(),
            total_cg_iters: outcome.trials.iter().map(|t| t.cg_iters).sum(),
            wall_ms_total: outcome.trials.iter().map(|t| t.wall_ms).sum(),
        };
        let manifest = Manifest {
            package_version: env!("CARGO_PKG_VERSION"),
            solver: &outcome.solver,
            config,
            aggregate,
            trials: &outcome.trials,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        let table = setup.denoiser.nu_table();
        write_nu_table_csv(File::create(dir.join("nu_table.csv"))?, &table)?;
        for d in &data {
            let t = d.summary.trial;
            d.record.write_csv(File::create(dir.join(format!("record_{t:04}.csv")))?)?;
            write_f32_blob(&dir.join(format!("x0_{t:04}.f32")), &d.x0)?;
            if let Some(xhat) = &d.xhat {
                write_f32_blob(&dir.join(format!("xhat_{t:04}.f32")), xhat)?;
            }
        }
    }
    Ok(outcome)
}

/// Per-direction renoising variances for an operator with spectral factors:
/// the exact shaping, and the factor-free approximation, over the full
/// squared spectrum.
pub fn spectra_rows(op: &LinearOperator, cfg: &SpectraConfig) -> Result<Vec<SpectrumRow>> {
    let factors = op.svd().ok_or_else(|| {
        FireError::Config("spectra export needs an operator with spectral factors".into())
    })?;
    if !(cfg.sigma2 > 0.0) || !(cfg.nu > 0.0) || !(cfg.sigma_y > 0.0) {
        return Err(FireError::Config("spectra needs positive sigma2, nu, sigma_y".into()));
    }
    let cg = CgSettings {
        speedup: cfg.speedup,
        condition_cap: cfg.condition_cap.unwrap_or(CgSettings::default().condition_cap),
        ..CgSettings::default()
    };
    let sigma_hat_y2 = effective_sigma_y2(cfg.sigma_y, cfg.nu, op.smax(), &cg);
    let lam = lambda_profile(cfg.sigma2, cfg.nu, cfg.sigma_y, sigma_hat_y2);
    let xi = xi_coefficient(cfg.nu, cfg.sigma_y, sigma_hat_y2, op.smax());
    let mut s_sqs = factors.squared_spectrum();
    s_sqs.sort_by(|a, b| b.partial_cmp(a).expect("finite spectrum"));
    Ok(s_sqs
        .into_iter()
        .map(|s_sq| {
            let renoise = lam(s_sq);
            SpectrumRow {
                s_sq,
                solve_err_var: cfg.sigma2 - renoise,
                renoise_var: renoise,
                approx_renoise_var: (cfg.sigma2 - cfg.nu) + xi * s_sq,
            }
        })
        .collect())
}
