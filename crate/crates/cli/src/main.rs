//! Command-line front end: plan schedules, run experiments, check
//! invariants, and export per-iteration tracking / spectrum tables.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ddfire::harness::{
    plan_for_config, run_experiment, run_verification, spectra_rows, ExperimentConfig,
    SolverConfig,
};
use ddfire::record::RunRecord;
use ddfire::{FireError, Result};

#[derive(Parser)]
#[command(name = "ddfire", version, about = "Diffusion posterior sampling test bench")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the iteration plan a sampler config implies, without running it.
    PlanSchedule(CommonArgs),
    /// Run the configured experiment over all trials.
    Run(CommonArgs),
    /// Execute the built-in invariant suite and report each check.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run with ground-truth tracking forced on and write per-iteration
    /// aggregates comparing estimated against measured error levels.
    Tracking(CommonArgs),
    /// Tabulate the per-singular-value solve and renoise variance profiles
    /// for the configured operator.
    Spectra(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment description (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the worker count in the config file (0 = automatic).
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the artifact directory in the config file.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::from_json_file(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(workers) = self.workers {
            config.workers = workers;
        }
        if let Some(out) = &self.out {
            config.out = Some(out.clone());
        }
        Ok(config)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::PlanSchedule(args) => {
            let config = args.load()?;
            let plan = plan_for_config(&config)?;
            println!("{}", plan.to_json()?);
            if let Some(dir) = &config.out {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("plan.json"), plan.to_json()?)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Run(args) => {
            let config = args.load()?;
            run_and_summarize(&config)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Verify { seed } => {
            let results = run_verification(seed);
            let mut failures = 0;
            for r in &results {
                let status = if r.passed { "PASS" } else { "FAIL" };
                println!(
                    "{status} {name}: measured {measured:.3e} (threshold {threshold:.3e}) — {detail}",
                    name = r.name,
                    measured = r.measured,
                    threshold = r.threshold,
                    detail = r.detail,
                );
                if !r.passed {
                    failures += 1;
                }
            }
            println!("{} checks, {} failed", results.len(), failures);
            Ok(if failures == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Cmd::Tracking(args) => {
            let mut config = args.load()?;
            match &mut config.solver {
                SolverConfig::Ddfire { settings, .. } | SolverConfig::Fire { settings, .. } => {
                    settings.track_truth = true;
                }
                other => {
                    return Err(FireError::Config(format!(
                        "solver \"{}\" does not record tracking columns",
                        other.name()
                    )));
                }
            }
            let dir = config.out.clone().ok_or_else(|| {
                FireError::Config("tracking needs an output directory (--out)".into())
            })?;
            let outcome = run_and_summarize(&config)?;
            let table = tracking_table(&outcome.records);
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("tracking.csv"), table)?;
            println!("wrote {}", dir.join("tracking.csv").display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Spectra(args) => {
            let config = args.load()?;
            let spectra = config.spectra.clone().ok_or_else(|| {
                FireError::Config("config has no \"spectra\" section".into())
            })?;
            let op = config.operator.build()?;
            let rows = spectra_rows(&op, &spectra)?;
            let mut buf = Vec::new();
            ddfire::harness::write_spectra_csv(&mut buf, &rows)?;
            let text = String::from_utf8(buf).expect("csv output is utf-8");
            print!("{text}");
            if let Some(dir) = &config.out {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("spectra.csv"), &text)?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn run_and_summarize(config: &ExperimentConfig) -> Result<ddfire::harness::ExperimentOutcome> {
    let outcome = run_experiment(config)?;
    println!(
        "{}: {}/{} trials ok, total NFE {}",
        outcome.solver,
        outcome.ok_trials(),
        outcome.trials.len(),
        outcome.trials.iter().map(|t| t.nfe).sum::<usize>(),
    );
    if let Some(mse) = outcome.mean_mse() {
        println!("mean MSE {mse:.6e}");
    }
    for t in outcome.trials.iter().filter(|t| t.error.is_some()) {
        eprintln!("trial {} failed: {}", t.trial, t.error.as_deref().unwrap_or(""));
    }
    if let Some(dir) = &config.out {
        println!("artifacts in {}", dir.display());
    }
    Ok(outcome)
}

/// Averages per-iteration telemetry over trials, keyed by (step, iteration).
/// Columns compare the estimated error level against the measured one, and,
/// for channel runs, the pseudo-measurement noise against its realization.
fn tracking_table(records: &[RunRecord]) -> String {
    use std::collections::BTreeMap;
    struct Acc {
        n: usize,
        sigma2: f64,
        nu: f64,
        denoised: f64,
        has_truth: usize,
        sigma_y_bar2: f64,
        pseudo: f64,
        has_glm: usize,
    }
    let mut cells: BTreeMap<(usize, usize), Acc> = BTreeMap::new();
    for record in records {
        for row in &record.rows {
            let acc = cells.entry((row.step_k, row.iter_n)).or_insert(Acc {
                n: 0,
                sigma2: 0.0,
                nu: 0.0,
                denoised: 0.0,
                has_truth: 0,
                sigma_y_bar2: 0.0,
                pseudo: 0.0,
                has_glm: 0,
            });
            acc.n += 1;
            acc.sigma2 += row.sigma2;
            acc.nu += row.nu;
            if let Some(truth) = &row.truth {
                acc.denoised += truth.denoised_err_var;
                acc.has_truth += 1;
                if let (Some(glm), Some(pseudo)) = (&row.glm, truth.pseudo_noise_var) {
                    acc.sigma_y_bar2 += glm.sigma_y_bar2;
                    acc.pseudo += pseudo;
                    acc.has_glm += 1;
                }
            }
        }
    }
    let mut out = String::from(
        "step_k,iter_n,sigma2,nu_est,denoised_err_var,sigma_y_bar2,pseudo_noise_var\n",
    );
    for ((step, iter), acc) in &cells {
        let n = acc.n as f64;
        let denoised = if acc.has_truth > 0 {
            format!("{}", acc.denoised / acc.has_truth as f64)
        } else {
            String::new()
        };
        let (bar2, pseudo) = if acc.has_glm > 0 {
            let g = acc.has_glm as f64;
            (format!("{}", acc.sigma_y_bar2 / g), format!("{}", acc.pseudo / g))
        } else {
            (String::new(), String::new())
        };
        out.push_str(&format!(
            "{step},{iter},{},{},{denoised},{bar2},{pseudo}\n",
            acc.sigma2 / n,
            acc.nu / n,
        ));
    }
    out
}
