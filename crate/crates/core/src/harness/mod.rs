//! Experiment plumbing: serializable configuration, deterministic multi-trial
//! execution, metrics, analytic oracles, artifact emission, and a runtime
//! self-check suite.

mod config;
mod io;
mod metrics;
mod oracle;
mod runner;
mod verify;

pub use config::{
    ChannelConfig, ExperimentConfig, FireSettingsConfig, NoiseConfig, NuTableSection,
    OperatorConfig, PriorConfig, SolverConfig, SpectraConfig,
};
pub use io::{read_f32_blob, write_f32_blob, write_nu_table_csv, write_spectra_csv, SpectrumRow};
pub use metrics::{mse, psnr};
pub use oracle::{
    combine_with_identity_observation, gaussian_posterior_oracle, GaussianPosterior,
    GaussianPrior, IdealizedDenoiser,
};
pub use runner::{plan_for_config, run_experiment, spectra_rows, ExperimentOutcome, TrialSummary};
pub use verify::{run_verification, CheckResult};
