//! Per-iteration diagnostics of a solver run.

use std::io::Write;

use crate::error::Result;

/// Channel-loop diagnostics recorded by the generalized-linear solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlmRow {
    /// Prior variance fed to the scalar channel (per entry).
    pub nu_z_bar: f64,
    /// Average posterior variance returned by the channel (per entry).
    pub nu_z_hat: f64,
    /// Extrinsic pseudo-noise variance (per entry).
    pub sigma_y_bar2: f64,
    /// `‖ȳ − A x̄‖²` against the pseudo-measurements.
    pub pseudo_resid_sq: f64,
    /// Whether the posterior variance had to be clamped below the prior.
    pub clamped: bool,
}

/// Ground-truth instrumentation (only when the caller supplies the truth).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRow {
    /// `‖r − x₀‖²/d` of the denoiser input.
    pub input_err_var: f64,
    /// `‖x̄ − x₀‖²/d` of the denoiser output.
    pub denoised_err_var: f64,
    /// `‖x̂ − x₀‖²/d` after the regularized solve.
    pub solved_err_var: f64,
    /// `‖ȳ − A x₀‖²/m` of the pseudo-measurements (generalized-linear runs).
    pub pseudo_noise_var: Option<f64>,
}

/// One inner iteration of a solver.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRow {
    /// Outer sampler step (0 for a bare conditional-denoiser run).
    pub step_k: usize,
    /// Inner iteration, 1-based.
    pub iter_n: usize,
    /// Assumed input error variance at denoise time.
    pub sigma2: f64,
    /// Estimated (or looked-up) denoiser output error variance.
    pub nu: f64,
    /// Squared residual against the measurements used by the solve.
    pub resid_sq: f64,
    /// Effective squared noise level used by the linear solve.
    pub sigma_hat_y2: f64,
    /// Conjugate-gradient iterations, when that path ran.
    pub cg_iters: Option<usize>,
    pub glm: Option<GlmRow>,
    pub truth: Option<TruthRow>,
}

/// Full record of a solver run.
#[derive(Debug, Clone, Default)]
pub struct RunRecord {
    /// Solver label (e.g. "fire", "ddfire", "dds").
    pub solver: String,
    pub rows: Vec<IterRow>,
    /// Number of denoiser evaluations consumed.
    pub nfe: usize,
}

impl RunRecord {
    pub fn new(solver: impl Into<String>) -> Self {
        RunRecord { solver: solver.into(), rows: vec![], nfe: 0 }
    }

    /// Absorbs inner-solver rows, stamping them with the outer step index.
    pub fn absorb(&mut self, step_k: usize, rows: Vec<IterRow>) {
        self.nfe += rows.len();
        for mut row in rows {
            row.step_k = step_k;
            self.rows.push(row);
        }
    }

    /// Total conjugate-gradient iterations across all rows.
    pub fn total_cg_iters(&self) -> usize {
        self.rows.iter().filter_map(|r| r.cg_iters).sum()
    }

    /// Writes the record as CSV with a fixed column set; absent values are
    /// left empty. Formatting is shortest-roundtrip, so identical runs give
    /// byte-identical output.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "solver",
            "step_k",
            "iter_n",
            "sigma2",
            "nu",
            "resid_sq",
            "sigma_hat_y2",
            "cg_iters",
            "nu_z_bar",
            "nu_z_hat",
            "sigma_y_bar2",
            "pseudo_resid_sq",
            "input_err_var",
            "denoised_err_var",
            "solved_err_var",
            "pseudo_noise_var",
        ])?;
        let fmt = |v: f64| format!("{v}");
        let opt = |v: Option<f64>| v.map(fmt).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                self.solver.clone(),
                r.step_k.to_string(),
                r.iter_n.to_string(),
                fmt(r.sigma2),
                fmt(r.nu),
                fmt(r.resid_sq),
                fmt(r.sigma_hat_y2),
                r.cg_iters.map(|c| c.to_string()).unwrap_or_default(),
                opt(r.glm.map(|g| g.nu_z_bar)),
                opt(r.glm.map(|g| g.nu_z_hat)),
                opt(r.glm.map(|g| g.sigma_y_bar2)),
                opt(r.glm.map(|g| g.pseudo_resid_sq)),
                opt(r.truth.map(|t| t.input_err_var)),
                opt(r.truth.map(|t| t.denoised_err_var)),
                opt(r.truth.map(|t| t.solved_err_var)),
                opt(r.truth.and_then(|t| t.pseudo_noise_var)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV serialized to a string (convenience for tests and the CLI).
    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf8"))
    }
}
