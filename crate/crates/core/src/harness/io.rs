//! Artifact file formats: raw little-endian float blobs with JSON sidecars,
//! and CSV exports for tables.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{FireError, Result};

#[derive(Debug, Serialize, Deserialize)]
struct BlobSidecar {
    dtype: String,
    shape: Vec<usize>,
}

/// Writes a signal as little-endian 32-bit floats plus a `<path>.json`
/// sidecar describing the layout.
pub fn write_f32_blob(path: &Path, data: &Array1<f64>) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for &v in data.iter() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    let sidecar = BlobSidecar { dtype: "f32-le".into(), shape: vec![data.len()] };
    let mut sidecar_path = path.as_os_str().to_owned();
    sidecar_path.push(".json");
    fs::write(sidecar_path, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

/// Reads a blob written by [`write_f32_blob`], checking the sidecar.
pub fn read_f32_blob(path: &Path) -> Result<Array1<f64>> {
    let mut sidecar_path = path.as_os_str().to_owned();
    sidecar_path.push(".json");
    let sidecar: BlobSidecar = serde_json::from_str(&fs::read_to_string(&sidecar_path)?)?;
    if sidecar.dtype != "f32-le" || sidecar.shape.len() != 1 {
        return Err(FireError::Serde(format!(
            "unsupported blob layout {:?}/{:?}",
            sidecar.dtype, sidecar.shape
        )));
    }
    let bytes = fs::read(path)?;
    if bytes.len() != sidecar.shape[0] * 4 {
        return Err(FireError::Serde("blob length does not match sidecar shape".into()));
    }
    Ok(Array1::from_iter(
        bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64),
    ))
}

/// Writes the denoiser's output-error table as `sigma,nu` rows.
pub fn write_nu_table_csv<W: Write>(mut out: W, table: &[(f64, f64)]) -> Result<()> {
    writeln!(out, "sigma,nu")?;
    for (sigma, nu) in table {
        writeln!(out, "{sigma},{nu}")?;
    }
    Ok(())
}

/// One singular direction of the renoising spectrum export.
#[derive(Debug, Clone)]
pub struct SpectrumRow {
    pub s_sq: f64,
    /// Solve-error variance γ(s²) along this direction.
    pub solve_err_var: f64,
    /// Exact renoising variance λ(s²).
    pub renoise_var: f64,
    /// Factor-free approximation (σ² − ν) + ξ·s².
    pub approx_renoise_var: f64,
}

/// Writes per-direction renoising variances; `total` columns should come out
/// flat at σ² when the shaping is exact.
pub fn write_spectra_csv<W: Write>(mut out: W, rows: &[SpectrumRow]) -> Result<()> {
    writeln!(out, "s_sq,solve_err_var,renoise_var,total,approx_renoise_var,approx_total")?;
    for r in rows {
        let total = r.solve_err_var + r.renoise_var;
        let approx_total = r.solve_err_var + r.approx_renoise_var;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.s_sq, r.solve_err_var, r.renoise_var, total, r.approx_renoise_var, approx_total
        )?;
    }
    Ok(())
}
