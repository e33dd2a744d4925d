//! Unitary FFT helpers shared by the Fourier-based operator kinds.

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub type C64 = Complex<f64>;

/// Pre-planned unitary 1-D FFT pair of a fixed length.
#[derive(Clone)]
pub struct Fft1d {
    pub n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Fft1d {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft1d {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    /// In-place forward DFT scaled by 1/sqrt(n).
    pub fn forward_unitary(&self, buf: &mut [C64]) {
        self.fwd.process(buf);
        let s = 1.0 / (self.n as f64).sqrt();
        for v in buf.iter_mut() {
            *v *= s;
        }
    }

    /// In-place inverse DFT scaled by 1/sqrt(n); exact inverse of `forward_unitary`.
    pub fn inverse_unitary(&self, buf: &mut [C64]) {
        self.inv.process(buf);
        let s = 1.0 / (self.n as f64).sqrt();
        for v in buf.iter_mut() {
            *v *= s;
        }
    }

    /// Unnormalized forward DFT (used for cached kernel spectra).
    pub fn forward_raw(&self, buf: &mut [C64]) {
        self.fwd.process(buf);
    }
}

/// Pre-planned unitary 2-D FFT over a fixed `(rows, cols)` grid, row-major.
#[derive(Clone)]
pub struct Fft2d {
    pub rows: usize,
    pub cols: usize,
    row_fft: Fft1d,
    col_fft: Fft1d,
}

impl Fft2d {
    pub fn new(rows: usize, cols: usize) -> Self {
        Fft2d {
            rows,
            cols,
            row_fft: Fft1d::new(cols),
            col_fft: Fft1d::new(rows),
        }
    }

    fn transform(&self, buf: &mut [C64], inverse: bool) {
        debug_assert_eq!(buf.len(), self.rows * self.cols);
        for r in 0..self.rows {
            let row = &mut buf[r * self.cols..(r + 1) * self.cols];
            if inverse {
                self.row_fft.inv.process(row);
            } else {
                self.row_fft.fwd.process(row);
            }
        }
        let mut col = vec![C64::new(0.0, 0.0); self.rows];
        for c in 0..self.cols {
            for r in 0..self.rows {
                col[r] = buf[r * self.cols + c];
            }
            if inverse {
                self.col_fft.inv.process(&mut col);
            } else {
                self.col_fft.fwd.process(&mut col);
            }
            for r in 0..self.rows {
                buf[r * self.cols + c] = col[r];
            }
        }
        let s = 1.0 / ((self.rows * self.cols) as f64).sqrt();
        for v in buf.iter_mut() {
            *v *= s;
        }
    }

    /// In-place 2-D forward DFT scaled by 1/sqrt(rows*cols).
    pub fn forward_unitary(&self, buf: &mut [C64]) {
        self.transform(buf, false);
    }

    /// In-place 2-D inverse DFT scaled by 1/sqrt(rows*cols).
    pub fn inverse_unitary(&self, buf: &mut [C64]) {
        self.transform(buf, true);
    }
}

/// Packs complex values as interleaved `[re0, im0, re1, im1, ..]`.
pub fn interleave_into(src: &[C64], dst: &mut [f64]) {
    debug_assert_eq!(dst.len(), 2 * src.len());
    for (i, z) in src.iter().enumerate() {
        dst[2 * i] = z.re;
        dst[2 * i + 1] = z.im;
    }
}

/// Reads interleaved `[re0, im0, ..]` back into complex values.
pub fn deinterleave(src: &[f64]) -> Vec<C64> {
    debug_assert_eq!(src.len() % 2, 0);
    src.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect()
}
