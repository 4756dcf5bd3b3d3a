//! Implicit block-Hankel operator over a Markov-parameter record with
//! FFT-accelerated forward and transpose block products.
//!
//! The represented matrix has s×s blocks of size p×m with block (a, b) equal
//! to h_{a+b+1} (0-based block indices), so it touches samples h_1..h_{2s-1}
//! and never h_0. Each product column reduces to per-channel circular
//! cross-correlations, computed spectrally with zero padding to L ≥ 2s, which
//! makes the finite correlation exact (indices t+v stay below 2s-1 for
//! t, v < s, so no circular wrap can alias).

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::linop::LinOp;
use crate::system::{hankel_weights, MarkovSequence};

/// Blocked Hankel matrix of Markov parameters, stored implicitly as
/// per-channel spectra.
pub struct HankelOperator {
    source: MarkovSequence,
    s: usize,
    /// Transform length: next power of two ≥ 2s.
    len: usize,
    /// Forward spectra of the zero-padded channel sequences h_ij(1..2s-1),
    /// indexed i·m + j.
    spectra: Vec<Vec<Complex64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    frob: f64,
}

impl std::fmt::Debug for HankelOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HankelOperator")
            .field("rows", &self.nrows())
            .field("cols", &self.ncols())
            .field("s", &self.s)
            .field("len", &self.len)
            .finish()
    }
}

/// Operator dimensions (p·s, m·s) for an N-sample p×m record, without
/// building anything.
pub fn hankel_dims(n_samples: usize, p: usize, m: usize) -> (usize, usize) {
    let s = n_samples / 2;
    (p * s, m * s)
}

impl HankelOperator {
    /// Precomputes channel spectra from the record; the operator is immutable
    /// afterwards.
    pub fn new(source: &MarkovSequence) -> Self {
        let s = source.n_samples() / 2;
        let p = source.n_outputs();
        let m = source.n_inputs();
        let len = (2 * s).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(len);
        let inv = planner.plan_fft_inverse(len);
        let mut scratch = vec![Complex64::default(); fwd.get_inplace_scratch_len()];
        let mut spectra = Vec::with_capacity(p * m);
        for i in 0..p {
            for j in 0..m {
                let mut buf = vec![Complex64::default(); len];
                for (u, slot) in buf.iter_mut().enumerate().take(2 * s - 1) {
                    slot.re = source.get(u + 1, i, j);
                }
                fwd.process_with_scratch(&mut buf, &mut scratch);
                spectra.push(buf);
            }
        }
        // (Σ_k η_k ‖h_k‖²_F − ‖h_0‖²_F)^{1/2}, directly from the data.
        let frob = hankel_weights(source.n_samples())
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, w)| w * source.sample_energy(k))
            .sum::<f64>()
            .sqrt();
        Self {
            source: source.clone(),
            s,
            len,
            spectra,
            fwd,
            inv,
            frob,
        }
    }

    /// Block count per side.
    pub fn block_count(&self) -> usize {
        self.s
    }

    /// The record this operator was built from.
    pub fn source(&self) -> &MarkovSequence {
        &self.source
    }

    /// Frobenius norm of the represented matrix, computed from the data.
    pub fn frobenius_norm(&self) -> f64 {
        self.frob
    }

    /// One product column: gathers per-channel strided segments of `x`,
    /// correlates against every channel spectrum and scatters the result.
    /// `n_in`/`n_out` are channel counts on the gather/scatter side; for the
    /// transpose the roles of i and j swap but the spectra are shared, with
    /// `channel_index` mapping (out_channel, in_channel) to a spectrum.
    fn product_column(
        &self,
        x: &[f64],
        n_in: usize,
        n_out: usize,
        channel_index: impl Fn(usize, usize) -> usize,
    ) -> Vec<f64> {
        let s = self.s;
        let len = self.len;
        let mut scratch =
            vec![Complex64::default(); self.fwd.get_inplace_scratch_len().max(self.inv.get_inplace_scratch_len())];
        // Forward transforms of every input channel's segment.
        let mut xhat = vec![Complex64::default(); n_in * len];
        for j in 0..n_in {
            let buf = &mut xhat[j * len..(j + 1) * len];
            for v in 0..s {
                buf[v].re = x[v * n_in + j];
            }
            self.fwd.process_with_scratch(buf, &mut scratch);
        }
        let mut out = vec![0.0; n_out * s];
        let mut acc = vec![Complex64::default(); len];
        for i in 0..n_out {
            acc.fill(Complex64::default());
            for j in 0..n_in {
                let spec = &self.spectra[channel_index(i, j)];
                let xj = &xhat[j * len..(j + 1) * len];
                for f in 0..len {
                    acc[f] += spec[f] * xj[f].conj();
                }
            }
            self.inv.process_with_scratch(&mut acc, &mut scratch);
            let scale = 1.0 / len as f64;
            for t in 0..s {
                out[t * n_out + i] = acc[t].re * scale;
            }
        }
        out
    }

    fn product(&self, x: &DMatrix<f64>, transpose: bool) -> DMatrix<f64> {
        let p = self.source.n_outputs();
        let m = self.source.n_inputs();
        let (n_in, n_out) = if transpose { (p, m) } else { (m, p) };
        let k = x.ncols();
        let cols: Vec<Vec<f64>> = (0..k)
            .into_par_iter()
            .map(|c| {
                let xc: Vec<f64> = x.column(c).iter().copied().collect();
                if transpose {
                    self.product_column(&xc, n_in, n_out, |j, i| i * m + j)
                } else {
                    self.product_column(&xc, n_in, n_out, |i, j| i * m + j)
                }
            })
            .collect();
        let mut out = DMatrix::zeros(n_out * self.s, k);
        for (c, col) in cols.iter().enumerate() {
            out.column_mut(c).copy_from_slice(col);
        }
        out
    }
}

impl LinOp for HankelOperator {
    fn nrows(&self) -> usize {
        self.source.n_outputs() * self.s
    }

    fn ncols(&self) -> usize {
        self.source.n_inputs() * self.s
    }

    fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "apply expects {} rows, got {}",
                self.ncols(),
                x.nrows()
            )));
        }
        Ok(self.product(x, false))
    }

    fn apply_transpose(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if y.nrows() != self.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "apply_transpose expects {} rows, got {}",
                self.nrows(),
                y.nrows()
            )));
        }
        Ok(self.product(y, true))
    }
}
