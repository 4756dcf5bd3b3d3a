//! Sequences of Markov parameters, state-space models and system algebra:
//! norms, frequency responses and error metrics.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::deadtime::DeadTimeSpec;
use crate::error::{Error, Result};

/// Floor used when reporting a log of an exactly zero error.
pub const DB_FLOOR: f64 = -300.0;

/// A finite record of Markov parameters h_0..h_{N-1}, each a p×m real matrix.
///
/// Storage is t-major, then output index i, then input index j, matching the
/// on-disk impulse-response container layout. The sample rate is carried along
/// for bookkeeping only; 0.0 means unspecified.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovSequence {
    data: Vec<f64>,
    n: usize,
    p: usize,
    m: usize,
    sample_rate: f64,
}

impl MarkovSequence {
    /// Builds a sequence from t-major raw data; requires N ≥ 2 and finite
    /// entries.
    pub fn new(n: usize, p: usize, m: usize, sample_rate: f64, data: Vec<f64>) -> Result<Self> {
        if n < 2 || p < 1 || m < 1 {
            return Err(Error::ShapeMismatch(format!(
                "sequence needs N >= 2, p >= 1, m >= 1, got N={n}, p={p}, m={m}"
            )));
        }
        if data.len() != n * p * m {
            return Err(Error::ShapeMismatch(format!(
                "expected {} entries for N={n}, p={p}, m={m}, got {}",
                n * p * m,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "non-finite sample at flat index {pos}"
            )));
        }
        Ok(Self {
            data,
            n,
            p,
            m,
            sample_rate,
        })
    }

    /// All-zero sequence of the given shape.
    pub fn zeros(n: usize, p: usize, m: usize, sample_rate: f64) -> Result<Self> {
        Self::new(n, p, m, sample_rate, vec![0.0; n * p * m])
    }

    /// Internal constructor for model-generated data; skips the N ≥ 2 and
    /// finiteness checks (dims already validated by the model).
    pub(crate) fn from_model_output(
        n: usize,
        p: usize,
        m: usize,
        sample_rate: f64,
        data: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(data.len(), n * p * m);
        Self {
            data,
            n,
            p,
            m,
            sample_rate,
        }
    }

    /// Number of samples N.
    pub fn n_samples(&self) -> usize {
        self.n
    }

    /// Number of output channels p.
    pub fn n_outputs(&self) -> usize {
        self.p
    }

    /// Number of input channels m.
    pub fn n_inputs(&self) -> usize {
        self.m
    }

    /// Sample rate in samples/second; 0.0 when unspecified.
    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Raw t-major data slice.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub(crate) fn flat_index(&self, t: usize, i: usize, j: usize) -> usize {
        (t * self.p + i) * self.m + j
    }

    /// Entry h_t[i, j].
    #[inline]
    pub fn get(&self, t: usize, i: usize, j: usize) -> f64 {
        self.data[self.flat_index(t, i, j)]
    }

    /// The sample h_t as a dense p×m matrix.
    pub fn sample(&self, t: usize) -> DMatrix<f64> {
        let start = t * self.p * self.m;
        DMatrix::from_row_slice(self.p, self.m, &self.data[start..start + self.p * self.m])
    }

    /// Squared Frobenius norm of the sample h_t.
    pub fn sample_energy(&self, t: usize) -> f64 {
        let start = t * self.p * self.m;
        self.data[start..start + self.p * self.m]
            .iter()
            .map(|v| v * v)
            .sum()
    }

    /// Plain H2 norm (Σ_k ‖h_k‖_F²)^{1/2} over all stored samples.
    pub fn h2_norm(&self) -> f64 {
        (0..self.n)
            .map(|t| self.sample_energy(t))
            .sum::<f64>()
            .sqrt()
    }

    /// Time-weighted H2 norm (Σ_k η_k ‖h_k‖_F²)^{1/2} with the block-Hankel
    /// multiplicity weights η; equals (‖H‖_F² + ‖h_0‖_F²)^{1/2} for the
    /// Hankel matrix built from the same data. For odd N the final sample
    /// falls outside the weighted window and is ignored.
    pub fn weighted_h2_norm(&self) -> f64 {
        let w = hankel_weights(self.n);
        w.iter()
            .enumerate()
            .map(|(k, wk)| wk * self.sample_energy(k))
            .sum::<f64>()
            .sqrt()
    }

    /// Fraction of total sequence energy held by the trailing `tail` fraction
    /// of samples (e.g. `tail = 0.05` for the last 5%). Returns 0 when the
    /// sequence is identically zero.
    pub fn tail_energy_fraction(&self, tail: f64) -> f64 {
        let total: f64 = (0..self.n).map(|t| self.sample_energy(t)).sum();
        if total == 0.0 {
            return 0.0;
        }
        let start = ((self.n as f64) * (1.0 - tail)).ceil() as usize;
        let tail_energy: f64 = (start.min(self.n)..self.n)
            .map(|t| self.sample_energy(t))
            .sum();
        tail_energy / total
    }
}

/// Block-Hankel multiplicity weights η_k for a record of `n` samples:
/// η_0 = 1, η_k = k for 1 ≤ k ≤ s and η_k = 2s − k for s < k < 2s, with
/// s = ⌊n/2⌋. The returned vector has length 2s.
pub fn hankel_weights(n: usize) -> Vec<f64> {
    let s = n / 2;
    let mut w = vec![0.0; 2 * s];
    if !w.is_empty() {
        w[0] = 1.0;
    }
    for (k, wk) in w.iter_mut().enumerate().skip(1) {
        *wk = if k <= s { k as f64 } else { (2 * s - k) as f64 };
    }
    w
}

/// A discrete-time state-space model (A, B, C, D) with n states, m inputs and
/// p outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl StateSpaceModel {
    /// Validates dimensional consistency and finiteness.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::InvalidModel(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n || c.ncols() != n || d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::InvalidModel(format!(
                "inconsistent dims: A {}x{}, B {}x{}, C {}x{}, D {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols(),
                d.nrows(),
                d.ncols()
            )));
        }
        for (name, mat) in [("A", &a), ("B", &b), ("C", &c), ("D", &d)] {
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!("non-finite entry in {name}")));
            }
        }
        Ok(Self { a, b, c, d })
    }

    /// Model order n.
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// State matrix A.
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Input matrix B.
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Output matrix C.
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// Feedthrough matrix D.
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    /// Largest eigenvalue magnitude of A (0 for a static model).
    pub fn spectral_radius(&self) -> f64 {
        if self.order() == 0 {
            return 0.0;
        }
        self.a
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}

/// Common interface of plain and dead-time-structured models.
pub trait DiscreteLti {
    /// Number of output channels.
    fn n_outputs(&self) -> usize;

    /// Number of input channels.
    fn n_inputs(&self) -> usize;

    /// First `count` Markov parameters h_0..h_{count-1}.
    fn markov_params(&self, count: usize) -> MarkovSequence;

    /// Transfer function samples G(e^{iω}), one p×m complex matrix per ω.
    fn frequency_response(&self, omegas: &[f64]) -> Result<Vec<DMatrix<Complex64>>>;
}

impl DiscreteLti for StateSpaceModel {
    fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    fn markov_params(&self, count: usize) -> MarkovSequence {
        assert!(count >= 1, "need at least one Markov parameter");
        let (p, m) = (self.n_outputs(), self.n_inputs());
        let mut data = vec![0.0; count * p * m];
        for i in 0..p {
            for j in 0..m {
                data[i * m + j] = self.d[(i, j)];
            }
        }
        // State block x_k = A^{k-1} B, advanced one multiply per sample.
        let mut x = self.b.clone();
        for t in 1..count {
            let h = &self.c * &x;
            let base = t * p * m;
            for i in 0..p {
                for j in 0..m {
                    data[base + i * m + j] = h[(i, j)];
                }
            }
            if t + 1 < count {
                x = &self.a * &x;
            }
        }
        MarkovSequence::from_model_output(count, p, m, 0.0, data)
    }

    fn frequency_response(&self, omegas: &[f64]) -> Result<Vec<DMatrix<Complex64>>> {
        let n = self.order();
        let (p, m) = (self.n_outputs(), self.n_inputs());
        let to_c = |mat: &DMatrix<f64>| mat.map(|v| Complex64::new(v, 0.0));
        let bc = to_c(&self.b);
        let cc = to_c(&self.c);
        let dc = to_c(&self.d);
        let mut out = Vec::with_capacity(omegas.len());
        for &omega in omegas {
            if n == 0 {
                out.push(dc.clone());
                continue;
            }
            let z = Complex64::new(0.0, omega).exp();
            let mut resolvent = self.a.map(|v| Complex64::new(-v, 0.0));
            for k in 0..n {
                resolvent[(k, k)] += z;
            }
            let lu = resolvent.lu();
            let x = lu
                .solve(&bc)
                .ok_or(Error::SingularResolvent { omega })?;
            let mut g = &cc * x;
            g += &dc;
            debug_assert_eq!((g.nrows(), g.ncols()), (p, m));
            out.push(g);
        }
        Ok(out)
    }
}

/// A state-space core composed with diagonal input/output dead-time banks.
///
/// The response equals the core's response with channel (i, j) delayed by
/// θ_i + τ_j samples; the delay banks are never materialized as dense state
/// matrices outside of [`StructuredModel::densify`].
#[derive(Debug, Clone)]
pub struct StructuredModel {
    core: StateSpaceModel,
    spec: DeadTimeSpec,
}

impl StructuredModel {
    /// Wraps a core model with a dead-time spec; lengths must match the core
    /// dims.
    pub fn new(core: StateSpaceModel, spec: DeadTimeSpec) -> Result<Self> {
        if spec.tau.len() != core.n_inputs() || spec.theta.len() != core.n_outputs() {
            return Err(Error::ShapeMismatch(format!(
                "spec has {} input / {} output dead times, core is {}x{}",
                spec.tau.len(),
                spec.theta.len(),
                core.n_outputs(),
                core.n_inputs()
            )));
        }
        Ok(Self { core, spec })
    }

    /// The realized core S_0.
    pub fn core(&self) -> &StateSpaceModel {
        &self.core
    }

    /// The dead-time split this model carries.
    pub fn spec(&self) -> &DeadTimeSpec {
        &self.spec
    }

    /// McMillan degree of the composite system: Στ + n + Σθ.
    pub fn order(&self) -> usize {
        let tau: usize = self.spec.tau.iter().map(|&t| t as usize).sum();
        let theta: usize = self.spec.theta.iter().map(|&t| t as usize).sum();
        tau + self.core.order() + theta
    }

    /// Materializes the concatenated realization with explicit shift-chain
    /// delay blocks. Debug/test-scale path only: state count grows with the
    /// total dead time.
    pub fn densify(&self) -> StateSpaceModel {
        let delta_in = delay_bank(&self.spec.tau);
        let delta_out = delay_bank(&self.spec.theta);
        let stage = series(&delta_in, &self.core);
        series(&stage, &delta_out)
    }
}

impl DiscreteLti for StructuredModel {
    fn n_outputs(&self) -> usize {
        self.core.n_outputs()
    }

    fn n_inputs(&self) -> usize {
        self.core.n_inputs()
    }

    fn markov_params(&self, count: usize) -> MarkovSequence {
        let inner = self.core.markov_params(count);
        let (p, m) = (self.n_outputs(), self.n_inputs());
        let mut data = vec![0.0; count * p * m];
        for i in 0..p {
            for j in 0..m {
                let shift = (self.spec.theta[i] + self.spec.tau[j]) as usize;
                for t in shift..count {
                    data[(t * p + i) * m + j] = inner.get(t - shift, i, j);
                }
            }
        }
        MarkovSequence::from_model_output(count, p, m, 0.0, data)
    }

    fn frequency_response(&self, omegas: &[f64]) -> Result<Vec<DMatrix<Complex64>>> {
        let mut out = self.core.frequency_response(omegas)?;
        for (g, &omega) in out.iter_mut().zip(omegas) {
            for i in 0..g.nrows() {
                for j in 0..g.ncols() {
                    let shift = (self.spec.theta[i] + self.spec.tau[j]) as f64;
                    g[(i, j)] *= Complex64::new(0.0, -omega * shift).exp();
                }
            }
        }
        Ok(out)
    }
}

/// Controllable-canonical realization of the pure delay z^{-delta}: a shift
/// chain with B entering at the tail and C reading the head; D = 1 when the
/// delay is zero.
pub(crate) fn delay_block(delta: u32) -> StateSpaceModel {
    let d = delta as usize;
    let mut a = DMatrix::zeros(d, d);
    for k in 0..d.saturating_sub(1) {
        a[(k, k + 1)] = 1.0;
    }
    let mut b = DMatrix::zeros(d, 1);
    let mut c = DMatrix::zeros(1, d);
    let mut dmat = DMatrix::zeros(1, 1);
    if d == 0 {
        dmat[(0, 0)] = 1.0;
    } else {
        b[(d - 1, 0)] = 1.0;
        c[(0, 0)] = 1.0;
    }
    StateSpaceModel::new(a, b, c, dmat).expect("delay block dims are consistent")
}

/// Parallel bank of per-channel delay blocks (one SISO chain per channel).
fn delay_bank(delays: &[u32]) -> StateSpaceModel {
    let q = delays.len();
    let total: usize = delays.iter().map(|&d| d as usize).sum();
    let mut a = DMatrix::zeros(total, total);
    let mut b = DMatrix::zeros(total, q);
    let mut c = DMatrix::zeros(q, total);
    let mut d = DMatrix::zeros(q, q);
    let mut offset = 0usize;
    for (l, &dl) in delays.iter().enumerate() {
        let blk = delay_block(dl);
        let sz = blk.order();
        for r in 0..sz {
            for cc in 0..sz {
                a[(offset + r, offset + cc)] = blk.a()[(r, cc)];
            }
            b[(offset + r, l)] = blk.b()[(r, 0)];
            c[(l, offset + r)] = blk.c()[(0, r)];
        }
        d[(l, l)] = blk.d()[(0, 0)];
        offset += sz;
    }
    StateSpaceModel::new(a, b, c, d).expect("bank dims are consistent")
}

/// Series composition: signal passes through `first`, then `second`.
fn series(first: &StateSpaceModel, second: &StateSpaceModel) -> StateSpaceModel {
    assert_eq!(second.n_inputs(), first.n_outputs());
    let n1 = first.order();
    let n2 = second.order();
    let n = n1 + n2;
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (n1, n1)).copy_from(first.a());
    a.view_mut((n1, 0), (n2, n1))
        .copy_from(&(second.b() * first.c()));
    a.view_mut((n1, n1), (n2, n2)).copy_from(second.a());
    let mut b = DMatrix::zeros(n, first.n_inputs());
    b.view_mut((0, 0), (n1, first.n_inputs()))
        .copy_from(first.b());
    b.view_mut((n1, 0), (n2, first.n_inputs()))
        .copy_from(&(second.b() * first.d()));
    let mut c = DMatrix::zeros(second.n_outputs(), n);
    c.view_mut((0, 0), (second.n_outputs(), n1))
        .copy_from(&(second.d() * first.c()));
    c.view_mut((0, n1), (second.n_outputs(), n2))
        .copy_from(second.c());
    let d = second.d() * first.d();
    StateSpaceModel::new(a, b, c, d).expect("series dims are consistent")
}

/// Relative output error in dB between a reference sequence and a model:
/// 10·log10(Σ_{k≥1}‖h_k − ĥ_k‖_F² / Σ_{k≥1}‖h_k‖_F²), clamped at −300 dB.
/// The feedthrough sample k = 0 is excluded on both sides.
pub fn relative_error_db<Mdl: DiscreteLti + ?Sized>(
    h_ref: &MarkovSequence,
    model: &Mdl,
) -> Result<f64> {
    if model.n_outputs() != h_ref.n_outputs() || model.n_inputs() != h_ref.n_inputs() {
        return Err(Error::ShapeMismatch(format!(
            "model is {}x{}, reference is {}x{}",
            model.n_outputs(),
            model.n_inputs(),
            h_ref.n_outputs(),
            h_ref.n_inputs()
        )));
    }
    let h_mod = model.markov_params(h_ref.n_samples());
    let mut num = 0.0;
    let mut den = 0.0;
    for t in 1..h_ref.n_samples() {
        for i in 0..h_ref.n_outputs() {
            for j in 0..h_ref.n_inputs() {
                let r = h_ref.get(t, i, j);
                let e = r - h_mod.get(t, i, j);
                num += e * e;
                den += r * r;
            }
        }
    }
    if den == 0.0 {
        return Err(Error::DegenerateReference(
            "reference sequence has no energy past the feedthrough sample".into(),
        ));
    }
    if num == 0.0 {
        return Ok(DB_FLOOR);
    }
    Ok((10.0 * (num / den).log10()).max(DB_FLOOR))
}
