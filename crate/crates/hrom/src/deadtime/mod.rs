//! Dead-time handling: onset estimation from impulse responses, the
//! delay-splitting linear program, the least-common baseline, data
//! rectification, structured-model assembly and DOF accounting.

mod simplex;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::{MarkovSequence, StateSpaceModel, StructuredModel};
use simplex::{maximize, Cmp, Constraint};

/// Per-channel integer dead times δ_ij (p×m, row-major).
///
/// `silent_sentinel` marks the value used for channels with no detectable
/// onset (all-zero data); such entries are capped to the largest real delay
/// before any split is computed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayMatrix {
    p: usize,
    m: usize,
    delta: Vec<u32>,
    silent_sentinel: Option<u32>,
}

impl DelayMatrix {
    /// Builds from row-major entries; no sentinel semantics.
    pub fn new(p: usize, m: usize, delta: Vec<u32>) -> Result<Self> {
        if p < 1 || m < 1 || delta.len() != p * m {
            return Err(Error::ShapeMismatch(format!(
                "expected {p}x{m} = {} delays, got {}",
                p * m,
                delta.len()
            )));
        }
        Ok(Self {
            p,
            m,
            delta,
            silent_sentinel: None,
        })
    }

    /// Number of output channels.
    pub fn n_outputs(&self) -> usize {
        self.p
    }

    /// Number of input channels.
    pub fn n_inputs(&self) -> usize {
        self.m
    }

    /// Entry δ_ij.
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.delta[i * self.m + j]
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[u32] {
        &self.delta
    }

    /// The sentinel marking silent channels, if any entry may carry one.
    pub fn silent_sentinel(&self) -> Option<u32> {
        self.silent_sentinel
    }

    /// Copy with sentinel entries capped to the largest non-sentinel delay
    /// (zero when every channel is silent), so silence never inflates a
    /// split.
    pub fn capped(&self) -> DelayMatrix {
        let Some(sentinel) = self.silent_sentinel else {
            return self.clone();
        };
        let cap = self
            .delta
            .iter()
            .filter(|&&d| d != sentinel)
            .max()
            .copied()
            .unwrap_or(0);
        let delta = self
            .delta
            .iter()
            .map(|&d| if d == sentinel { cap } else { d })
            .collect();
        DelayMatrix {
            p: self.p,
            m: self.m,
            delta,
            silent_sentinel: None,
        }
    }
}

/// A split of the delay matrix into per-input dead times τ_j and per-output
/// dead times θ_i, with residual_ij = δ_ij − θ_i − τ_j ≥ 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeadTimeSpec {
    pub tau: Vec<u32>,
    pub theta: Vec<u32>,
    /// Row-major p×m residual delays.
    pub residual: Vec<u32>,
}

impl DeadTimeSpec {
    /// Validates lengths: residual must be theta.len()×tau.len().
    pub fn new(tau: Vec<u32>, theta: Vec<u32>, residual: Vec<u32>) -> Result<Self> {
        if tau.is_empty() || theta.is_empty() || residual.len() != tau.len() * theta.len() {
            return Err(Error::InvalidSpec(format!(
                "residual must be {}x{} entries, got {}",
                theta.len(),
                tau.len(),
                residual.len()
            )));
        }
        Ok(Self {
            tau,
            theta,
            residual,
        })
    }

    /// The trivial split: nothing extracted, residual = δ.
    pub fn none(delta: &DelayMatrix) -> Self {
        Self {
            tau: vec![0; delta.n_inputs()],
            theta: vec![0; delta.n_outputs()],
            residual: delta.capped().delta,
        }
    }

    /// Residual entry for channel (i, j).
    pub fn residual_at(&self, i: usize, j: usize) -> u32 {
        self.residual[i * self.tau.len() + j]
    }

    /// Total extracted dead time Στ + Σθ.
    pub fn extracted_total(&self) -> u64 {
        self.tau.iter().map(|&t| t as u64).sum::<u64>()
            + self.theta.iter().map(|&t| t as u64).sum::<u64>()
    }

    /// Sum of all residual entries.
    pub fn residual_total(&self) -> u64 {
        self.residual.iter().map(|&r| r as u64).sum()
    }
}

/// Which split to apply before reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DelayMode {
    None,
    LeastCommon,
    Dts,
}

impl std::fmt::Display for DelayMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DelayMode::None => "none",
            DelayMode::LeastCommon => "least-common",
            DelayMode::Dts => "dts",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for DelayMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(DelayMode::None),
            "least-common" => Ok(DelayMode::LeastCommon),
            "dts" => Ok(DelayMode::Dts),
            other => Err(Error::InvalidSpec(format!(
                "unknown dead-time mode '{other}' (expected none|least-common|dts)"
            ))),
        }
    }
}

/// The delay-splitting LP in matrix form: F·x ≤ vec(δ) with
/// x = [θ_1..θ_p, τ_1..τ_m] ≥ 0. F is the pm×(p+m) incidence matrix of the
/// complete bipartite graph K_{p,m}; vec(δ) is column-major (output index
/// fastest), row (j·p + i) pairing θ_i with τ_j.
#[derive(Debug, Clone)]
pub struct DtsLp {
    pub f: DMatrix<f64>,
    pub rhs: Vec<f64>,
}

impl DtsLp {
    pub fn new(delta: &DelayMatrix) -> Self {
        let p = delta.n_outputs();
        let m = delta.n_inputs();
        let mut f = DMatrix::zeros(p * m, p + m);
        let mut rhs = vec![0.0; p * m];
        for j in 0..m {
            for i in 0..p {
                let row = j * p + i;
                f[(row, i)] = 1.0;
                f[(row, p + j)] = 1.0;
                rhs[row] = delta.get(i, j) as f64;
            }
        }
        Self { f, rhs }
    }
}

/// Onset-based delay estimation: δ_ij is the first sample index where
/// |h_ij| rises strictly above `rel_threshold` times the channel's peak.
/// Channels with no signal at all get the sentinel value N.
pub fn estimate_delays(h: &MarkovSequence, rel_threshold: f64) -> Result<DelayMatrix> {
    if !(rel_threshold > 0.0 && rel_threshold < 1.0) {
        return Err(Error::InvalidSpec(format!(
            "relative threshold must lie in (0, 1), got {rel_threshold}"
        )));
    }
    let n = h.n_samples();
    let p = h.n_outputs();
    let m = h.n_inputs();
    let mut delta = vec![0u32; p * m];
    for i in 0..p {
        for j in 0..m {
            let peak = (0..n).map(|t| h.get(t, i, j).abs()).fold(0.0, f64::max);
            let onset = if peak == 0.0 {
                n
            } else {
                (0..n)
                    .find(|&t| h.get(t, i, j).abs() > rel_threshold * peak)
                    .expect("peak sample always exceeds a sub-unit fraction of itself")
            };
            delta[i * m + j] = onset as u32;
        }
    }
    Ok(DelayMatrix {
        p,
        m,
        delta,
        silent_sentinel: Some(n as u32),
    })
}

/// Rounds an LP value that must be integral at a vertex of an integral
/// polytope; anything far from an integer means the solve went wrong.
fn integral(value: f64) -> Result<u32> {
    let rounded = value.round();
    if (value - rounded).abs() > 1e-6 || rounded < 0.0 || rounded > u32::MAX as f64 {
        return Err(Error::LinearProgram(format!(
            "expected an integral vertex component, got {value}"
        )));
    }
    Ok(rounded as u32)
}

/// Maximum-extraction dead-time split: maximizes Σθ + Στ subject to
/// θ_i + τ_j ≤ δ_ij, x ≥ 0. The constraint matrix is totally unimodular, so
/// the optimum is integral. Ties between optimal vertices are broken
/// deterministically: total input-side mass Στ is maximized first, then
/// τ_1, τ_2, … and finally θ_1, θ_2, … are fixed greedily.
pub fn solve_dts(delta: &DelayMatrix) -> Result<DeadTimeSpec> {
    let capped = delta.capped();
    let p = capped.n_outputs();
    let m = capped.n_inputs();
    let lp = DtsLp::new(&capped);
    let nvars = p + m;
    let mut constraints: Vec<Constraint> = (0..p * m)
        .map(|row| Constraint {
            coeffs: (0..nvars).map(|c| lp.f[(row, c)]).collect(),
            cmp: Cmp::Le,
            rhs: lp.rhs[row],
        })
        .collect();

    let ones = vec![1.0; nvars];
    let v_star = integral(maximize(&ones, &constraints)?.objective)?;
    constraints.push(Constraint {
        coeffs: ones.clone(),
        cmp: Cmp::Eq,
        rhs: v_star as f64,
    });

    let mut tau_mask = vec![0.0; nvars];
    for j in 0..m {
        tau_mask[p + j] = 1.0;
    }
    let w_star = integral(maximize(&tau_mask, &constraints)?.objective)?;
    constraints.push(Constraint {
        coeffs: tau_mask,
        cmp: Cmp::Eq,
        rhs: w_star as f64,
    });

    let fix_var = |var: usize, constraints: &mut Vec<Constraint>| -> Result<u32> {
        let mut obj = vec![0.0; nvars];
        obj[var] = 1.0;
        let val = integral(maximize(&obj, constraints)?.x[var])?;
        constraints.push(Constraint {
            coeffs: obj,
            cmp: Cmp::Eq,
            rhs: val as f64,
        });
        Ok(val)
    };
    let mut tau = vec![0u32; m];
    for j in 0..m {
        tau[j] = fix_var(p + j, &mut constraints)?;
    }
    let mut theta = vec![0u32; p];
    for i in 0..p {
        theta[i] = fix_var(i, &mut constraints)?;
    }

    // Integer verification against the capped matrix.
    let total: u64 = tau.iter().map(|&t| t as u64).sum::<u64>()
        + theta.iter().map(|&t| t as u64).sum::<u64>();
    if total != v_star as u64 {
        return Err(Error::LinearProgram(format!(
            "tie-broken split total {total} differs from optimum {v_star}"
        )));
    }
    let mut residual = vec![0u32; p * m];
    for i in 0..p {
        for j in 0..m {
            let d = capped.get(i, j);
            let used = theta[i] + tau[j];
            if used > d {
                return Err(Error::LinearProgram(format!(
                    "split violates channel ({i},{j}): {used} > {d}"
                )));
            }
            residual[i * m + j] = d - used;
        }
    }
    Ok(DeadTimeSpec {
        tau,
        theta,
        residual,
    })
}

/// Least-common baseline: extracts the global minimum delay δ_LC on the
/// smaller channel side (outputs when p ≤ m, inputs otherwise), so the delay
/// bank stays as small as possible.
pub fn solve_least_common(delta: &DelayMatrix) -> DeadTimeSpec {
    let capped = delta.capped();
    let p = capped.n_outputs();
    let m = capped.n_inputs();
    let lc = capped.delta.iter().min().copied().unwrap_or(0);
    let (tau, theta) = if p <= m {
        (vec![0; m], vec![lc; p])
    } else {
        (vec![lc; m], vec![0; p])
    };
    let mut residual = vec![0u32; p * m];
    for i in 0..p {
        for j in 0..m {
            residual[i * m + j] = capped.get(i, j) - theta[i] - tau[j];
        }
    }
    DeadTimeSpec {
        tau,
        theta,
        residual,
    }
}

/// Shifts every channel forward by its dead time θ_i + τ_j and truncates to
/// the shortest shifted length N' = N − max_ij(θ_i + τ_j).
pub fn rectify(h: &MarkovSequence, spec: &DeadTimeSpec) -> Result<MarkovSequence> {
    let n = h.n_samples();
    let p = h.n_outputs();
    let m = h.n_inputs();
    if spec.theta.len() != p || spec.tau.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "spec is {}x{}, data is {p}x{m}",
            spec.theta.len(),
            spec.tau.len()
        )));
    }
    let mut max_shift = 0usize;
    for i in 0..p {
        for j in 0..m {
            let shift = spec.theta[i] as usize + spec.tau[j] as usize;
            if shift > n {
                return Err(Error::InvalidSpec(format!(
                    "dead time {shift} of channel ({i},{j}) exceeds record length {n}"
                )));
            }
            max_shift = max_shift.max(shift);
        }
    }
    let n_out = n - max_shift;
    if n_out < 2 {
        return Err(Error::InvalidSpec(format!(
            "rectification leaves only {n_out} samples"
        )));
    }
    let mut data = vec![0.0; n_out * p * m];
    for i in 0..p {
        for j in 0..m {
            let shift = spec.theta[i] as usize + spec.tau[j] as usize;
            for t in 0..n_out {
                data[(t * p + i) * m + j] = h.get(t + shift, i, j);
            }
        }
    }
    MarkovSequence::new(n_out, p, m, h.sample_rate(), data)
}

/// Wraps a realized core with a dead-time spec; the result's response is the
/// core's response delayed per channel by θ_i + τ_j.
pub fn assemble(core: StateSpaceModel, spec: DeadTimeSpec) -> Result<StructuredModel> {
    StructuredModel::new(core, spec)
}

/// Number of nonzero parameters of the stored model: (r+p)(r+m) for the
/// dense core, plus one state per extracted delay sample under either split
/// mode.
pub fn count_dofs(mode: DelayMode, r: usize, p: usize, m: usize, spec: &DeadTimeSpec) -> usize {
    let base = (r + p) * (r + m);
    match mode {
        DelayMode::None => base,
        DelayMode::LeastCommon | DelayMode::Dts => base + spec.extracted_total() as usize,
    }
}
