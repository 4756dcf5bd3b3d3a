//! Pipeline commands behind the `hrom` binary: synthetic dataset generation,
//! onset-delay estimation, dead-time splitting, model reduction, evaluation
//! and frequency-response export. Every JSON artifact is schema-versioned.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use hrom::{
    adaptive_era, assemble, count_dofs, error_estimate_db, estimate_delays, fixed_order_era,
    kung_bound_corrected, kung_bound_erroneous, read_ir, read_rom, rectify, relative_error_db,
    solve_dts, solve_least_common, synthesize, write_ir, write_rom, DeadTimeSpec, DelayMatrix,
    DelayMode, EraOptions, Error, EvalRecord, Provenance, Result, SynthConfig,
};

pub const FORMAT_VERSION: u32 = 1;

/// Knobs shared by the reduction pipeline, mirroring the CLI flags.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Relative sketch tolerance γ.
    pub gamma: f64,
    /// Sketch block size b.
    pub block: usize,
    /// Power iterations q.
    pub power: usize,
    /// Sketch seed.
    pub seed: u64,
    /// Dead-time split applied before reduction.
    pub mode: DelayMode,
    /// Relative onset threshold for delay estimation.
    pub threshold: f64,
    /// Fixed core order; None means adaptive order selection via γ.
    pub order: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            gamma: 0.05,
            block: 32,
            power: 2,
            seed: 0,
            mode: DelayMode::Dts,
            threshold: 0.05,
            order: None,
        }
    }
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(suffix);
    PathBuf::from(os)
}

/// Path of the ground-truth sidecar written next to a synthetic dataset.
pub fn truth_path(ir_path: &Path) -> PathBuf {
    suffixed(ir_path, ".truth.json")
}

/// Path of the wall-clock sidecar written next to a reduced model. Timing is
/// kept out of the model container so identical runs stay byte-identical.
pub fn timing_path(rom_path: &Path) -> PathBuf {
    suffixed(rom_path, ".timing.json")
}

/// Ground truth for a synthetic dataset: the exact propagation delays and,
/// when they factor with zero residual, the exact dead-time split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub format_version: u32,
    pub delta: DelayMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_split: Option<DeadTimeSpec>,
}

/// Summary returned by [`cmd_synth`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthReport {
    pub format_version: u32,
    pub out: PathBuf,
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub n_modes: usize,
    pub sample_rate: f64,
    /// True when the generated delays factor exactly into τ and θ.
    pub exact_split: bool,
}

/// Generates a synthetic dataset, writes the impulse-response container and
/// a ground-truth sidecar at `<out>.truth.json`.
pub fn cmd_synth(cfg: &SynthConfig, out: &Path) -> Result<SynthReport> {
    let synth = synthesize(cfg)?;
    write_ir(out, &synth.sequence)?;
    let truth = TruthSidecar {
        format_version: FORMAT_VERSION,
        delta: synth.delta,
        exact_split: synth.exact_split.clone(),
    };
    let text = serde_json::to_string_pretty(&truth)
        .map_err(|e| Error::Format(format!("truth sidecar serialization failed: {e}")))?;
    std::fs::write(truth_path(out), text)?;
    Ok(SynthReport {
        format_version: FORMAT_VERSION,
        out: out.to_path_buf(),
        n: synth.sequence.n_samples(),
        p: synth.sequence.n_outputs(),
        m: synth.sequence.n_inputs(),
        n_modes: cfg.n_modes,
        sample_rate: cfg.sample_rate,
        exact_split: synth.exact_split.is_some(),
    })
}

/// Estimated per-channel onset delays, as written by [`cmd_delays`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DelayReport {
    pub format_version: u32,
    pub threshold: f64,
    pub delta: DelayMatrix,
}

/// Estimates onset delays from an impulse-response container.
pub fn cmd_delays(input: &Path, threshold: f64) -> Result<DelayReport> {
    let h = read_ir(input)?;
    let delta = estimate_delays(&h, threshold)?;
    Ok(DelayReport {
        format_version: FORMAT_VERSION,
        threshold,
        delta,
    })
}

/// A dead-time split plus its mass totals, as written by [`cmd_split`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitReport {
    pub format_version: u32,
    pub mode: DelayMode,
    pub tau: Vec<u32>,
    pub theta: Vec<u32>,
    pub residual: Vec<u32>,
    pub extracted_total: u64,
    pub residual_total: u64,
}

/// Computes the dead-time split of an estimated delay matrix.
pub fn split_delays(delta: &DelayMatrix, mode: DelayMode) -> Result<DeadTimeSpec> {
    Ok(match mode {
        DelayMode::None => DeadTimeSpec::none(delta),
        DelayMode::LeastCommon => solve_least_common(delta),
        DelayMode::Dts => solve_dts(delta)?,
    })
}

/// Reads a [`DelayReport`] JSON file and splits it under the given mode.
pub fn cmd_split(delays_path: &Path, mode: DelayMode) -> Result<SplitReport> {
    let bytes = std::fs::read(delays_path)?;
    let report: DelayReport = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Format(format!("bad delay report {}: {e}", delays_path.display())))?;
    if report.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format_version {}, expected {FORMAT_VERSION}",
            report.format_version
        )));
    }
    let spec = split_delays(&report.delta, mode)?;
    Ok(SplitReport {
        format_version: FORMAT_VERSION,
        mode,
        extracted_total: spec.extracted_total(),
        residual_total: spec.residual_total(),
        tau: spec.tau,
        theta: spec.theta,
        residual: spec.residual,
    })
}

/// Wall-clock seconds per pipeline stage of one reduction run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StageTimes {
    pub read: f64,
    pub delays: f64,
    pub split: f64,
    pub rectify: f64,
    pub reduce: f64,
    pub write: f64,
    pub total: f64,
}

/// Timing sidecar stored at `<rom>.timing.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingSidecar {
    pub format_version: u32,
    pub wall_seconds: StageTimes,
}

/// Summary returned by [`cmd_reduce`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReduceReport {
    pub format_version: u32,
    pub out: PathBuf,
    /// Core order r.
    pub order: usize,
    /// McMillan degree Στ + r + Σθ.
    pub total_order: usize,
    pub mode: DelayMode,
    pub extracted_total: u64,
    pub residual_total: u64,
    pub eloo_final: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_next: Option<f64>,
    pub warnings: Vec<String>,
    pub wall_seconds: StageTimes,
}

/// Full reduction pipeline: read, estimate delays, split, rectify, reduce,
/// assemble and write the model container plus a timing sidecar.
pub fn cmd_reduce(input: &Path, out: &Path, cfg: &PipelineConfig) -> Result<ReduceReport> {
    let t0 = Instant::now();
    let h = read_ir(input)?;
    let t_read = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let delta = estimate_delays(&h, cfg.threshold)?;
    let t_delays = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let spec = split_delays(&delta, cfg.mode)?;
    let t_split = t2.elapsed().as_secs_f64();

    let t3 = Instant::now();
    let rect = rectify(&h, &spec)?;
    let t_rectify = t3.elapsed().as_secs_f64();

    let t4 = Instant::now();
    let opts = EraOptions {
        gamma: cfg.gamma,
        block: cfg.block,
        power: cfg.power,
        seed: cfg.seed,
    };
    let era = match cfg.order {
        None => adaptive_era(&rect, &opts)?,
        Some(r) => fixed_order_era(&rect, r, &opts)?,
    };
    let t_reduce = t4.elapsed().as_secs_f64();

    let mut warnings = Vec::new();
    if era.tail_energy_warning {
        warnings.push("trailing 5% of the record holds over 1% of the energy; responses may be truncated".into());
    }
    if era.marginally_stable_warning {
        warnings.push("realized core has spectral radius >= 1".into());
    }

    let t5 = Instant::now();
    let order = era.model.order();
    let prov = Provenance {
        gamma: cfg.gamma,
        b: cfg.block,
        q: cfg.power,
        seed: cfg.seed,
        eloo_final: era.eloo_final,
        etol: cfg.order.is_none().then_some(era.etol_used),
        sigma_next: era.sigma_next,
        discarded_energy: Some(era.discarded_energy),
        weighted_norm: Some(rect.weighted_h2_norm()),
    };
    let model = assemble(era.model, spec)?;
    write_rom(out, &model, cfg.mode, &prov, h.sample_rate())?;
    let t_write = t5.elapsed().as_secs_f64();

    let wall_seconds = StageTimes {
        read: t_read,
        delays: t_delays,
        split: t_split,
        rectify: t_rectify,
        reduce: t_reduce,
        write: t_write,
        total: t0.elapsed().as_secs_f64(),
    };
    let timing = TimingSidecar {
        format_version: FORMAT_VERSION,
        wall_seconds,
    };
    let text = serde_json::to_string_pretty(&timing)
        .map_err(|e| Error::Format(format!("timing sidecar serialization failed: {e}")))?;
    std::fs::write(timing_path(out), text)?;

    Ok(ReduceReport {
        format_version: FORMAT_VERSION,
        out: out.to_path_buf(),
        order,
        total_order: model.order(),
        mode: cfg.mode,
        extracted_total: model.spec().extracted_total(),
        residual_total: model.spec().residual_total(),
        eloo_final: era.eloo_final,
        sigma_next: era.sigma_next,
        warnings,
        wall_seconds,
    })
}

/// Evaluates a stored model against a reference dataset, producing one CSV
/// record. The wall-clock column is taken from the model's timing sidecar
/// when present.
pub fn cmd_eval(input: &Path, rom: &Path, scenario: &str) -> Result<EvalRecord> {
    let h = read_ir(input)?;
    let (model, mode, prov, _fs) = read_rom(rom)?;
    let r = model.core().order();
    let p = h.n_outputs();
    let m = h.n_inputs();
    let dofs = count_dofs(mode, r, p, m, model.spec());
    let erel_db = relative_error_db(&h, &model)?;

    // Residual estimate of the sketch plus any energy dropped by an order
    // cap, relative to the weighted norm of the rectified data.
    let wnorm = match prov.weighted_norm {
        Some(wn) => wn,
        None => rectify(&h, model.spec())?.weighted_h2_norm(),
    };
    let discarded = prov.discarded_energy.unwrap_or(0.0);
    let eest_num = (prov.eloo_final * prov.eloo_final + discarded).sqrt();
    let eest_db = error_estimate_db(eest_num, wnorm);

    let rect = rectify(&h, model.spec())?;
    let h2 = rect.h2_norm();
    let (ekc_db, ekw_db) = match prov.sigma_next {
        Some(s) => (
            kung_bound_corrected(r, m, p, s, h2),
            kung_bound_erroneous(r, m, p, s, h2),
        ),
        None => (hrom::DB_FLOOR, hrom::DB_FLOOR),
    };

    let wall_seconds = std::fs::read(timing_path(rom))
        .ok()
        .and_then(|bytes| serde_json::from_slice::<TimingSidecar>(&bytes).ok())
        .map_or(0.0, |t| t.wall_seconds.total);

    Ok(EvalRecord {
        scenario: scenario.to_string(),
        mode: mode.to_string(),
        r,
        dofs,
        erel_db,
        eest_db,
        ekc_db,
        ekw_db,
        wall_seconds,
    })
}

/// Samples a stored model's transfer function at the given frequencies and
/// renders the result as CSV with columns omega, output, input, re, im, abs.
pub fn cmd_respond(rom: &Path, omegas: &[f64]) -> Result<String> {
    if omegas.is_empty() {
        return Err(Error::InvalidSpec(
            "need at least one frequency to sample".into(),
        ));
    }
    let (model, _, _, _) = read_rom(rom)?;
    let response = hrom::DiscreteLti::frequency_response(&model, omegas)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["omega", "output", "input", "re", "im", "abs"])
        .map_err(|e| Error::Format(format!("csv write failed: {e}")))?;
    for (g, &omega) in response.iter().zip(omegas) {
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let z = g[(i, j)];
                w.write_record([
                    omega.to_string(),
                    i.to_string(),
                    j.to_string(),
                    z.re.to_string(),
                    z.im.to_string(),
                    z.norm().to_string(),
                ])
                .map_err(|e| Error::Format(format!("csv write failed: {e}")))?;
            }
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Format(format!("csv flush failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(format!("csv is not utf-8: {e}")))
}

/// Stable machine-readable tag for each error variant, used in the CLI's
/// JSON error envelope.
pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidModel(_) => "invalid-model",
        Error::ShapeMismatch(_) => "shape-mismatch",
        Error::DegenerateReference(_) => "degenerate-reference",
        Error::SingularResolvent { .. } => "singular-resolvent",
        Error::RankDeficient(_) => "rank-deficient",
        Error::EstimatorUnavailable(_) => "estimator-unavailable",
        Error::ToleranceUnreachable { .. } => "tolerance-unreachable",
        Error::IllPosedShift(_) => "ill-posed-shift",
        Error::InvalidSpec(_) => "invalid-spec",
        Error::LinearProgram(_) => "linear-program",
        Error::Format(_) => "format",
        Error::Io(_) => "io",
    }
}
