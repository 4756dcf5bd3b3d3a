//! Container formats: impulse-response datasets (f32 payload + JSON
//! sidecar), reduced-order models (JSON manifest + f64 payload) and CSV
//! evaluation exports. All payloads are little-endian and platform
//! independent; round trips are lossless at the declared precision.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::deadtime::{DeadTimeSpec, DelayMode};
use crate::error::{Error, Result};
use crate::system::{MarkovSequence, StateSpaceModel, StructuredModel};

pub const FORMAT_VERSION: u32 = 1;

/// JSON sidecar describing an impulse-response payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct IrHeader {
    format_version: u32,
    #[serde(rename = "N")]
    n: usize,
    p: usize,
    m: usize,
    sample_rate: f64,
    byte_order: String,
    precision: String,
}

/// Payload size in bytes implied by an impulse-response header.
pub fn ir_payload_bytes(n: usize, p: usize, m: usize) -> u64 {
    4 * (n as u64) * (p as u64) * (m as u64)
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

fn rom_payload_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".bin");
    PathBuf::from(os)
}

/// Writes the raw f32 payload at `path` and the JSON sidecar at
/// `path.json`. Values are truncated to single precision; the container is
/// the ground truth afterwards.
pub fn write_ir(path: &Path, h: &MarkovSequence) -> Result<()> {
    let header = IrHeader {
        format_version: FORMAT_VERSION,
        n: h.n_samples(),
        p: h.n_outputs(),
        m: h.n_inputs(),
        sample_rate: h.sample_rate(),
        byte_order: "little".into(),
        precision: "f32".into(),
    };
    let mut payload = Vec::with_capacity(4 * h.data().len());
    for &v in h.data() {
        payload.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, &payload)?;
    let json = serde_json::to_string_pretty(&header)
        .map_err(|e| Error::Format(format!("header serialization failed: {e}")))?;
    fs::write(sidecar_path(path), json)?;
    Ok(())
}

/// Reads a payload + sidecar pair written by [`write_ir`].
pub fn read_ir(path: &Path) -> Result<MarkovSequence> {
    let sidecar = sidecar_path(path);
    let header_bytes = fs::read(&sidecar)?;
    let header: IrHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Format(format!("bad header {}: {e}", sidecar.display())))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format_version {}, expected {FORMAT_VERSION}",
            header.format_version
        )));
    }
    if header.byte_order != "little" || header.precision != "f32" {
        return Err(Error::Format(format!(
            "unsupported encoding {}/{} (expected little/f32)",
            header.byte_order, header.precision
        )));
    }
    if header.n == 0 || header.p == 0 || header.m == 0 {
        return Err(Error::Format("header dimensions must be positive".into()));
    }
    let payload = fs::read(path)?;
    let expected = ir_payload_bytes(header.n, header.p, header.m);
    if payload.len() as u64 != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, expected {expected} for N={}, p={}, m={}",
            payload.len(),
            header.n,
            header.p,
            header.m
        )));
    }
    let mut data = Vec::with_capacity(payload.len() / 4);
    for (idx, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("chunks_exact gives 4 bytes"));
        if !v.is_finite() {
            return Err(Error::Format(format!(
                "non-finite sample at byte offset {}",
                4 * idx
            )));
        }
        data.push(v as f64);
    }
    MarkovSequence::new(header.n, header.p, header.m, header.sample_rate, data)
}

/// Reduction parameters and diagnostics stored alongside a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub gamma: f64,
    pub b: usize,
    pub q: usize,
    pub seed: u64,
    pub eloo_final: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub etol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_next: Option<f64>,
    /// Energy of the singular values dropped by an order cap, if one was set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discarded_energy: Option<f64>,
    /// Time-weighted H2 norm of the rectified data the model was fit to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighted_norm: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RomManifest {
    format_version: u32,
    n: usize,
    m: usize,
    p: usize,
    mode: DelayMode,
    tau: Vec<u32>,
    theta: Vec<u32>,
    residual: Vec<u32>,
    provenance: Provenance,
    /// Payload file name, relative to the manifest's directory.
    payload: String,
    sample_rate: f64,
}

fn push_matrix(buf: &mut Vec<u8>, mat: &nalgebra::DMatrix<f64>) {
    for i in 0..mat.nrows() {
        for j in 0..mat.ncols() {
            buf.extend_from_slice(&mat[(i, j)].to_le_bytes());
        }
    }
}

fn pop_matrix(
    bytes: &[u8],
    offset: &mut usize,
    rows: usize,
    cols: usize,
) -> Result<nalgebra::DMatrix<f64>> {
    let need = 8 * rows * cols;
    let end = *offset + need;
    if end > bytes.len() {
        return Err(Error::Format(format!(
            "payload truncated: need {end} bytes, have {}",
            bytes.len()
        )));
    }
    let slice = &bytes[*offset..end];
    *offset = end;
    let mut mat = nalgebra::DMatrix::zeros(rows, cols);
    for (idx, chunk) in slice.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("chunks_exact gives 8 bytes"));
        mat[(idx / cols, idx % cols)] = v;
    }
    Ok(mat)
}

/// Writes the manifest at `path` and the A,B,C,D payload (row-major f64,
/// little-endian, concatenated in that order) at `path.bin`.
pub fn write_rom(
    path: &Path,
    model: &StructuredModel,
    mode: DelayMode,
    prov: &Provenance,
    sample_rate: f64,
) -> Result<()> {
    let core = model.core();
    let payload_path = rom_payload_path(path);
    let payload_name = payload_path
        .file_name()
        .ok_or_else(|| Error::Format("model path has no file name".into()))?
        .to_string_lossy()
        .into_owned();
    let manifest = RomManifest {
        format_version: FORMAT_VERSION,
        n: core.order(),
        m: core.b().ncols(),
        p: core.c().nrows(),
        mode,
        tau: model.spec().tau.clone(),
        theta: model.spec().theta.clone(),
        residual: model.spec().residual.clone(),
        provenance: prov.clone(),
        payload: payload_name,
        sample_rate,
    };
    let mut payload = Vec::new();
    push_matrix(&mut payload, core.a());
    push_matrix(&mut payload, core.b());
    push_matrix(&mut payload, core.c());
    push_matrix(&mut payload, core.d());
    let mut f = fs::File::create(&payload_path)?;
    f.write_all(&payload)?;
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("manifest serialization failed: {e}")))?;
    fs::write(path, json)?;
    Ok(())
}

/// Reads a manifest + payload pair written by [`write_rom`]; returns the
/// model, the split mode it was reduced under, its provenance and the sample
/// rate of the source data.
pub fn read_rom(path: &Path) -> Result<(StructuredModel, DelayMode, Provenance, f64)> {
    let manifest_bytes = fs::read(path)?;
    let manifest: RomManifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| Error::Format(format!("bad manifest {}: {e}", path.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format_version {}, expected {FORMAT_VERSION}",
            manifest.format_version
        )));
    }
    if manifest.tau.len() != manifest.m {
        return Err(Error::Format(format!(
            "manifest lists {} input dead times for m={}",
            manifest.tau.len(),
            manifest.m
        )));
    }
    if manifest.theta.len() != manifest.p {
        return Err(Error::Format(format!(
            "manifest lists {} output dead times for p={}",
            manifest.theta.len(),
            manifest.p
        )));
    }
    if manifest.residual.len() != manifest.p * manifest.m {
        return Err(Error::Format(format!(
            "manifest residual has {} entries for {}x{}",
            manifest.residual.len(),
            manifest.p,
            manifest.m
        )));
    }
    let payload_path = path
        .parent()
        .map(|d| d.join(&manifest.payload))
        .unwrap_or_else(|| PathBuf::from(&manifest.payload));
    let bytes = fs::read(&payload_path)?;
    let expected = 8
        * (manifest.n * manifest.n
            + manifest.n * manifest.m
            + manifest.p * manifest.n
            + manifest.p * manifest.m);
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, expected {expected} for n={}, m={}, p={}",
            bytes.len(),
            manifest.n,
            manifest.m,
            manifest.p
        )));
    }
    let mut offset = 0usize;
    let a = pop_matrix(&bytes, &mut offset, manifest.n, manifest.n)?;
    let b = pop_matrix(&bytes, &mut offset, manifest.n, manifest.m)?;
    let c = pop_matrix(&bytes, &mut offset, manifest.p, manifest.n)?;
    let d = pop_matrix(&bytes, &mut offset, manifest.p, manifest.m)?;
    let core = StateSpaceModel::new(a, b, c, d)?;
    let spec = DeadTimeSpec::new(manifest.tau, manifest.theta, manifest.residual)?;
    let model = StructuredModel::new(core, spec)?;
    Ok((model, manifest.mode, manifest.provenance, manifest.sample_rate))
}

/// One evaluation row for the CSV export.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub scenario: String,
    pub mode: String,
    pub r: usize,
    pub dofs: usize,
    pub erel_db: f64,
    pub eest_db: f64,
    pub ekc_db: f64,
    pub ekw_db: f64,
    pub wall_seconds: f64,
}

/// Renders records as RFC-4180 CSV with a fixed column order; an empty list
/// yields the header line only.
pub fn export_eval(records: &[EvalRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for rec in records {
        w.serialize(rec)
            .map_err(|e| Error::Format(format!("csv serialization failed: {e}")))?;
    }
    if records.is_empty() {
        w.write_record([
            "scenario",
            "mode",
            "r",
            "dofs",
            "erel_db",
            "eest_db",
            "ekc_db",
            "ekw_db",
            "wall_seconds",
        ])
        .map_err(|e| Error::Format(format!("csv header failed: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Format(format!("csv finalization failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(format!("csv is not utf-8: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use tempfile::tempdir;

    fn f32_clean_sequence() -> MarkovSequence {
        let n = 16;
        let mut data = Vec::with_capacity(n * 2 * 3);
        let mut state = 4242u64;
        for _ in 0..n * 2 * 3 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(17);
            let v = ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0;
            data.push(v as f32 as f64);
        }
        MarkovSequence::new(n, 2, 3, 48_000.0, data).unwrap()
    }

    #[test]
    fn ir_round_trip_is_bitwise() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.ir");
        let h = f32_clean_sequence();
        write_ir(&path, &h).unwrap();
        let back = read_ir(&path).unwrap();
        assert_eq!(back.data(), h.data());
        assert_eq!(back.sample_rate(), 48_000.0);

        // Writing what was read reproduces the payload byte for byte.
        let path2 = dir.path().join("data2.ir");
        write_ir(&path2, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn ir_truncated_payload_names_byte_counts() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.ir");
        let h = f32_clean_sequence();
        write_ir(&path, &h).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        let err = read_ir(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(&format!("{}", bytes.len() - 7)), "{msg}");
        assert!(msg.contains(&format!("{}", bytes.len())), "{msg}");
    }

    #[test]
    fn headline_payload_size() {
        assert_eq!(ir_payload_bytes(1024, 64, 1089), 4 * 1024 * 64 * 1089);
    }

    fn small_structured() -> StructuredModel {
        let core = StateSpaceModel::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.25, -0.125, 0.0625]),
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            DMatrix::from_row_slice(1, 2, &[0.5, -0.5]),
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
        )
        .unwrap();
        let spec = DeadTimeSpec::new(vec![1, 3], vec![2], vec![0, 1]).unwrap();
        StructuredModel::new(core, spec).unwrap()
    }

    #[test]
    fn rom_round_trip_and_determinism() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.rom");
        let model = small_structured();
        let prov = Provenance {
            gamma: 0.05,
            b: 8,
            q: 2,
            seed: 7,
            eloo_final: 1.25e-3,
            etol: Some(2.0e-3),
            sigma_next: None,
            discarded_energy: Some(4.0e-8),
            weighted_norm: Some(3.5),
        };
        write_rom(&path, &model, DelayMode::Dts, &prov, 44_100.0).unwrap();
        let (back, mode, prov_back, fs_back) = read_rom(&path).unwrap();
        assert_eq!(back.core().a(), model.core().a());
        assert_eq!(back.core().b(), model.core().b());
        assert_eq!(back.core().c(), model.core().c());
        assert_eq!(back.core().d(), model.core().d());
        assert_eq!(back.spec(), model.spec());
        assert_eq!(mode, DelayMode::Dts);
        assert_eq!(prov_back, prov);
        assert_eq!(fs_back, 44_100.0);

        let path2 = dir.path().join("model2.rom");
        write_rom(&path2, &back, mode, &prov_back, fs_back).unwrap();
        assert_eq!(
            fs::read(dir.path().join("model.rom.bin")).unwrap(),
            fs::read(dir.path().join("model2.rom.bin")).unwrap()
        );
    }

    #[test]
    fn rom_manifest_tau_mismatch_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.rom");
        let model = small_structured();
        let prov = Provenance {
            gamma: 0.1,
            b: 4,
            q: 0,
            seed: 0,
            eloo_final: 0.0,
            etol: None,
            sigma_next: None,
            discarded_energy: None,
            weighted_norm: None,
        };
        write_rom(&path, &model, DelayMode::None, &prov, 0.0).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let corrupted = text.replace("\"tau\": [\n    1,\n    3\n  ]", "\"tau\": [\n    1\n  ]");
        assert_ne!(text, corrupted, "corruption must hit the tau field");
        fs::write(&path, corrupted).unwrap();
        assert!(matches!(read_rom(&path), Err(Error::Format(_))));
    }

    #[test]
    fn eval_export_rows_and_round_trip() {
        let empty = export_eval(&[]).unwrap();
        assert_eq!(empty.lines().count(), 1);
        assert!(empty.starts_with("scenario,mode,r,dofs"));

        let rec = EvalRecord {
            scenario: "semicircle, s=2048".into(),
            mode: "dts".into(),
            r: 16,
            dofs: 756,
            erel_db: -43.21098765,
            eest_db: -40.0,
            ekc_db: -38.5,
            ekw_db: -77.0,
            wall_seconds: 1.2345,
        };
        let csv_text = export_eval(&[rec.clone()]).unwrap();
        assert_eq!(csv_text.lines().count(), 2);
        let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
        let back: EvalRecord = rdr.deserialize().next().unwrap().unwrap();
        assert_eq!(back.scenario, rec.scenario);
        assert_eq!(back.r, rec.r);
        assert!((back.erel_db - rec.erel_db).abs() < 1e-9);
        assert!((back.wall_seconds - rec.wall_seconds).abs() < 1e-9);
    }
}
