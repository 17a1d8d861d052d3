//! Manifest + binary payload pairs.
//!
//! Payload layout (little-endian): `EQFR`, u32 version, then a body that
//! depends on the file kind. Snapshot matrices store u64 N, u64 M, N*M f64
//! values column-major and one metadata record per column. Model files store
//! u32 section kind, u32 array count and named f64 arrays.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ColumnMeta, DatasetInfo, Normalization, SnapshotMatrix};
use crate::error::{Error, Result};
use crate::hughes::GaussianIc;

pub const MAGIC: &[u8; 4] = b"EQFR";
pub const FORMAT_VERSION: u32 = 1;
pub const SCHEMA_VERSION: &str = "1.0";

const COLUMN_RECORD_BYTES: usize = 4 + 8 * 7;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Payload file paired with a manifest: same stem, `.bin` extension.
pub fn payload_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetManifest {
    schema_version: String,
    kind: String,
    info: DatasetInfo,
    normalization: Normalization,
    n: usize,
    m: usize,
    cell_area: f64,
    runs: Vec<RunEntry>,
    payload: String,
    payload_sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunEntry {
    run_id: u32,
    ic: GaussianIc,
    columns: usize,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}
fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}
fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                reason: format!("truncated payload at byte {}", self.at),
            });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn header(&mut self) -> Result<()> {
        if self.take(4)? != MAGIC {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                reason: "bad magic bytes".into(),
            });
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version.to_string(),
                expected: FORMAT_VERSION.to_string(),
            });
        }
        Ok(())
    }
    fn finish(&self) -> Result<()> {
        if self.at != self.bytes.len() {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                reason: format!("{} trailing bytes", self.bytes.len() - self.at),
            });
        }
        Ok(())
    }
}

pub(crate) fn encode_snapshot_payload(x: &SnapshotMatrix) -> Vec<u8> {
    let (n, m) = (x.nrows(), x.ncols());
    let mut buf = Vec::with_capacity(24 + 8 * n * m + COLUMN_RECORD_BYTES * m);
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    put_u64(&mut buf, n as u64);
    put_u64(&mut buf, m as u64);
    for v in x.data.iter() {
        put_f64(&mut buf, *v);
    }
    for c in &x.columns {
        put_u32(&mut buf, c.run_id);
        put_f64(&mut buf, c.time);
        for v in [c.ic.x0, c.ic.y0, c.ic.sigma_x, c.ic.sigma_y, c.ic.target_mass] {
            put_f64(&mut buf, v);
        }
        put_f64(&mut buf, c.column_sum);
    }
    buf
}

fn check_schema(found: &str) -> Result<()> {
    let major = |s: &str| s.split('.').next().unwrap_or("").to_string();
    if major(found) != major(SCHEMA_VERSION) {
        return Err(Error::Version {
            found: found.to_string(),
            expected: SCHEMA_VERSION.to_string(),
        });
    }
    Ok(())
}

/// Writes `bytes` next to the target and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_verified(manifest: &Path, payload: &str, sha: &str) -> Result<(PathBuf, Vec<u8>)> {
    let bin = manifest.with_file_name(payload);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if sha256_hex(&bytes) != sha {
        return Err(Error::Checksum(bin));
    }
    Ok((bin, bytes))
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Persists a snapshot matrix as `<path>` (JSON manifest) plus its `.bin` payload.
pub fn save_dataset(x: &SnapshotMatrix, path: &Path) -> Result<()> {
    let payload = encode_snapshot_payload(x);
    let bin = payload_path(path);
    let mut runs: Vec<RunEntry> = Vec::new();
    for c in &x.columns {
        match runs.iter_mut().find(|r| r.run_id == c.run_id) {
            Some(r) => r.columns += 1,
            None => runs.push(RunEntry {
                run_id: c.run_id,
                ic: c.ic,
                columns: 1,
            }),
        }
    }
    let g = x.info.grid;
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION.to_string(),
        kind: "snapshot_matrix".into(),
        info: x.info.clone(),
        normalization: x.normalization,
        n: x.nrows(),
        m: x.ncols(),
        cell_area: (g.length_x / g.nx as f64) * (g.length_y / g.ny as f64),
        runs,
        payload: file_name(&bin),
        payload_sha256: sha256_hex(&payload),
    };
    write_atomic(&bin, &payload)?;
    let json = serde_json::to_vec_pretty(&manifest)?;
    write_atomic(path, &json)
}

pub fn load_dataset(path: &Path) -> Result<SnapshotMatrix> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let manifest: DatasetManifest = serde_json::from_slice(&text)?;
    check_schema(&manifest.schema_version)?;
    if manifest.kind != "snapshot_matrix" {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected a snapshot matrix, found '{}'", manifest.kind),
        });
    }
    let (bin, bytes) = read_verified(path, &manifest.payload, &manifest.payload_sha256)?;
    let mut r = Reader {
        bytes: &bytes,
        at: 0,
        path: &bin,
    };
    r.header()?;
    let n = r.u64()? as usize;
    let m = r.u64()? as usize;
    if n != manifest.n || m != manifest.m {
        return Err(Error::Format {
            path: bin.clone(),
            reason: format!("payload is {n}x{m}, manifest says {}x{}", manifest.n, manifest.m),
        });
    }
    let values = r.take(8 * n * m)?;
    let data = DMatrix::from_iterator(n, m, values.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())));
    let mut columns = Vec::with_capacity(m);
    for _ in 0..m {
        let run_id = r.u32()?;
        let time = r.f64()?;
        let ic = GaussianIc {
            x0: r.f64()?,
            y0: r.f64()?,
            sigma_x: r.f64()?,
            sigma_y: r.f64()?,
            target_mass: r.f64()?,
        };
        let column_sum = r.f64()?;
        columns.push(ColumnMeta {
            run_id,
            time,
            ic,
            column_sum,
        });
    }
    r.finish()?;
    SnapshotMatrix::new(data, columns, manifest.normalization, manifest.info)
}

/// Section tag of a model payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SectionKind {
    Pod,
    Dmaps,
    Mvar,
}

impl SectionKind {
    fn code(self) -> u32 {
        match self {
            SectionKind::Pod => 1,
            SectionKind::Dmaps => 2,
            SectionKind::Mvar => 3,
        }
    }
    fn from_code(c: u32) -> Option<Self> {
        match c {
            1 => Some(SectionKind::Pod),
            2 => Some(SectionKind::Dmaps),
            3 => Some(SectionKind::Mvar),
            _ => None,
        }
    }
}

/// In-memory form of a model file: named matrices plus free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub kind: SectionKind,
    pub arrays: Vec<(String, DMatrix<f64>)>,
    pub meta: serde_json::Value,
}

impl ModelFile {
    pub fn new(kind: SectionKind, meta: serde_json::Value) -> Self {
        ModelFile {
            kind,
            arrays: Vec::new(),
            meta,
        }
    }

    pub fn push(&mut self, name: &str, a: DMatrix<f64>) {
        self.arrays.push((name.to_string(), a));
    }

    pub fn array(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| Error::NotFound(format!("array '{name}' in {:?} model", self.kind)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelManifest {
    pub schema_version: String,
    pub kind: SectionKind,
    pub payload: String,
    pub payload_sha256: String,
    pub meta: serde_json::Value,
}

pub fn write_model(path: &Path, model: &ModelFile) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    put_u32(&mut buf, model.kind.code());
    put_u32(&mut buf, model.arrays.len() as u32);
    for (name, a) in &model.arrays {
        put_u32(&mut buf, name.len() as u32);
        buf.extend_from_slice(name.as_bytes());
        put_u64(&mut buf, a.nrows() as u64);
        put_u64(&mut buf, a.ncols() as u64);
        for v in a.iter() {
            put_f64(&mut buf, *v);
        }
    }
    let bin = payload_path(path);
    let manifest = ModelManifest {
        schema_version: SCHEMA_VERSION.to_string(),
        kind: model.kind,
        payload: file_name(&bin),
        payload_sha256: sha256_hex(&buf),
        meta: model.meta.clone(),
    };
    write_atomic(&bin, &buf)?;
    write_atomic(path, &serde_json::to_vec_pretty(&manifest)?)
}

pub fn read_model(path: &Path, expected: SectionKind) -> Result<ModelFile> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let manifest: ModelManifest = serde_json::from_slice(&text)?;
    check_schema(&manifest.schema_version)?;
    let (bin, bytes) = read_verified(path, &manifest.payload, &manifest.payload_sha256)?;
    let mut r = Reader {
        bytes: &bytes,
        at: 0,
        path: &bin,
    };
    r.header()?;
    let code = r.u32()?;
    let kind = SectionKind::from_code(code).ok_or_else(|| Error::Format {
        path: bin.clone(),
        reason: format!("unknown section kind {code}"),
    })?;
    if kind != expected || kind != manifest.kind {
        return Err(Error::Format {
            path: bin.clone(),
            reason: format!("expected a {expected:?} section, found {kind:?}"),
        });
    }
    let count = r.u32()? as usize;
    let mut arrays = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Format {
            path: bin.clone(),
            reason: "array name is not UTF-8".into(),
        })?;
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let raw = r.take(rows.checked_mul(cols).and_then(|k| k.checked_mul(8)).ok_or_else(|| Error::Format {
            path: bin.clone(),
            reason: "array size overflow".into(),
        })?)?;
        let a = DMatrix::from_iterator(rows, cols, raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())));
        arrays.push((name, a));
    }
    r.finish()?;
    Ok(ModelFile {
        kind,
        arrays,
        meta: manifest.meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::small_run;

    #[test]
    fn dataset_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        let x = small_run(3).to_unit_mass().unwrap();
        save_dataset(&x, &path).unwrap();
        let y = load_dataset(&path).unwrap();
        assert_eq!(x.data.as_slice().len(), y.data.as_slice().len());
        for (a, b) in x.data.iter().zip(y.data.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(x, y);
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        save_dataset(&small_run(0), &path).unwrap();
        let bin = payload_path(&path);
        let mut bytes = fs::read(&bin).unwrap();
        bytes[100] ^= 0x01;
        fs::write(&bin, bytes).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Checksum(_))));
    }

    #[test]
    fn unknown_major_version_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        save_dataset(&small_run(0), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap().replace("\"1.0\"", "\"2.0\"");
        fs::write(&path, text).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Version { .. })));
    }

    #[test]
    fn truncated_payload_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        save_dataset(&small_run(0), &path).unwrap();
        let bin = payload_path(&path);
        let mut bytes = fs::read(&bin).unwrap();
        bytes.truncate(bytes.len() - 5);
        fs::write(&bin, &bytes).unwrap();
        // fix the checksum so the truncation itself is what gets caught
        let text = fs::read_to_string(&path).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["payload_sha256"] = serde_json::Value::String(sha256_hex(&bytes));
        fs::write(&path, serde_json::to_vec(&v).unwrap()).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn model_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut m = ModelFile::new(SectionKind::Mvar, serde_json::json!({"lag": 2}));
        m.push("coef", DMatrix::from_row_slice(2, 3, &[1.0, -2.5, 3.0, 0.1, 1e-300, f64::MAX]));
        m.push("empty", DMatrix::zeros(0, 4));
        write_model(&path, &m).unwrap();
        assert_eq!(read_model(&path, SectionKind::Mvar).unwrap(), m);
        assert!(read_model(&path, SectionKind::Pod).is_err());
    }
}
