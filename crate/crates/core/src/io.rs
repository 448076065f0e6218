//! `.otm` binary matrices and dataset manifests.
//!
//! An `.otm` file is a 32-byte little-endian header followed by the payload:
//!
//! | offset | size | field                                         |
//! |-------:|-----:|-----------------------------------------------|
//! | 0      | 4    | magic `OTM1`                                  |
//! | 4      | 4    | version, `u32` = 1                            |
//! | 8      | 8    | rows, `u64`                                   |
//! | 16     | 8    | cols, `u64`                                   |
//! | 24     | 1    | dtype: 1 = `f32`, 2 = `f64`, 3 = `i64`        |
//! | 25     | 7    | zero padding                                  |
//! | 32     | …    | `rows * cols` values, row-major, little-endian |
//!
//! The file length must equal `32 + rows * cols * width` exactly.
//!
//! A manifest is line-oriented text; blank lines and lines starting with `#`
//! are ignored, every other line is `key value`:
//!
//! ```text
//! name my-dataset
//! feature <source-id> <path>
//! semantic <source-id> <path>
//! labels <path>
//! class_names cat, dog, golden retriever
//! ```
//!
//! `feature` and `semantic` repeat, in source order. Relative paths are
//! resolved against the manifest's directory.

use std::fs::{self, File};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::prob::{FeatureMatrix, ProbMatrix};

pub const MAGIC: [u8; 4] = *b"OTM1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Dtype {
    F32 = 1,
    F64 = 2,
    I64 = 3,
}

impl Dtype {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            3 => Some(Dtype::I64),
            _ => None,
        }
    }

    pub fn width(self) -> u64 {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 | Dtype::I64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
            Dtype::I64 => "i64",
        }
    }

    pub fn is_real(self) -> bool {
        !matches!(self, Dtype::I64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatrixFileHeader {
    pub version: u32,
    pub rows: u64,
    pub cols: u64,
    pub dtype: Dtype,
}

impl MatrixFileHeader {
    pub fn new(rows: usize, cols: usize, dtype: Dtype) -> Self {
        Self { version: VERSION, rows: rows as u64, cols: cols as u64, dtype }
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..8].copy_from_slice(&self.version.to_le_bytes());
        out[8..16].copy_from_slice(&self.rows.to_le_bytes());
        out[16..24].copy_from_slice(&self.cols.to_le_bytes());
        out[24] = self.dtype as u8;
        out
    }

    /// Parses the fixed header; `bytes` may be longer than 32.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(
                bytes.len() as u64,
                format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len()),
            ));
        }
        if bytes[0..4] != MAGIC {
            return Err(Error::format(0, format!("bad magic {:02x?}", &bytes[0..4])));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let rows = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let cols = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
        let dtype = Dtype::from_code(bytes[24]).ok_or_else(|| Error::format(24, format!("unknown dtype {}", bytes[24])))?;
        if let Some(pos) = bytes[25..HEADER_LEN].iter().position(|&b| b != 0) {
            return Err(Error::format(25 + pos as u64, "non-zero header padding"));
        }
        Ok(Self { version, rows, cols, dtype })
    }

    /// Payload size in bytes, `None` on overflow.
    pub fn payload_len(&self) -> Option<u64> {
        self.rows.checked_mul(self.cols)?.checked_mul(self.dtype.width())
    }

    /// Checks that a file of `len` bytes holds exactly this header's payload.
    pub fn check_length(&self, len: u64) -> Result<()> {
        let payload = self
            .payload_len()
            .ok_or_else(|| Error::format(8, format!("{} x {} payload overflows", self.rows, self.cols)))?;
        let expected = payload
            .checked_add(HEADER_LEN as u64)
            .ok_or_else(|| Error::format(8, "payload size overflows"))?;
        if len < expected {
            return Err(Error::format(len, format!("truncated payload: expected {expected} bytes, file has {len}")));
        }
        if len > expected {
            return Err(Error::format(expected, format!("{} trailing bytes after payload", len - expected)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
}

/// A decoded `.otm` file.
#[derive(Debug, Clone, PartialEq)]
pub struct OtmFile {
    pub header: MatrixFileHeader,
    pub payload: Payload,
}

impl OtmFile {
    pub fn rows(&self) -> usize {
        self.header.rows as usize
    }

    pub fn cols(&self) -> usize {
        self.header.cols as usize
    }

    /// Real payloads widened to `f64`; integer payloads are a type error.
    pub fn into_real(self) -> Result<Matrix<f64>> {
        let (rows, cols) = (self.rows(), self.cols());
        let data = match self.payload {
            Payload::F32(v) => v.into_iter().map(f64::from).collect(),
            Payload::F64(v) => v,
            Payload::I64(_) => return Err(Error::Type("integer matrix where a real matrix was expected".into())),
        };
        Matrix::new(rows, cols, data)
    }
}

pub fn decode(bytes: &[u8]) -> Result<OtmFile> {
    let header = MatrixFileHeader::decode(bytes)?;
    header.check_length(bytes.len() as u64)?;
    let body = &bytes[HEADER_LEN..];
    let payload = match header.dtype {
        Dtype::F32 => Payload::F32(body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect()),
        Dtype::F64 => Payload::F64(body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()),
        Dtype::I64 => Payload::I64(body.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()),
    };
    Ok(OtmFile { header, payload })
}

/// Serializes a real matrix; values must be representable in `dtype`.
pub fn encode_matrix(m: &Matrix<f64>, dtype: Dtype) -> Result<Vec<u8>> {
    let header = MatrixFileHeader::new(m.rows(), m.cols(), dtype);
    let mut out = Vec::with_capacity(HEADER_LEN + m.as_slice().len() * dtype.width() as usize);
    out.extend_from_slice(&header.encode());
    for (idx, &v) in m.as_slice().iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::invalid(format!("value {v} at index {idx} is not finite")));
        }
        match dtype {
            Dtype::F32 => {
                if v.abs() > f32::MAX as f64 {
                    return Err(Error::invalid(format!("value {v} at index {idx} overflows f32")));
                }
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
            Dtype::I64 => {
                if v.fract() != 0.0 || v < i64::MIN as f64 || v >= i64::MAX as f64 {
                    return Err(Error::invalid(format!("value {v} at index {idx} is not an i64")));
                }
                out.extend_from_slice(&(v as i64).to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Serializes class indices as an `N x 1` integer matrix.
pub fn encode_labels(labels: &[usize]) -> Vec<u8> {
    let header = MatrixFileHeader::new(labels.len(), 1, Dtype::I64);
    let mut out = Vec::with_capacity(HEADER_LEN + labels.len() * 8);
    out.extend_from_slice(&header.encode());
    for &l in labels {
        out.extend_from_slice(&(l as i64).to_le_bytes());
    }
    out
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::path(path, e.to_string()))
}

/// Reads and validates only the header, checking the file length.
pub fn read_header(path: impl AsRef<Path>) -> Result<MatrixFileHeader> {
    let path = path.as_ref();
    let mut file = open(path)?;
    let len = file.metadata()?.len();
    let mut buf = [0u8; HEADER_LEN];
    let got = read_up_to(&mut file, &mut buf)?;
    let header = MatrixFileHeader::decode(&buf[..got])?;
    header.check_length(len)?;
    Ok(header)
}

fn read_up_to(file: &mut File, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = file.read(&mut buf[filled..])?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    Ok(filled)
}

/// Reads a whole `.otm` file. The payload is only allocated after the header
/// and the file length agree.
pub fn read_otm(path: impl AsRef<Path>) -> Result<OtmFile> {
    let path = path.as_ref();
    read_header(path)?;
    let bytes = fs::read(path).map_err(|e| Error::path(path, e.to_string()))?;
    decode(&bytes)
}

/// Reads a real matrix (`f32` or `f64` payload) as `f64`.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix<f64>> {
    read_otm(path)?.into_real()
}

/// Reads an `N x 1` integer label file.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let file = read_otm(path)?;
    if file.header.cols != 1 {
        return Err(Error::shape(format!("label file must have one column, has {}", file.header.cols)));
    }
    match file.payload {
        Payload::I64(v) => v
            .into_iter()
            .enumerate()
            .map(|(i, l)| usize::try_from(l).map_err(|_| Error::invalid(format!("negative label {l} at row {i}"))))
            .collect(),
        _ => Err(Error::Type(format!("labels must be i64, file holds {}", file.header.dtype.name()))),
    }
}

/// Writes bytes to `path` through a temporary file in the same directory.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let mut staged = StagedWrites::default();
    staged.stage(path, bytes)?;
    staged.commit()
}

pub fn write_matrix(path: impl AsRef<Path>, m: &Matrix<f64>, dtype: Dtype) -> Result<()> {
    write_atomic(path, &encode_matrix(m, dtype)?)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    write_atomic(path, &encode_labels(labels))
}

/// A batch of files written to temporaries and renamed into place together
/// once every write has succeeded. Dropping without committing removes the
/// temporaries.
#[derive(Default)]
pub struct StagedWrites {
    pending: Vec<(NamedTempFile, PathBuf)>,
}

impl StagedWrites {
    pub fn stage(&mut self, path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
        let path = path.as_ref();
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = NamedTempFile::new_in(dir).map_err(|e| Error::path(dir, e.to_string()))?;
        tmp.write_all(bytes)?;
        tmp.flush()?;
        self.pending.push((tmp, path.to_path_buf()));
        Ok(())
    }

    pub fn commit(self) -> Result<()> {
        for (tmp, path) in self.pending {
            tmp.persist(&path).map_err(|e| Error::path(&path, e.error.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceEntry {
    pub id: String,
    /// Path as written in the manifest.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub name: String,
    pub feature_files: Vec<SourceEntry>,
    pub semantic_files: Vec<SourceEntry>,
    pub labels_path: Option<PathBuf>,
    pub class_names: Option<Vec<String>>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut name = None;
        let mut feature_files = Vec::new();
        let mut semantic_files = Vec::new();
        let mut labels_path = None;
        let mut class_names = None;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |msg: String| Error::invalid(format!("manifest line {}: {msg}", lineno + 1));
            let (key, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let rest = rest.trim();
            if rest.is_empty() {
                return Err(at(format!("`{key}` needs a value")));
            }
            match key {
                "name" => {
                    if name.replace(rest.to_string()).is_some() {
                        return Err(at("duplicate `name`".into()));
                    }
                }
                "feature" | "semantic" => {
                    let (id, path) = rest
                        .split_once(char::is_whitespace)
                        .ok_or_else(|| at(format!("`{key}` needs a source id and a path")))?;
                    let list = if key == "feature" { &mut feature_files } else { &mut semantic_files };
                    if list.iter().any(|e: &SourceEntry| e.id == id) {
                        return Err(at(format!("duplicate {key} source `{id}`")));
                    }
                    list.push(SourceEntry { id: id.to_string(), path: PathBuf::from(path.trim()) });
                }
                "labels" => {
                    if labels_path.replace(PathBuf::from(rest)).is_some() {
                        return Err(at("duplicate `labels`".into()));
                    }
                }
                "class_names" => {
                    let names: Vec<String> = rest.split(',').map(|s| s.trim().to_string()).collect();
                    if names.iter().any(String::is_empty) {
                        return Err(at("empty class name".into()));
                    }
                    class_names = Some(names);
                }
                other => return Err(at(format!("unknown key `{other}`"))),
            }
        }

        let name = name.ok_or_else(|| Error::invalid("manifest has no `name`"))?;
        if semantic_files.is_empty() {
            return Err(Error::invalid("manifest lists no `semantic` file"));
        }
        Ok(Self { name, feature_files, semantic_files, labels_path, class_names, base_dir: base_dir.into() })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("name {}\n", self.name);
        for e in &self.feature_files {
            out.push_str(&format!("feature {} {}\n", e.id, e.path.display()));
        }
        for e in &self.semantic_files {
            out.push_str(&format!("semantic {} {}\n", e.id, e.path.display()));
        }
        if let Some(p) = &self.labels_path {
            out.push_str(&format!("labels {}\n", p.display()));
        }
        if let Some(names) = &self.class_names {
            out.push_str(&format!("class_names {}\n", names.join(", ")));
        }
        out
    }

    /// Checks that every file exists, has a valid header, and that sample and
    /// class counts agree. Returns `(N, K)`.
    pub fn validate(&self) -> Result<(usize, usize)> {
        let shape_of = |e: &Path, kind: &str, want_real: bool| -> Result<MatrixFileHeader> {
            let path = self.resolve(e);
            if !path.exists() {
                return Err(Error::path(&path, format!("{kind} file not found")));
            }
            let h = read_header(&path)?;
            if want_real != h.dtype.is_real() {
                return Err(Error::Type(format!("{}: {kind} file holds {}", path.display(), h.dtype.name())));
            }
            Ok(h)
        };

        let first = &self.semantic_files[0];
        let h0 = shape_of(&first.path, "semantic", true)?;
        let (n, k) = (h0.rows, h0.cols);
        let mismatch = |what: &str, a: &Path, av: u64, b: &Path, bv: u64| {
            Error::Consistency(format!("{what} mismatch: {} has {av}, {} has {bv}", a.display(), b.display()))
        };
        for e in &self.semantic_files[1..] {
            let h = shape_of(&e.path, "semantic", true)?;
            if h.rows != n {
                return Err(mismatch("sample count", &first.path, n, &e.path, h.rows));
            }
            if h.cols != k {
                return Err(mismatch("class count", &first.path, k, &e.path, h.cols));
            }
        }
        for e in &self.feature_files {
            let h = shape_of(&e.path, "feature", true)?;
            if h.rows != n {
                return Err(mismatch("sample count", &first.path, n, &e.path, h.rows));
            }
        }
        if let Some(p) = &self.labels_path {
            let h = shape_of(p, "labels", false)?;
            if h.cols != 1 {
                return Err(Error::shape(format!("{}: label file must have one column", p.display())));
            }
            if h.rows != n {
                return Err(mismatch("sample count", &first.path, n, p, h.rows));
            }
        }
        if let Some(names) = &self.class_names {
            if names.len() as u64 != k {
                return Err(Error::Consistency(format!("{} class names for {k} classes", names.len())));
            }
        }
        Ok((n as usize, k as usize))
    }
}

/// Parses and eagerly validates a manifest file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::path(path, e.to_string()))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = Manifest::parse(&text, base)?;
    manifest.validate()?;
    Ok(manifest)
}

/// Matrices named by a manifest, validated for use by the engine.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub features: Vec<(String, FeatureMatrix<f64>)>,
    pub semantics: Vec<(String, ProbMatrix<f64>)>,
    pub labels: Option<Vec<usize>>,
    pub class_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.semantics[0].1.rows()
    }

    pub fn n_classes(&self) -> usize {
        self.semantics[0].1.cols()
    }

    pub fn feature_matrices(&self) -> Vec<FeatureMatrix<f64>> {
        self.features.iter().map(|(_, x)| x.clone()).collect()
    }

    pub fn semantic_matrices(&self) -> Vec<ProbMatrix<f64>> {
        self.semantics.iter().map(|(_, y)| y.clone()).collect()
    }
}

pub fn load_dataset(manifest: &Manifest) -> Result<Dataset> {
    let (_, k) = manifest.validate()?;
    let mut semantics = Vec::new();
    for e in &manifest.semantic_files {
        let path = manifest.resolve(&e.path);
        let y = ProbMatrix::ingest(read_matrix(&path)?)
            .map_err(|err| Error::invalid(format!("{}: {err}", path.display())))?;
        semantics.push((e.id.clone(), y));
    }
    let mut features = Vec::new();
    for e in &manifest.feature_files {
        let path = manifest.resolve(&e.path);
        let x = FeatureMatrix::new(read_matrix(&path)?)
            .map_err(|err| Error::invalid(format!("{}: {err}", path.display())))?;
        features.push((e.id.clone(), x));
    }
    let labels = match &manifest.labels_path {
        Some(p) => {
            let labels = read_labels(manifest.resolve(p))?;
            if let Some(bad) = labels.iter().find(|&&l| l >= k) {
                return Err(Error::invalid(format!("label {bad} out of range for {k} classes")));
            }
            Some(labels)
        }
        None => None,
    };
    Ok(Dataset { name: manifest.name.clone(), features, semantics, labels, class_names: manifest.class_names.clone() })
}
