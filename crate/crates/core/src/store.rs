//! Embedding matrices, prompt banks and label vectors, plus their on-disk
//! formats.
//!
//! Matrices are stored in the EMB1 binary layout (all integers little-endian):
//!
//! | bytes  | content                               |
//! |--------|---------------------------------------|
//! | 0..4   | magic `EMB1`                          |
//! | 4..8   | version, `u32` = 1                    |
//! | 8..16  | rows, `u64`                           |
//! | 16..24 | dim, `u64`                            |
//! | 24     | dtype, `u8` = 0 (IEEE-754 binary32)   |
//! | 25..28 | zero padding                          |
//! | 28..   | `rows * dim` little-endian `f32`, row-major |
//!
//! A prompt bank is a JSON manifest pointing at two EMB1 files. Relative
//! paths in the manifest are resolved against the manifest's directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EMB1_MAGIC: [u8; 4] = *b"EMB1";
pub const EMB1_VERSION: u32 = 1;
pub const EMB1_HEADER_LEN: usize = 28;
const DTYPE_F32: u8 = 0;

/// Row norms within this distance of 1 count as normalized.
pub const NORM_TOLERANCE: f64 = 1e-4;
/// Rows with a norm at or below this cannot be normalized.
pub const MIN_ROW_NORM: f64 = 1e-12;

pub const DEFAULT_TEMPERATURE_ENERGY: f64 = 0.01;
pub const DEFAULT_TEMPERATURE_MCM: f64 = 1.0;

/// Dense row-major `rows x dim` matrix of `f32` feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f32>,
    normalized: bool,
}

impl EmbeddingMatrix {
    /// Validates shape and finiteness, then sets the `normalized` flag by
    /// checking every row norm against [`NORM_TOLERANCE`].
    pub fn new(rows: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDim);
        }
        if values.len() != rows * dim {
            return Err(Error::ShapeMismatch {
                rows,
                dim,
                found: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                row: pos / dim,
                col: pos % dim,
            });
        }
        let normalized = values
            .chunks_exact(dim)
            .all(|row| (row_norm(row) - 1.0).abs() <= NORM_TOLERANCE);
        Ok(Self {
            rows,
            dim,
            values,
            normalized,
        })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, values)
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(0, dim, Vec::new())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.values.chunks_exact(self.dim)
    }

    /// Keeps the rows listed in `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            dim: self.dim,
            values,
            normalized: self.normalized,
        }
    }

    /// Stacks `other` under `self`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Ok(Self {
            rows: self.rows + other.rows,
            dim: self.dim,
            values,
            normalized: self.normalized && other.normalized,
        })
    }

    /// Serializes to the EMB1 byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(EMB1_HEADER_LEN + self.values.len() * 4);
        out.extend_from_slice(&EMB1_MAGIC);
        out.extend_from_slice(&EMB1_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        out.push(DTYPE_F32);
        out.extend_from_slice(&[0u8; 3]);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses an EMB1 byte buffer. The payload length must match the header
    /// exactly; trailing bytes are rejected like missing ones.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < EMB1_HEADER_LEN {
            if bytes.len() >= 4 && bytes[..4] != EMB1_MAGIC {
                return Err(Error::BadMagic(bytes[..4].try_into().unwrap()));
            }
            return Err(Error::TruncatedHeader(bytes.len()));
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != EMB1_MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != EMB1_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let dim = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let dtype = bytes[24];
        if dtype != DTYPE_F32 {
            return Err(Error::UnsupportedDtype(dtype));
        }
        if dim == 0 {
            return Err(Error::ZeroDim);
        }
        let actual = (bytes.len() - EMB1_HEADER_LEN) as u64;
        let expected = rows.checked_mul(dim).and_then(|n| n.checked_mul(4)).unwrap_or(u64::MAX);
        if expected != actual {
            return Err(Error::PayloadSizeMismatch { expected, actual });
        }
        let values = bytes[EMB1_HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(rows as usize, dim as usize, values)
    }
}

fn row_norm(row: &[f32]) -> f64 {
    row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let bytes = fs::read(path)?;
    EmbeddingMatrix::from_bytes(&bytes)
}

pub fn save_embeddings(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, matrix.to_bytes())?;
    Ok(())
}

/// Divides every row by its Euclidean norm (computed in `f64`).
pub fn l2_normalize(matrix: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let mut values = Vec::with_capacity(matrix.values.len());
    for (i, row) in matrix.iter_rows().enumerate() {
        let norm = row_norm(row);
        if norm <= MIN_ROW_NORM {
            return Err(Error::ZeroNormRow(i));
        }
        values.extend(row.iter().map(|&v| (f64::from(v) / norm) as f32));
    }
    let mut out = EmbeddingMatrix::new(matrix.rows, matrix.dim, values)?;
    // Rows are unit length up to f32 rounding.
    out.normalized = true;
    Ok(out)
}

/// Class-prompt embeddings, the class-name-free context embedding and the
/// temperatures used by the softmax-based scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBank {
    class_embeddings: EmbeddingMatrix,
    context_embedding: EmbeddingMatrix,
    class_names: Vec<String>,
    temperature_energy: f64,
    temperature_mcm: f64,
}

impl PromptBank {
    pub fn new(
        class_embeddings: EmbeddingMatrix,
        context_embedding: EmbeddingMatrix,
        class_names: Vec<String>,
        temperature_energy: f64,
        temperature_mcm: f64,
    ) -> Result<Self> {
        if class_embeddings.rows() == 0 {
            return Err(Error::NoClasses);
        }
        if context_embedding.rows() != 1 {
            return Err(Error::ContextRows(context_embedding.rows()));
        }
        if context_embedding.dim() != class_embeddings.dim() {
            return Err(Error::DimensionMismatch {
                expected: class_embeddings.dim(),
                found: context_embedding.dim(),
            });
        }
        if class_names.len() != class_embeddings.rows() {
            return Err(Error::NameCountMismatch {
                classes: class_embeddings.rows(),
                names: class_names.len(),
            });
        }
        if !class_embeddings.is_normalized() || !context_embedding.is_normalized() {
            return Err(Error::NotNormalized);
        }
        for t in [temperature_energy, temperature_mcm] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::NonPositiveTemperature(t));
            }
        }
        Ok(Self {
            class_embeddings,
            context_embedding,
            class_names,
            temperature_energy,
            temperature_mcm,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_embeddings.rows()
    }

    pub fn dim(&self) -> usize {
        self.class_embeddings.dim()
    }

    pub fn class_embeddings(&self) -> &EmbeddingMatrix {
        &self.class_embeddings
    }

    pub fn context(&self) -> &[f32] {
        self.context_embedding.row(0)
    }

    pub fn context_embedding(&self) -> &EmbeddingMatrix {
        &self.context_embedding
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn temperature_energy(&self) -> f64 {
        self.temperature_energy
    }

    pub fn temperature_mcm(&self) -> f64 {
        self.temperature_mcm
    }
}

/// On-disk JSON manifest of a [`PromptBank`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBankManifest {
    pub class_names: Vec<String>,
    pub class_embeddings: PathBuf,
    pub context_embedding: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature_energy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature_mcm: Option<f64>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_prompt_bank(manifest_path: impl AsRef<Path>) -> Result<PromptBank> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path)?;
    let manifest: PromptBankManifest = serde_json::from_str(&text)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let classes = load_embeddings(resolve(base, &manifest.class_embeddings))?;
    let context = load_embeddings(resolve(base, &manifest.context_embedding))?;
    PromptBank::new(
        classes,
        context,
        manifest.class_names,
        manifest.temperature_energy.unwrap_or(DEFAULT_TEMPERATURE_ENERGY),
        manifest.temperature_mcm.unwrap_or(DEFAULT_TEMPERATURE_MCM),
    )
}

/// Writes the two embedding files and a manifest referencing them. Paths in
/// the manifest are stored relative to the manifest when the files share its
/// directory.
pub fn save_prompt_bank(
    bank: &PromptBank,
    manifest_path: impl AsRef<Path>,
    class_path: impl AsRef<Path>,
    context_path: impl AsRef<Path>,
) -> Result<()> {
    let manifest_path = manifest_path.as_ref();
    let base = manifest_path.parent().unwrap_or_else(|| Path::new(""));
    let rel = |p: &Path| -> PathBuf {
        match p.parent() {
            Some(parent) if parent == base => PathBuf::from(p.file_name().unwrap()),
            _ => p.to_path_buf(),
        }
    };
    save_embeddings(&bank.class_embeddings, class_path.as_ref())?;
    save_embeddings(&bank.context_embedding, context_path.as_ref())?;
    let manifest = PromptBankManifest {
        class_names: bank.class_names.clone(),
        class_embeddings: rel(class_path.as_ref()),
        context_embedding: rel(context_path.as_ref()),
        temperature_energy: Some(bank.temperature_energy),
        temperature_mcm: Some(bank.temperature_mcm),
    };
    let mut f = fs::File::create(manifest_path)?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Integer labels: class ids `1..=K` for training data, or `1` = ID /
/// `0` = OOD ground truth for detection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    values: Vec<u32>,
}

impl LabelVector {
    pub fn new(values: Vec<u32>) -> Self {
        Self { values }
    }

    /// Class labels in `1..=k`.
    pub fn classes(values: Vec<u32>, k: u32) -> Result<Self> {
        for (index, &label) in values.iter().enumerate() {
            if label == 0 || label > k {
                return Err(Error::LabelOutOfRange { index, label, max: k });
            }
        }
        Ok(Self { values })
    }

    /// Ground-truth ID/OOD mask with values in `{0, 1}`.
    pub fn binary(values: Vec<u32>) -> Result<Self> {
        for (index, &label) in values.iter().enumerate() {
            if label > 1 {
                return Err(Error::LabelOutOfRange { index, label, max: 1 });
            }
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn max_label(&self) -> u32 {
        self.values.iter().copied().max().unwrap_or(0)
    }
}

/// Reads an `index,label` CSV. Rows must be sorted by index `0..N-1`.
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelVector> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    check_header(&mut reader, "label")?;
    let mut values = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        let (index, value) = two_fields(&rec, line)?;
        check_index(index, i, line)?;
        let label = value.parse::<u32>().map_err(|e| Error::Csv {
            line,
            msg: e.to_string(),
        })?;
        values.push(label);
    }
    Ok(LabelVector::new(values))
}

pub fn save_labels(labels: &LabelVector, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["index", "label"]).map_err(csv_err)?;
    for (i, v) in labels.values.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an `index,score` CSV into plain values.
pub fn load_score_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    check_header(&mut reader, "score")?;
    let mut values = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        let (index, value) = two_fields(&rec, line)?;
        check_index(index, i, line)?;
        let v = value.parse::<f64>().map_err(|e| Error::Csv {
            line,
            msg: e.to_string(),
        })?;
        if !v.is_finite() {
            return Err(Error::NonFiniteValue { row: i, col: 1 });
        }
        values.push(v);
    }
    Ok(values)
}

/// Writes an `index,score` CSV with 9 significant digits per score.
pub fn save_score_csv(scores: &[f64], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, score_csv_string(scores))?;
    Ok(())
}

pub fn score_csv_string(scores: &[f64]) -> String {
    let mut out = String::from("index,score\n");
    for (i, s) in scores.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", format_sig9(*s)));
    }
    out
}

/// Formats like C's `%.9g`: 9 significant digits, trailing zeros trimmed.
pub fn format_sig9(x: f64) -> String {
    const SIG: i32 = 9;
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", (SIG - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-5..SIG).contains(&exp) {
        let decimals = (SIG - 1 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        format!(
            "{}e{}{:02}",
            trim_zeros(mantissa.to_string()),
            if exp < 0 { '-' } else { '+' },
            exp.abs()
        )
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Csv {
            line,
            msg: format!("{other:?}"),
        },
    }
}

fn check_header<R: std::io::Read>(reader: &mut csv::Reader<R>, second: &str) -> Result<()> {
    let headers = reader.headers().map_err(csv_err)?;
    if headers.is_empty() {
        return Err(Error::EmptyInput);
    }
    if headers.len() != 2 || &headers[0] != "index" || &headers[1] != second {
        return Err(Error::Csv {
            line: 1,
            msg: format!("expected header `index,{second}`"),
        });
    }
    Ok(())
}

fn two_fields(rec: &csv::StringRecord, line: usize) -> Result<(usize, &str)> {
    if rec.len() != 2 {
        return Err(Error::Csv {
            line,
            msg: format!("expected 2 fields, found {}", rec.len()),
        });
    }
    let index = rec[0].trim().parse::<usize>().map_err(|e| Error::Csv {
        line,
        msg: e.to_string(),
    })?;
    Ok((index, rec[1].trim()))
}

fn check_index(index: usize, expected: usize, line: usize) -> Result<()> {
    if index != expected {
        return Err(Error::Csv {
            line,
            msg: format!("index {index} out of order, expected {expected}"),
        });
    }
    Ok(())
}
