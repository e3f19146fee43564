//! Shared image/label embedding space.
//!
//! A store is a pair of files: a line-delimited JSON manifest describing each
//! record, and a binary matrix holding one row per record. Rows are stored raw
//! by producers and normalized to unit length here, once, at load time.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Leading bytes of every matrix file.
pub const MATRIX_MAGIC: &[u8; 8] = b"ICCEMB1\0";

/// Rows whose norm already lies this close to one are kept bit-for-bit, so
/// that writing a loaded store and loading it again is exact.
const UNIT_NORM_SLACK: f64 = 1e-7;
const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Image,
    Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecord {
    pub id: String,
    pub kind: RecordKind,
    /// Class name for labels; ground-truth class for images.
    #[serde(default)]
    pub label_text: Option<String>,
    #[serde(default)]
    pub source_path: Option<String>,
    pub row: usize,
}

/// Immutable, validated set of unit vectors addressed by id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dims: usize,
    records: Vec<EmbeddingRecord>,
    matrix: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    /// Builds a store from in-memory rows, applying the same validation and
    /// normalization as [`load_store`]. `rows[i]` belongs to `records[i]`;
    /// the `row` field of each record is reassigned to its position.
    pub fn from_rows(mut records: Vec<EmbeddingRecord>, rows: Vec<Vec<f32>>) -> Result<Self> {
        if records.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                what: "row count",
                expected: records.len(),
                found: rows.len(),
            });
        }
        let dims = rows.first().map(Vec::len).unwrap_or(0);
        let mut matrix = Vec::with_capacity(dims * rows.len());
        for (i, (rec, row)) in records.iter_mut().zip(&rows).enumerate() {
            if row.len() != dims {
                return Err(Error::DimensionMismatch {
                    what: "row width",
                    expected: dims,
                    found: row.len(),
                });
            }
            rec.row = i;
            matrix.extend_from_slice(row);
        }
        Self::assemble(dims, records, matrix)
    }

    fn assemble(dims: usize, records: Vec<EmbeddingRecord>, mut matrix: Vec<f32>) -> Result<Self> {
        if dims == 0 {
            return Err(Error::MalformedMatrix("dims must be positive".into()));
        }
        let rows = matrix.len() / dims;
        let mut index = HashMap::with_capacity(records.len());
        let mut seen_rows = HashSet::with_capacity(records.len());
        for (pos, rec) in records.iter().enumerate() {
            if rec.row >= rows {
                return Err(Error::MalformedManifest {
                    line: pos + 1,
                    reason: format!("row {} out of range for {} rows", rec.row, rows),
                });
            }
            if !seen_rows.insert(rec.row) {
                return Err(Error::MalformedManifest {
                    line: pos + 1,
                    reason: format!("row {} used twice", rec.row),
                });
            }
            if rec.kind == RecordKind::Label && rec.label_text.as_deref().is_none_or(|t| t.is_empty()) {
                return Err(Error::MalformedManifest {
                    line: pos + 1,
                    reason: format!("label record {} has no label_text", rec.id),
                });
            }
            if index.insert(rec.id.clone(), pos).is_some() {
                return Err(Error::MalformedManifest {
                    line: pos + 1,
                    reason: format!("duplicate id {}", rec.id),
                });
            }
        }

        for rec in &records {
            let row = &mut matrix[rec.row * dims..(rec.row + 1) * dims];
            normalize_row(row).map_err(|kind| match kind {
                RowDefect::NonFinite => Error::NonFiniteVector { id: rec.id.clone() },
                RowDefect::Zero => Error::ZeroVector { id: rec.id.clone() },
            })?;
        }

        Ok(Self {
            dims,
            records,
            matrix,
            index,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn record(&self, id: &str) -> Result<&EmbeddingRecord> {
        self.index
            .get(id)
            .map(|&i| &self.records[i])
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn vector(&self, id: &str) -> Result<&[f32]> {
        let rec = self.record(id)?;
        Ok(&self.matrix[rec.row * self.dims..(rec.row + 1) * self.dims])
    }

    /// Cosine similarity of two stored unit vectors, clamped to [-1, 1].
    pub fn cosine_sim(&self, a: &str, b: &str) -> Result<f64> {
        let va = self.vector(a)?;
        let vb = self.vector(b)?;
        Ok(dot(va, vb).clamp(-1.0, 1.0))
    }

    /// The `k` candidates most similar to `query`, descending by similarity,
    /// ties broken by ascending id.
    pub fn top_k_by_similarity<S: AsRef<str>>(
        &self,
        query: &str,
        candidates: &[S],
        k: usize,
    ) -> Result<Vec<(String, f64)>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if candidates.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        let mut scored = candidates
            .iter()
            .map(|c| {
                let c = c.as_ref();
                self.cosine_sim(query, c).map(|s| (c.to_string(), s))
            })
            .collect::<Result<Vec<_>>>()?;
        sort_by_similarity(&mut scored);
        scored.truncate(k);
        Ok(scored)
    }

    /// Writes the store back out as a manifest/matrix pair. Rows are written in
    /// record order and record `row` fields are renumbered to match.
    pub fn save(&self, manifest_path: &Path, matrix_path: &Path) -> Result<()> {
        let mut records = Vec::with_capacity(self.records.len());
        let mut rows = Vec::with_capacity(self.records.len());
        for (i, rec) in self.records.iter().enumerate() {
            let mut rec = rec.clone();
            rows.push(self.vector(&rec.id)?.to_vec());
            rec.row = i;
            records.push(rec);
        }
        write_manifest(manifest_path, &records)?;
        write_matrix(matrix_path, self.dims, &rows)
    }
}

/// Descending similarity, then ascending id.
pub(crate) fn sort_by_similarity(scored: &mut [(String, f64)]) {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

enum RowDefect {
    NonFinite,
    Zero,
}

fn normalize_row(row: &mut [f32]) -> std::result::Result<(), RowDefect> {
    if row.iter().any(|v| !v.is_finite()) {
        return Err(RowDefect::NonFinite);
    }
    let norm = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
    if norm < MIN_NORM {
        return Err(RowDefect::Zero);
    }
    if (norm - 1.0).abs() > UNIT_NORM_SLACK {
        for v in row.iter_mut() {
            *v = (f64::from(*v) / norm) as f32;
        }
    }
    Ok(())
}

/// Loads and validates a manifest/matrix pair.
pub fn load_store(manifest_path: &Path, matrix_path: &Path) -> Result<EmbeddingStore> {
    let records = read_manifest(manifest_path)?;
    let (rows, dims, matrix) = read_matrix(matrix_path)?;
    if rows != records.len() {
        return Err(Error::DimensionMismatch {
            what: "matrix rows vs manifest records",
            expected: records.len(),
            found: rows,
        });
    }
    EmbeddingStore::assemble(dims, records, matrix)
}

pub fn read_manifest(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedManifest {
            line: i + 1,
            reason: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

pub fn write_manifest(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for rec in records {
        let line = serde_json::to_string(rec).expect("record serializes");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Returns `(rows, dims, row-major values)`.
pub fn read_matrix(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < 16 || &bytes[..8] != MATRIX_MAGIC {
        return Err(Error::MalformedMatrix("bad magic or truncated header".into()));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dims = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    let expected = rows
        .checked_mul(dims)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::MalformedMatrix("header overflows".into()))?;
    if body.len() != expected {
        return Err(Error::MalformedMatrix(format!(
            "expected {expected} payload bytes for {rows}x{dims}, found {}",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((rows, dims, values))
}

pub fn encode_matrix(dims: usize, rows: &[Vec<f32>]) -> Result<Vec<u8>> {
    let mut bytes = Vec::with_capacity(16 + rows.len() * dims * 4);
    bytes.extend_from_slice(MATRIX_MAGIC);
    let n = u32::try_from(rows.len()).map_err(|_| Error::MalformedMatrix("too many rows".into()))?;
    let d = u32::try_from(dims).map_err(|_| Error::MalformedMatrix("too many dims".into()))?;
    bytes.extend_from_slice(&n.to_le_bytes());
    bytes.extend_from_slice(&d.to_le_bytes());
    for row in rows {
        if row.len() != dims {
            return Err(Error::DimensionMismatch {
                what: "row width",
                expected: dims,
                found: row.len(),
            });
        }
        for v in row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(bytes)
}

pub fn write_matrix(path: &Path, dims: usize, rows: &[Vec<f32>]) -> Result<()> {
    let bytes = encode_matrix(dims, rows)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// The closed set of candidate classes, in canonical tie-break order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelCatalog {
    classes: Vec<String>,
    embedding_ids: Vec<String>,
}

impl LabelCatalog {
    /// Binds each class name to the single label record carrying it.
    pub fn from_store(store: &EmbeddingStore, classes: Vec<String>) -> Result<Self> {
        let mut by_text: HashMap<&str, Vec<&str>> = HashMap::new();
        for rec in store.records() {
            if rec.kind == RecordKind::Label {
                if let Some(t) = rec.label_text.as_deref() {
                    by_text.entry(t).or_default().push(rec.id.as_str());
                }
            }
        }
        let mut seen = HashSet::new();
        let mut embedding_ids = Vec::with_capacity(classes.len());
        for class in &classes {
            if class.is_empty() {
                return Err(Error::ConfigInvalid("empty class name in catalog".into()));
            }
            if !seen.insert(class.as_str()) {
                return Err(Error::ConfigInvalid(format!("duplicate class {class:?}")));
            }
            match by_text.get(class.as_str()).map(Vec::as_slice) {
                Some([id]) => embedding_ids.push(id.to_string()),
                Some(_) => {
                    return Err(Error::ConfigInvalid(format!(
                        "class {class:?} has more than one label embedding"
                    )))
                }
                None => return Err(Error::UnknownLabel(class.clone())),
            }
        }
        Ok(Self { classes, embedding_ids })
    }

    /// Every label record in the store, in manifest order.
    pub fn all_labels(store: &EmbeddingStore) -> Result<Self> {
        let classes = store
            .records()
            .iter()
            .filter(|r| r.kind == RecordKind::Label)
            .filter_map(|r| r.label_text.clone())
            .collect();
        Self::from_store(store, classes)
    }

    /// Reads class names, one per line; blank lines and `#` comments skipped.
    pub fn load(store: &EmbeddingStore, path: &Path) -> Result<Self> {
        Self::from_store(store, read_name_list(path)?)
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn contains(&self, class: &str) -> bool {
        self.position(class).is_some()
    }

    pub fn position(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    pub fn embedding_id(&self, class: &str) -> Result<&str> {
        self.position(class)
            .map(|i| self.embedding_ids[i].as_str())
            .ok_or_else(|| Error::UnknownLabel(class.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.classes
            .iter()
            .zip(&self.embedding_ids)
            .map(|(c, e)| (c.as_str(), e.as_str()))
    }
}

/// Reads a list of names, one per line; blank lines and `#` comments skipped.
pub fn read_name_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}
