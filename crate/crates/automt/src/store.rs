//! The persistent MR table: a CSV file plus a binary embedding sidecar.
//!
//! Sidecar layout: `b"AMTE"`, dimension (u32 LE), row count (u64 LE), then
//! `rows * dim` little-endian f32 values in index order.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use automt_core::hashing::normalize;
use automt_core::retrieval::{rank, RetrievalError, StoredMr};
use automt_core::{MetamorphicRelation, Verb};

use crate::backends::{Backend, BackendError};
use crate::config::EmbedText;
use crate::fsutil::write_atomic;

pub const CSV_FILE: &str = "mrs.csv";
pub const SIDECAR_FILE: &str = "embeddings.bin";
pub const SIDECAR_MAGIC: &[u8; 4] = b"AMTE";
pub const CSV_HEADER: [&str; 9] = [
    "Index",
    "MR",
    "RoadType",
    "Manipulation",
    "ExpectedBehavior",
    "ExecutionCount",
    "Region",
    "SourceRule",
    "HallucinationScore",
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StoreError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("cannot build a store from zero MRs")]
    Empty,
    #[error("unknown MR index {0}")]
    UnknownIndex(u32),
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{0}")]
    Io(String),
    #[error("{path}: {detail}")]
    Format { path: String, detail: String },
    #[error("invalid MR {index}: {detail}")]
    InvalidMr { index: u32, detail: String },
}

impl From<RetrievalError> for StoreError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::DimensionMismatch { expected, found } => StoreError::DimensionMismatch { expected, found },
            RetrievalError::ZeroTopK => StoreError::Io("top_k must be at least 1".into()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> StoreError {
    StoreError::Io(format!("{}: {e}", path.display()))
}

fn format_err(path: &Path, detail: impl Into<String>) -> StoreError {
    StoreError::Format { path: path.display().to_string(), detail: detail.into() }
}

/// The text embedded for an MR.
pub fn embedding_text(mr: &MetamorphicRelation, mode: EmbedText, system_name: &str) -> Result<String, StoreError> {
    let gherkin = mr.render_with(system_name).map_err(|e| StoreError::InvalidMr { index: 0, detail: e.to_string() })?;
    Ok(match mode {
        EmbedText::Gherkin => gherkin,
        EmbedText::Structured => format!(
            "{gherkin}\nRoad type: {}\nManipulation: {}\nExpected behavior: {}",
            mr.road_type, mr.manipulation, mr.expected_behavior
        ),
    })
}

/// A store directory loaded into memory. Readers take snapshots; writers go
/// through one lock and rewrite the CSV atomically.
#[derive(Debug)]
pub struct MrStore {
    dir: PathBuf,
    entries: Mutex<Vec<StoredMr>>,
    dim: usize,
}

impl MrStore {
    /// Embeds and persists `mrs` with indices `0..n` and zero counts.
    pub fn build(
        dir: &Path,
        mrs: &[MetamorphicRelation],
        embed: &Backend,
        mode: EmbedText,
        system_name: &str,
    ) -> Result<MrStore, StoreError> {
        if mrs.is_empty() {
            return Err(StoreError::Empty);
        }
        let mut texts = Vec::with_capacity(mrs.len());
        for (i, mr) in mrs.iter().enumerate() {
            texts.push(embedding_text(mr, mode, system_name).map_err(|e| match e {
                StoreError::InvalidMr { detail, .. } => StoreError::InvalidMr { index: i as u32, detail },
                other => other,
            })?);
        }
        let vectors = embed.embed(&texts)?;
        let dim = vectors[0].len();
        let mut entries = Vec::with_capacity(mrs.len());
        for (i, (mr, v)) in mrs.iter().zip(vectors).enumerate() {
            if v.len() != dim {
                return Err(StoreError::DimensionMismatch { expected: dim, found: v.len() });
            }
            let wide: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
            entries.push(StoredMr { index: i as u32, mr: mr.clone(), embedding: normalize(&wide), execution_count: 0 });
        }
        let store = MrStore { dir: dir.to_path_buf(), entries: Mutex::new(entries), dim };
        store.save()?;
        Ok(store)
    }

    pub fn load(dir: &Path) -> Result<MrStore, StoreError> {
        let (dim, vectors) = read_sidecar(&dir.join(SIDECAR_FILE))?;
        let rows = read_csv(&dir.join(CSV_FILE))?;
        if rows.len() != vectors.len() {
            return Err(format_err(
                &dir.join(SIDECAR_FILE),
                format!("{} rows but the CSV has {}", vectors.len(), rows.len()),
            ));
        }
        let entries = rows
            .into_iter()
            .zip(vectors)
            .map(|((index, mr, execution_count), embedding)| StoredMr { index, mr, embedding, execution_count })
            .collect();
        Ok(MrStore { dir: dir.to_path_buf(), entries: Mutex::new(entries), dim })
    }

    pub fn exists(dir: &Path) -> bool {
        dir.join(CSV_FILE).is_file() && dir.join(SIDECAR_FILE).is_file()
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<StoredMr> {
        self.lock().clone()
    }

    pub fn get(&self, index: u32) -> Option<StoredMr> {
        self.lock().iter().find(|e| e.index == index).cloned()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Vec<StoredMr>> {
        self.entries.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn save(&self) -> Result<(), StoreError> {
        let entries = self.lock();
        write_atomic(&self.dir.join(SIDECAR_FILE), &encode_sidecar(self.dim, &entries))
            .map_err(|e| io_err(&self.dir, e))?;
        write_csv(&self.dir.join(CSV_FILE), &entries)
    }

    /// Embeds `query` and ranks the whole store against it.
    pub fn retrieve(&self, query: &str, top_k: usize, embed: &Backend) -> Result<Vec<(StoredMr, f64)>, StoreError> {
        let v = embed.embed(&[query.to_string()])?.remove(0);
        let wide: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
        self.retrieve_vector(&normalize(&wide), top_k)
    }

    pub fn retrieve_vector(&self, query: &[f32], top_k: usize) -> Result<Vec<(StoredMr, f64)>, StoreError> {
        let entries = self.lock();
        Ok(rank(&entries, query, top_k)?.into_iter().map(|(e, s)| (e.clone(), s)).collect())
    }

    /// Increments and persists one execution count; returns the new value.
    pub fn record_execution(&self, index: u32) -> Result<u64, StoreError> {
        let mut entries = self.lock();
        let entry = entries.iter_mut().find(|e| e.index == index).ok_or(StoreError::UnknownIndex(index))?;
        entry.execution_count += 1;
        let count = entry.execution_count;
        write_csv(&self.dir.join(CSV_FILE), &entries)?;
        Ok(count)
    }
}

impl MrStore {
    /// Overwrites execution counts, e.g. to redo a batch from its start.
    pub fn restore_counts(&self, counts: &std::collections::BTreeMap<u32, u64>) -> Result<(), StoreError> {
        let mut entries = self.lock();
        for (&index, &count) in counts {
            entries.iter_mut().find(|e| e.index == index).ok_or(StoreError::UnknownIndex(index))?.execution_count = count;
        }
        write_csv(&self.dir.join(CSV_FILE), &entries)
    }
}

pub fn encode_sidecar(dim: usize, entries: &[StoredMr]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + entries.len() * dim * 4);
    out.extend_from_slice(SIDECAR_MAGIC);
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for e in entries {
        for x in &e.embedding {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_sidecar(bytes: &[u8]) -> Result<(usize, Vec<Vec<f32>>), String> {
    if bytes.len() < 16 || &bytes[..4] != SIDECAR_MAGIC {
        return Err("not an embedding sidecar".into());
    }
    let dim = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let rows = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if dim == 0 || body.len() != rows.saturating_mul(dim).saturating_mul(4) {
        return Err(format!("header says {rows}x{dim} but body has {} bytes", body.len()));
    }
    let values: Vec<f32> =
        body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    Ok((dim, values.chunks(dim).map(<[f32]>::to_vec).collect()))
}

fn read_sidecar(path: &Path) -> Result<(usize, Vec<Vec<f32>>), StoreError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode_sidecar(&bytes).map_err(|d| format_err(path, d))
}

/// Escapes newlines so the Gherkin text stays on one CSV line.
pub fn escape_newlines(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n")
}

pub fn unescape_newlines(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

fn write_csv(path: &Path, entries: &[StoredMr]) -> Result<(), StoreError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(|e| io_err(path, e))?;
    for e in entries {
        let gherkin = e.mr.render_gherkin().map_err(|err| StoreError::InvalidMr { index: e.index, detail: err.to_string() })?;
        w.write_record([
            e.index.to_string(),
            escape_newlines(&gherkin),
            e.mr.road_type.clone(),
            e.mr.manipulation.clone(),
            e.mr.expected_behavior.clone(),
            e.execution_count.to_string(),
            e.mr.region.clone(),
            e.mr.source_rule.clone(),
            e.mr.hallucination_score.to_string(),
        ])
        .map_err(|err| io_err(path, err))?;
    }
    let bytes = w.into_inner().map_err(|e| io_err(path, e))?;
    write_atomic(path, &bytes).map_err(|e| io_err(path, e))
}

fn read_csv(path: &Path) -> Result<Vec<(u32, MetamorphicRelation, u64)>, StoreError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let header = r.headers().map_err(|e| io_err(path, e))?.clone();
    if header.iter().take(8).ne(CSV_HEADER.iter().take(8).copied()) {
        return Err(format_err(path, format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let at = |i: usize| rec.get(i).unwrap_or("");
        let bad = |what: &str| format_err(path, format!("row {}: bad {what}", line + 1));
        let index: u32 = at(0).parse().map_err(|_| bad("Index"))?;
        let verb = verb_of(&unescape_newlines(at(1))).ok_or_else(|| bad("MR"))?;
        let count: u64 = at(5).parse().map_err(|_| bad("ExecutionCount"))?;
        let score: f64 = if at(8).is_empty() { 0.0 } else { at(8).parse().map_err(|_| bad("HallucinationScore"))? };
        let mr = MetamorphicRelation {
            road_type: at(2).to_string(),
            verb,
            manipulation: at(3).to_string(),
            expected_behavior: at(4).to_string(),
            source_rule: at(7).to_string(),
            region: at(6).to_string(),
            hallucination_score: score,
        };
        rows.push((index, mr, count));
    }
    Ok(rows)
}

/// The verb is the word after the system name on the When line.
fn verb_of(gherkin: &str) -> Option<Verb> {
    let when = gherkin.lines().find_map(|l| l.trim().strip_prefix("When "))?;
    Verb::parse(when.split_whitespace().nth(1)?)
}
