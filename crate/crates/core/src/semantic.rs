//! Semantic fidelity: cosine similarity between embeddings of the physician
//! reference and each candidate answer.
//!
//! Embeddings come from an [`EmbeddingProvider`]. [`FileVectorStore`] reads a
//! precomputed JSONL store keyed by [`content_hash`]; the HTTP provider lives
//! in [`crate::remote`].

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, SystemId};
use crate::hashing::content_hash;

/// Texts per provider call.
pub const DEFAULT_BATCH: usize = 64;

/// Vector length above which dot products use compensated summation.
const COMPENSATED_DIM: usize = 4096;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("no store entry for content hash {0}")]
    MissingEntry(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("cannot read store {path}: {message}")]
    Store { path: String, message: String },
}

#[derive(Debug, Error)]
pub enum SemanticError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("embedding must be non-empty with finite entries")]
    InvalidVector,
    #[error("system {0} is not pair-complete")]
    NotPairComplete(String),
    #[error("provider failed on batch {batch} ({} texts, first hash {}): {source}", .hashes.len(), .hashes.first().map(String::as_str).unwrap_or("-"))]
    Provider {
        batch: usize,
        hashes: Vec<String>,
        #[source]
        source: ProviderError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, SemanticError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(SemanticError::InvalidVector);
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Neumaier-compensated sum.
fn compensated_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for t in terms {
        let s = sum + t;
        if sum.abs() >= t.abs() {
            comp += (sum - s) + t;
        } else {
            comp += (t - s) + sum;
        }
        sum = s;
    }
    sum + comp
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    let terms = u.iter().zip(v).map(|(a, b)| a * b);
    if u.len() > COMPENSATED_DIM {
        compensated_sum(terms)
    } else {
        terms.sum()
    }
}

/// `⟨u,v⟩ / (‖u‖·‖v‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, SemanticError> {
    if u.dim() != v.dim() {
        return Err(SemanticError::DimensionMismatch(u.dim(), v.dim()));
    }
    let nu = dot(&u.values, &u.values).sqrt();
    let nv = dot(&v.values, &v.values).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(SemanticError::ZeroVector);
    }
    if u.values == v.values {
        return Ok(1.0);
    }
    Ok((dot(&u.values, &v.values) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Source of sentence embeddings. Implementations must return one vector per
/// input text, in input order, and the same vector for the same text.
pub trait EmbeddingProvider: Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError>;
}

#[derive(Deserialize)]
struct VectorEntry {
    sha256: String,
    dim: usize,
    vector: Vec<f64>,
}

/// Precomputed embeddings keyed by content hash.
#[derive(Debug, Clone)]
pub struct FileVectorStore {
    name: String,
    dim: usize,
    vectors: HashMap<String, EmbeddingVector>,
}

impl FileVectorStore {
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let store_err = |message: String| ProviderError::Store {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| store_err(e.to_string()))?;
        let mut vectors = HashMap::new();
        let mut dim = None;
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: VectorEntry = serde_json::from_str(line)
                .map_err(|e| store_err(format!("line {}: {e}", idx + 1)))?;
            if entry.vector.len() != entry.dim {
                return Err(store_err(format!(
                    "line {}: dim {} but vector has {} values",
                    idx + 1,
                    entry.dim,
                    entry.vector.len()
                )));
            }
            if *dim.get_or_insert(entry.dim) != entry.dim {
                return Err(store_err(format!("line {}: inconsistent dim", idx + 1)));
            }
            let v = EmbeddingVector::new(entry.vector)
                .map_err(|e| store_err(format!("line {}: {e}", idx + 1)))?;
            vectors.insert(entry.sha256.to_ascii_lowercase(), v);
        }
        Ok(FileVectorStore {
            name: format!("file:{}", path.display()),
            dim: dim.unwrap_or(0),
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl EmbeddingProvider for FileVectorStore {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        texts
            .iter()
            .map(|t| {
                let h = content_hash(t);
                self.vectors
                    .get(&h)
                    .cloned()
                    .ok_or(ProviderError::MissingEntry(h))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidelityScore {
    pub record_id: String,
    pub system_id: SystemId,
    pub score: f64,
}

/// Embeds `texts` in provider batches, checking count and dimension.
pub(crate) fn embed_batched(
    provider: &dyn EmbeddingProvider,
    texts: &[&str],
    batch_size: usize,
) -> Result<Vec<EmbeddingVector>, SemanticError> {
    let mut out = Vec::with_capacity(texts.len());
    for (batch, chunk) in texts.chunks(batch_size.max(1)).enumerate() {
        let fail = |source| SemanticError::Provider {
            batch,
            hashes: chunk.iter().map(|t| content_hash(t)).collect(),
            source,
        };
        let vectors = provider.embed(chunk).map_err(fail)?;
        if vectors.len() != chunk.len() {
            return Err(fail(ProviderError::Protocol(format!(
                "expected {} vectors, got {}",
                chunk.len(),
                vectors.len()
            ))));
        }
        if let Some(v) = vectors.iter().find(|v| v.dim() != provider.dim()) {
            return Err(fail(ProviderError::Protocol(format!(
                "vector of dim {} from provider of dim {}",
                v.dim(),
                provider.dim()
            ))));
        }
        out.extend(vectors);
    }
    Ok(out)
}

/// One fidelity score per (record, system), sorted by record id then system.
/// Each reference answer is embedded once.
pub fn semantic_fidelity_scores(
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider,
    systems: &[SystemId],
    allow_partial: bool,
) -> Result<Vec<FidelityScore>, SemanticError> {
    let alignment = corpus.validate_alignment();
    if !allow_partial {
        if let Some(s) = systems.iter().find(|s| !alignment.is_pair_complete(s)) {
            return Err(SemanticError::NotPairComplete(s.to_string()));
        }
    }
    let mut records: Vec<&crate::corpus::QARecord> = corpus.records.iter().collect();
    records.sort_by(|a, b| a.id.cmp(&b.id));
    let mut systems = systems.to_vec();
    systems.sort();

    let mut texts: Vec<&str> = records.iter().map(|r| r.reference_answer.as_str()).collect();
    let lookups: Vec<_> = systems.iter().map(|s| corpus.responses_of(s)).collect();
    let mut pairs = Vec::new();
    for (ri, r) in records.iter().enumerate() {
        for (s, lookup) in systems.iter().zip(&lookups) {
            if let Some(&t) = lookup.get(r.id.as_str()) {
                pairs.push((ri, s, texts.len()));
                texts.push(t);
            }
        }
    }
    let vectors = embed_batched(provider, &texts, DEFAULT_BATCH)?;
    pairs
        .into_iter()
        .map(|(ri, s, ti)| {
            Ok(FidelityScore {
                record_id: records[ri].id.clone(),
                system_id: s.clone(),
                score: cosine_similarity(&vectors[ri], &vectors[ti])?,
            })
        })
        .collect()
}
