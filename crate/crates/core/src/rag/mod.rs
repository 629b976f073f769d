//! Retrieval of the best-matching API function for a subtask sentence.
//!
//! Every chunk of a device profile is embedded once into an [`ApiIndex`]. A
//! subtask is embedded with the same provider and scored against every entry by
//! cosine similarity; the ranking is sorted by score, ties by function name.

mod embedding;

use std::cmp::Ordering;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{ApiChunk, ApiFunction};

pub use embedding::{
    cosine_similarity, embed, embed_many, fnv1a64, tokenize, EmbeddingProvider, EmbeddingVector,
    HashingProvider, DEFAULT_HASH_DIM,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RagError {
    #[error("incompatible embeddings: {0}")]
    Incompatible(String),
    #[error("index has no candidates")]
    NoCandidates,
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("best score {score:.4} for `{function}` is below threshold {threshold:.4}")]
    BelowThreshold {
        function: String,
        score: f64,
        threshold: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub chunk: ApiChunk,
    pub vector: EmbeddingVector,
}

/// Embedded chunks of one device's profile.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiIndex {
    entries: Vec<IndexEntry>,
    provider_id: String,
    dim: usize,
}

impl ApiIndex {
    /// Assemble an index from pre-embedded entries. All vectors must come
    /// from one provider and all chunks from one device.
    pub fn from_entries(
        entries: Vec<IndexEntry>,
        provider_id: &str,
        dim: usize,
    ) -> Result<Self, RagError> {
        for e in &entries {
            if e.vector.provider_id != provider_id || e.vector.dim != dim {
                return Err(RagError::Incompatible(format!(
                    "entry `{}` embedded by {}[{}], index uses {}[{}]",
                    e.chunk.function.name, e.vector.provider_id, e.vector.dim, provider_id, dim
                )));
            }
        }
        if let Some(first) = entries.first() {
            if let Some(other) = entries
                .iter()
                .find(|e| e.chunk.source_device != first.chunk.source_device)
            {
                return Err(RagError::Incompatible(format!(
                    "chunks from `{}` and `{}` mixed in one index",
                    first.chunk.source_device, other.chunk.source_device
                )));
            }
        }
        Ok(ApiIndex {
            entries,
            provider_id: provider_id.to_string(),
            dim,
        })
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn build_index(chunks: &[ApiChunk], provider: &dyn EmbeddingProvider) -> Result<ApiIndex, RagError> {
    let texts: Vec<&str> = chunks.iter().map(|c| c.chunk_text.as_str()).collect();
    let vectors = if texts.is_empty() {
        Vec::new()
    } else {
        embed_many(&texts, provider)?
    };
    let entries = chunks
        .iter()
        .cloned()
        .zip(vectors)
        .map(|(chunk, vector)| IndexEntry { chunk, vector })
        .collect();
    ApiIndex::from_entries(entries, provider.provider_id(), provider.dim())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedFunction {
    pub function: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub best: ApiFunction,
    pub score: f64,
    pub ranking: Vec<RankedFunction>,
}

impl MatchResult {
    /// Ranking as a JSON array of `[function, score]` pairs, scores rounded to
    /// six decimals. Stable byte-for-byte for a given corpus and subtask.
    pub fn golden_json(&self) -> String {
        let rows: Vec<(String, f64)> = self
            .ranking
            .iter()
            .map(|r| (r.function.clone(), round6(r.score)))
            .collect();
        serde_json::to_string_pretty(&rows).expect("ranking serializes")
    }
}

pub fn round6(x: f64) -> f64 {
    let r = (x * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Descending score, then ascending function name.
pub fn ranking_order(a: &RankedFunction, b: &RankedFunction) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.function.cmp(&b.function))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MatchOptions {
    /// Reject matches whose best score falls below this value.
    pub min_score: Option<f64>,
}

pub fn match_subtask(
    subtask_text: &str,
    index: &ApiIndex,
    provider: &dyn EmbeddingProvider,
) -> Result<MatchResult, RagError> {
    match_subtask_with(subtask_text, index, provider, MatchOptions::default())
}

pub fn match_subtask_with(
    subtask_text: &str,
    index: &ApiIndex,
    provider: &dyn EmbeddingProvider,
    options: MatchOptions,
) -> Result<MatchResult, RagError> {
    if provider.provider_id() != index.provider_id || provider.dim() != index.dim {
        return Err(RagError::Incompatible(format!(
            "index built with {}[{}], query provider is {}[{}]",
            index.provider_id,
            index.dim,
            provider.provider_id(),
            provider.dim()
        )));
    }
    if index.is_empty() {
        return Err(RagError::NoCandidates);
    }
    let query = embed(subtask_text, provider)?;
    let mut scored = index
        .entries
        .iter()
        .map(|e| {
            Ok((
                RankedFunction {
                    function: e.chunk.function.name.clone(),
                    score: cosine_similarity(&query, &e.vector)?,
                },
                &e.chunk.function,
            ))
        })
        .collect::<Result<Vec<_>, RagError>>()?;
    scored.sort_by(|a, b| ranking_order(&a.0, &b.0));
    let best = scored[0].1.clone();
    let score = scored[0].0.score;
    if let Some(threshold) = options.min_score {
        if score < threshold {
            return Err(RagError::BelowThreshold {
                function: best.name,
                score,
                threshold,
            });
        }
    }
    Ok(MatchResult {
        best,
        score,
        ranking: scored.into_iter().map(|(r, _)| r).collect(),
    })
}
