use serde::{Deserialize, Serialize};

use super::RagError;

/// A source of sentence embeddings.
///
/// Implementations return raw vectors; [`embed`] takes care of validating the
/// dimension and normalizing.
pub trait EmbeddingProvider: Send + Sync {
    fn provider_id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, RagError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub provider_id: String,
    pub dim: usize,
    pub normalized: bool,
}

impl EmbeddingVector {
    /// All-zero vectors carry no direction; similarity against them is 0.
    pub fn is_degenerate(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn from_raw(values: Vec<f64>, provider: &dyn EmbeddingProvider) -> Result<Self, RagError> {
        if values.len() != provider.dim() {
            return Err(RagError::Incompatible(format!(
                "provider `{}` returned {} values, expected {}",
                provider.provider_id(),
                values.len(),
                provider.dim()
            )));
        }
        let mut v = EmbeddingVector {
            values,
            provider_id: provider.provider_id().to_string(),
            dim: provider.dim(),
            normalized: false,
        };
        let norm = v.norm();
        if norm > 0.0 {
            v.values.iter_mut().for_each(|x| *x /= norm);
            v.normalized = true;
        }
        Ok(v)
    }
}

pub fn embed(text: &str, provider: &dyn EmbeddingProvider) -> Result<EmbeddingVector, RagError> {
    let mut out = embed_many(&[text], provider)?;
    Ok(out.pop().expect("one vector per text"))
}

pub fn embed_many(
    texts: &[&str],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<EmbeddingVector>, RagError> {
    let raw = provider.embed_batch(texts)?;
    if raw.len() != texts.len() {
        return Err(RagError::ProviderUnavailable(format!(
            "provider `{}` returned {} vectors for {} texts",
            provider.provider_id(),
            raw.len(),
            texts.len()
        )));
    }
    raw.into_iter()
        .map(|values| EmbeddingVector::from_raw(values, provider))
        .collect()
}

/// `dot(a, b) / (|a| |b|)`, or 0 when either side is all-zero.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, RagError> {
    if a.dim != b.dim || a.provider_id != b.provider_id || a.values.len() != b.values.len() {
        return Err(RagError::Incompatible(format!(
            "cannot compare {}[{}] with {}[{}]",
            a.provider_id, a.dim, b.provider_id, b.dim
        )));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub const DEFAULT_HASH_DIM: usize = 256;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Lowercase, turn punctuation (including `_`) into whitespace, split.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Deterministic bag-of-tokens embedder using the signed hashing trick.
///
/// Each token is hashed with 64-bit FNV-1a; the bucket is `hash mod dim` and the
/// sign comes from the hash's top bit. Word order does not matter.
#[derive(Debug, Clone)]
pub struct HashingProvider {
    dim: usize,
    id: String,
}

impl HashingProvider {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashingProvider {
            dim,
            id: format!("fnv-hash-{dim}"),
        }
    }

    pub fn raw_vector(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for token in tokenize(text) {
            let h = fnv1a64(token.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            v[bucket] += if h >> 63 == 1 { -1.0 } else { 1.0 };
        }
        v
    }
}

impl Default for HashingProvider {
    fn default() -> Self {
        Self::new(DEFAULT_HASH_DIM)
    }
}

impl EmbeddingProvider for HashingProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, RagError> {
        Ok(texts.iter().map(|t| self.raw_vector(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec2(x: f64, y: f64) -> EmbeddingVector {
        EmbeddingVector {
            values: vec![x, y],
            provider_id: "t".into(),
            dim: 2,
            normalized: false,
        }
    }

    #[test]
    fn fnv_known_values() {
        // Published FNV-1a 64-bit test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn tokenize_splits_identifiers() {
        assert_eq!(tokenize("move_to_shelf(1)."), vec!["move", "to", "shelf", "1"]);
        assert_eq!(tokenize("  The Device's ABC!"), vec!["the", "device", "s", "abc"]);
    }

    #[test]
    fn embedding_is_deterministic_and_normalized() {
        let p = HashingProvider::default();
        let a = embed("Move to shelf one", &p).unwrap();
        let b = embed("Move to shelf one", &p).unwrap();
        assert_eq!(a, b);
        assert!(a.normalized);
        assert!((a.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_text_is_degenerate() {
        let p = HashingProvider::default();
        let v = embed("", &p).unwrap();
        assert!(v.is_degenerate());
        assert!(!v.normalized);
        assert_eq!(v.values.len(), 256);
        let other = embed("anything", &p).unwrap();
        assert_eq!(cosine_similarity(&v, &other).unwrap(), 0.0);
    }

    #[test]
    fn word_order_does_not_matter() {
        let p = HashingProvider::default();
        // Direct computation: both sentences have the token multiset {move, to, shelf}.
        let a = p.raw_vector("move to shelf");
        let b = p.raw_vector("shelf move to");
        assert_eq!(a, b);
        assert_eq!(embed("move to shelf", &p).unwrap(), embed("shelf move to", &p).unwrap());
    }

    #[test]
    fn cosine_cases() {
        let v = vec2(0.3, -2.0);
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(cosine_similarity(&vec2(1.0, 0.0), &vec2(0.0, 1.0)).unwrap(), 0.0);
        let s = 0.5f64.sqrt();
        let c = cosine_similarity(&vec2(1.0, 0.0), &vec2(s, s)).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn cosine_rejects_mismatch() {
        let mut other = vec2(1.0, 0.0);
        other.provider_id = "u".into();
        assert!(matches!(
            cosine_similarity(&vec2(1.0, 0.0), &other),
            Err(RagError::Incompatible(_))
        ));
        let three = EmbeddingVector {
            values: vec![1.0, 0.0, 0.0],
            provider_id: "t".into(),
            dim: 3,
            normalized: true,
        };
        assert!(cosine_similarity(&vec2(1.0, 0.0), &three).is_err());
    }
}
