use serde::{Deserialize, Serialize};

use super::RagError;

pub const DEFAULT_DIMENSION: usize = 64;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Lowercase, then split on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl Embedding {
    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Wrap a raw vector, L2-normalizing it. A zero vector stays zero and is
    /// flagged as not normalized.
    pub fn normalized_from(values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Self {
                values,
                normalized: false,
            };
        }
        Self {
            values: values.into_iter().map(|v| v / norm).collect(),
            normalized: true,
        }
    }
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Embedding, RagError>;
}

/// Deterministic signed feature-hashing embedder.
///
/// Each token's FNV-1a hash `h` adds `+1` (bit 6 of `h` clear) or `-1`
/// (bit 6 set) to component `h mod D`; the sum is L2-normalized.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION)
    }
}

impl Embedder for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Embedding, RagError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(RagError::EmptyText);
        }
        let mut acc = vec![0.0f64; self.dimension];
        for token in &tokens {
            let h = fnv1a64(token.as_bytes());
            let slot = (h % self.dimension as u64) as usize;
            acc[slot] += if (h >> 6) & 1 == 0 { 1.0 } else { -1.0 };
        }
        Ok(Embedding::normalized_from(acc))
    }
}

/// Cosine similarity clamped to `[-1, 1]`; zero when either side is the
/// zero vector.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, RagError> {
    if a.dimension() != b.dimension() {
        return Err(RagError::DimensionMismatch {
            left: a.dimension(),
            right: b.dimension(),
        });
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    let score = if a.normalized && b.normalized {
        dot
    } else {
        let denom = a.norm() * b.norm();
        if denom == 0.0 {
            0.0
        } else {
            dot / denom
        }
    };
    Ok(score.clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(tokenize("Close-view, HERO_2!"), vec!["close", "view", "hero", "2"]);
        assert!(tokenize(" -- !! ").is_empty());
    }

    #[test]
    fn deterministic_and_normalized() {
        let e = HashEmbedder::default();
        let a = e.embed("Close view").unwrap();
        let b = e.embed("Close view").unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-9);
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        assert!(matches!(e.embed("..."), Err(RagError::EmptyText)));
    }

    #[test]
    fn antipodal_and_mismatch() {
        let e = HashEmbedder::default();
        let v = e.embed("dragon castle").unwrap();
        let neg = Embedding {
            values: v.values.iter().map(|x| -x).collect(),
            normalized: true,
        };
        assert!((cosine(&v, &neg).unwrap() + 1.0).abs() < 1e-12);
        let short = HashEmbedder::new(8).embed("dragon").unwrap();
        assert!(matches!(cosine(&v, &short), Err(RagError::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_vector_scores_zero() {
        let z = Embedding::normalized_from(vec![0.0; 4]);
        assert!(!z.normalized);
        let one = Embedding::normalized_from(vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(cosine(&z, &one).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn cosine_matches_naive_loop(a in proptest::collection::vec(-1.0f64..1.0, 64), b in proptest::collection::vec(-1.0f64..1.0, 64)) {
            let ea = Embedding { values: a.clone(), normalized: false };
            let eb = Embedding { values: b.clone(), normalized: false };
            let mut dot = 0.0;
            let mut na = 0.0;
            let mut nb = 0.0;
            for i in 0..64 {
                dot += a[i] * b[i];
                na += a[i] * a[i];
                nb += b[i] * b[i];
            }
            prop_assume!(na > 0.0 && nb > 0.0);
            let expected = (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0);
            prop_assert!((cosine(&ea, &eb).unwrap() - expected).abs() <= 1e-12);
        }
    }
}
