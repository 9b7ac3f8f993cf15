use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CanonicalizerError;
use crate::corpus::fnv1a_64;

/// A unit-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Scales `values` to unit L2 norm. A zero vector has no direction and
    /// yields `None`.
    pub fn normalized(mut values: Vec<f64>) -> Option<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return None;
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Some(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// Unit-renormalized mean of several embeddings.
    pub fn centroid<'a>(items: impl IntoIterator<Item = &'a Embedding>) -> Option<Embedding> {
        let mut sum: Vec<f64> = Vec::new();
        for e in items {
            if sum.is_empty() {
                sum = vec![0.0; e.dim()];
            }
            sum.iter_mut().zip(&e.0).for_each(|(s, v)| *s += v);
        }
        Self::normalized(sum)
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, key: &str) -> Result<Embedding, CanonicalizerError>;
}

/// Character bigrams with `^`/`$` boundary sentinels, hashed into a fixed
/// number of buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BigramEmbedder {
    buckets: usize,
}

impl Default for BigramEmbedder {
    fn default() -> Self {
        Self { buckets: 256 }
    }
}

impl BigramEmbedder {
    pub fn new(buckets: usize) -> Self {
        Self { buckets: buckets.max(1) }
    }

    pub fn bigrams(key: &str) -> Vec<String> {
        let chars: Vec<char> = std::iter::once('^').chain(key.chars()).chain(std::iter::once('$')).collect();
        chars.windows(2).map(|w| w.iter().collect()).collect()
    }

    pub fn bucket(&self, bigram: &str) -> usize {
        (fnv1a_64(bigram.as_bytes()) % self.buckets as u64) as usize
    }
}

impl EmbeddingProvider for BigramEmbedder {
    fn dim(&self) -> usize {
        self.buckets
    }

    fn embed(&self, key: &str) -> Result<Embedding, CanonicalizerError> {
        let mut counts = vec![0.0; self.buckets];
        for g in Self::bigrams(key) {
            counts[self.bucket(&g)] += 1.0;
        }
        Ok(Embedding::normalized(counts).expect("at least one bigram"))
    }
}

#[derive(Deserialize)]
struct VectorRecord {
    key: String,
    vector: Vec<f64>,
}

/// Precomputed vectors read from a JSON Lines file of
/// `{"key":…,"vector":[…]}` records.
#[derive(Debug, Clone, Default)]
pub struct ExternalEmbeddings {
    dim: usize,
    vectors: HashMap<String, Embedding>,
}

impl ExternalEmbeddings {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CanonicalizerError> {
        Self::read(BufReader::new(std::fs::File::open(path)?))
    }

    pub fn read(reader: impl BufRead) -> Result<Self, CanonicalizerError> {
        let mut out = Self::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: VectorRecord =
                serde_json::from_str(&line).map_err(|source| CanonicalizerError::Parse { line: i + 1, source })?;
            if out.vectors.is_empty() {
                out.dim = rec.vector.len();
            } else if rec.vector.len() != out.dim {
                return Err(CanonicalizerError::Embedding(format!(
                    "line {}: vector for {:?} has dimension {}, expected {}",
                    i + 1,
                    rec.key,
                    rec.vector.len(),
                    out.dim
                )));
            }
            let e = Embedding::normalized(rec.vector).ok_or_else(|| {
                CanonicalizerError::Embedding(format!("line {}: vector for {:?} is zero or not finite", i + 1, rec.key))
            })?;
            out.vectors.insert(rec.key, e);
        }
        Ok(out)
    }
}

impl EmbeddingProvider for ExternalEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, key: &str) -> Result<Embedding, CanonicalizerError> {
        self.vectors
            .get(key)
            .cloned()
            .ok_or_else(|| CanonicalizerError::MissingEmbedding(key.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bigram_cosine(a: &str, b: &str) -> f64 {
        // Oracle on raw bigram multisets, no hashing.
        let count = |s: &str| {
            let mut m: HashMap<String, f64> = HashMap::new();
            for g in BigramEmbedder::bigrams(s) {
                *m.entry(g).or_default() += 1.0;
            }
            m
        };
        let (ma, mb) = (count(a), count(b));
        let dot: f64 = ma.iter().map(|(g, x)| x * mb.get(g).unwrap_or(&0.0)).sum();
        let na = ma.values().map(|x| x * x).sum::<f64>().sqrt();
        let nb = mb.values().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn ab_has_exactly_three_buckets() {
        let p = BigramEmbedder::default();
        let e = p.embed("ab").unwrap();
        let expected: std::collections::BTreeSet<usize> = ["^a", "ab", "b$"].iter().map(|g| p.bucket(g)).collect();
        assert_eq!(expected.len(), 3, "fixture assumes no collision");
        let nonzero: std::collections::BTreeSet<usize> =
            e.values().iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect();
        assert_eq!(nonzero, expected);
        assert!((e.cosine(&e) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic() {
        let p = BigramEmbedder::default();
        assert_eq!(p.embed("既往史").unwrap(), p.embed("既往史").unwrap());
    }

    #[test]
    fn shared_bigrams_rank_closer() {
        let p = BigramEmbedder::default();
        let (a, b, c) = (p.embed("既往史").unwrap(), p.embed("既往病史").unwrap(), p.embed("手术记录").unwrap());
        assert!(a.cosine(&b) > a.cosine(&c));
        assert!(bigram_cosine("既往史", "既往病史") > bigram_cosine("既往史", "手术记录"));
        assert!((a.cosine(&b) - bigram_cosine("既往史", "既往病史")).abs() < 1e-12);
    }

    #[test]
    fn external_provider_names_missing_key() {
        let src = "{\"key\":\"a\",\"vector\":[3,4]}\n{\"key\":\"b\",\"vector\":[1,0]}\n";
        let p = ExternalEmbeddings::read(src.as_bytes()).unwrap();
        assert_eq!(p.dim(), 2);
        assert_eq!(p.embed("a").unwrap().values(), &[0.6, 0.8]);
        let err = p.embed("zzz").unwrap_err();
        assert!(err.to_string().contains("zzz"));
    }

    #[test]
    fn external_provider_rejects_ragged_and_zero() {
        assert!(ExternalEmbeddings::read("{\"key\":\"a\",\"vector\":[1]}\n{\"key\":\"b\",\"vector\":[1,2]}".as_bytes()).is_err());
        assert!(ExternalEmbeddings::read("{\"key\":\"a\",\"vector\":[0,0]}".as_bytes()).is_err());
    }
}
