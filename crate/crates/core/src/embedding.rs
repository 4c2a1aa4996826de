use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Word-embedding table with uniform dimension.
///
/// Lookups resolve a phrase in three steps: the phrase itself, then the mean
/// of its whitespace-separated words, then (when enabled) a deterministic
/// hash-seeded unit vector for words that are still missing.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, Vec<f32>>,
    oov_fallback: bool,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding dimension must be positive".into(),
            ));
        }
        Ok(EmbeddingTable {
            dim,
            entries: BTreeMap::new(),
            oov_fallback: true,
        })
    }

    pub fn with_oov_fallback(mut self, enabled: bool) -> Self {
        self.oov_fallback = enabled;
        self
    }

    pub fn oov_fallback(&self) -> bool {
        self.oov_fallback
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        let token = token.into();
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::MalformedInput(format!(
                "embedding for {token:?} has a non-finite entry"
            )));
        }
        if vector.iter().all(|v| *v == 0.0) {
            return Err(Error::MalformedInput(format!(
                "embedding for {token:?} has zero norm"
            )));
        }
        self.entries.insert(token, vector);
        Ok(())
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

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.entries.get(token).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Resolve a phrase to a vector (f64 accumulation).
    pub fn lookup(&self, phrase: &str) -> Result<Vec<f64>> {
        if let Some(v) = self.entries.get(phrase) {
            return Ok(v.iter().map(|x| f64::from(*x)).collect());
        }
        let words: Vec<&str> = phrase.split_whitespace().collect();
        if words.is_empty() {
            return Err(Error::UnknownLabel(phrase.to_string()));
        }
        let mut acc = vec![0.0f64; self.dim];
        for word in &words {
            let vec = match self.entries.get(*word) {
                Some(v) => v.iter().map(|x| f64::from(*x)).collect(),
                None if self.oov_fallback => self.fallback_vector(word),
                None => return Err(Error::UnknownLabel(phrase.to_string())),
            };
            acc.iter_mut().zip(&vec).for_each(|(a, v)| *a += v);
        }
        acc.iter_mut().for_each(|a| *a /= words.len() as f64);
        Ok(acc)
    }

    fn fallback_vector(&self, word: &str) -> Vec<f64> {
        let mut rng = rng_for(&["oov".into(), word.into()]);
        let mut v: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        } else {
            v[0] = 1.0;
        }
        v
    }

    pub fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        Ok(cosine(&self.lookup(a)?, &self.lookup(b)?))
    }
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}
