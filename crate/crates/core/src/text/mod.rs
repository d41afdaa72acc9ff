//! Pairwise text similarity and the generality estimator built on it.

mod embedding;
mod generality;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embedding::{EmbeddingProvider, EmbeddingVector, LocalHashEmbedding, RemoteEmbedding, LOCAL_EMBEDDING_DIM};
pub use generality::{generality, generality_from, GeneralityInputs};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("embedding provider error: {0}")]
    Provider(String),
    #[error("stopword list {path}: {source}")]
    Stopwords {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMetricId {
    Bleu,
    Cosine,
    Jaccard,
}

impl fmt::Display for SimilarityMetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimilarityMetricId::Bleu => "bleu",
            SimilarityMetricId::Cosine => "cosine",
            SimilarityMetricId::Jaccard => "jaccard",
        })
    }
}

/// Lowercased whitespace tokens with surrounding non-alphanumerics removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn tokenize(text: &str) -> TokenSequence {
    TokenSequence(
        text.split_whitespace()
            .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
            .filter(|t| !t.is_empty())
            .collect(),
    )
}

const BUNDLED_STOPWORDS: &str = include_str!("../../data/stopwords_en.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    /// One word per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Self {
        Stopwords(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self, MetricError> {
        std::fs::read_to_string(path)
            .map(|s| Self::parse(&s))
            .map_err(|source| MetricError::Stopwords {
                path: path.display().to_string(),
                source,
            })
    }

    pub fn empty() -> Self {
        Stopwords(HashSet::new())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for Stopwords {
    fn default() -> Self {
        Self::parse(BUNDLED_STOPWORDS)
    }
}

/// Stopword-filtered set of tokens.
pub type TokenBag = BTreeSet<String>;

pub fn bag_of_words(text: &str, stopwords: &Stopwords) -> TokenBag {
    tokenize(text)
        .0
        .into_iter()
        .filter(|t| !stopwords.contains(t))
        .collect()
}

/// Jaccard similarity of the two texts' bags of words. Two empty bags are
/// treated as identical.
pub fn jaccard(a: &str, b: &str, stopwords: &Stopwords) -> f64 {
    let a = bag_of_words(a, stopwords);
    let b = bag_of_words(b, stopwords);
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Replaces zero clipped counts in BLEU precisions.
pub const BLEU_EPSILON: f64 = 1e-9;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Sentence-level BLEU of `hyp` against a single reference.
///
/// The n-gram order is capped at the shorter sentence length so short
/// questions are not zeroed out by missing 4-grams.
pub fn bleu(hyp: &str, reference: &str, max_order: usize) -> f64 {
    assert!(max_order >= 1, "max_order must be at least 1");
    let hyp = tokenize(hyp);
    let reference = tokenize(reference);
    match (hyp.is_empty(), reference.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let order = max_order.min(hyp.len()).min(reference.len());
    let mut product = 1.0;
    for n in 1..=order {
        let hyp_counts = ngram_counts(hyp.tokens(), n);
        let ref_counts = ngram_counts(reference.tokens(), n);
        let clipped: usize = hyp_counts
            .iter()
            .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        let total = hyp.len() + 1 - n;
        let matches = if clipped == 0 { BLEU_EPSILON } else { clipped as f64 };
        product *= matches / total as f64;
    }
    let geo_mean = product.powf(1.0 / order as f64);
    let brevity = (1.0 - reference.len() as f64 / hyp.len() as f64).exp().min(1.0);
    geo_mean * brevity
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, MetricError> {
    if a.dim() != b.dim() {
        return Err(MetricError::DimensionMismatch(a.dim(), b.dim()));
    }
    let norm_a = a.norm();
    let norm_b = b.norm();
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(MetricError::ZeroVector);
    }
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    Ok(dot / (norm_a * norm_b))
}
