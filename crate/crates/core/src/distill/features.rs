use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, PostingsIndex, Query};

pub const FEATURE_NAMES: [&str; 6] = ["bm25", "overlap", "idf_overlap", "coverage", "length_ratio", "bias"];

/// Describes how feature vectors are built; stored with checkpoints so a
/// scorer is never applied to features it was not trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub names: Vec<String>,
    /// Documents are cut to this many tokens before extraction.
    pub max_input_tokens: usize,
}

impl FeatureSpec {
    pub fn new(max_input_tokens: usize) -> Self {
        FeatureSpec {
            names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            max_input_tokens,
        }
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }
}

/// Lexical features of a (query, document) pair, computed against a BM25
/// index for term statistics.
pub struct FeatureExtractor<'a> {
    index: &'a PostingsIndex,
    spec: FeatureSpec,
}

impl<'a> FeatureExtractor<'a> {
    pub fn new(index: &'a PostingsIndex, spec: FeatureSpec) -> Self {
        FeatureExtractor { index, spec }
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn extract(&self, query: &Query, doc: &Document) -> Vec<f64> {
        let q_tokens = self.index.tokenize(&query.text);
        let mut d_tokens = self.index.tokenize(&doc.content());
        d_tokens.truncate(self.spec.max_input_tokens);

        let q_terms: BTreeSet<&str> = q_tokens.iter().map(String::as_str).collect();
        let d_terms: BTreeSet<&str> = d_tokens.iter().map(String::as_str).collect();
        let matched: Vec<&str> = q_terms.intersection(&d_terms).copied().collect();

        let bm25 = self.index.score_tokens(&q_tokens, &d_tokens);
        let overlap = matched.len() as f64;
        let idf_overlap: f64 = matched.iter().map(|t| self.index.idf(t)).sum();
        let coverage = if q_terms.is_empty() {
            0.0
        } else {
            overlap / q_terms.len() as f64
        };
        let avgdl = self.index.avg_doc_length();
        let length_ratio = if avgdl > 0.0 {
            d_tokens.len() as f64 / avgdl
        } else {
            0.0
        };
        vec![bm25, overlap, idf_overlap, coverage, length_ratio, 1.0]
    }

    pub fn extract_all(&self, query: &Query, docs: &[Document]) -> Vec<Vec<f64>> {
        docs.iter().map(|d| self.extract(query, d)).collect()
    }
}
