//! Documents, queries and relevance judgments, plus BM25 candidate generation.
//!
//! Everything downstream (rankers, distillation, evaluation) consumes the
//! [`CandidateSet`] produced here, so the ordering rules are strict: scores
//! are non-increasing and ties are broken by ascending `doc_id`.

mod bm25;
mod trec;

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bm25::{Bm25Params, PostingsIndex};
pub use trec::{
    load_corpus, load_qrels, load_queries, load_run, parse_corpus, parse_qrels, parse_queries, read_run, write_run,
    Qrels, RunLine,
};

const DEFAULT_STOPWORDS: &str = include_str!("../../assets/stopwords_en.txt");

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("duplicate {kind} id `{id}`")]
    Duplicate { kind: &'static str, id: String },
    #[error("invalid candidate set: {0}")]
    InvalidCandidates(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default)]
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            doc_id: doc_id.into(),
            title: None,
            text: text.into(),
        }
    }

    pub fn with_title(mut self, title: impl Into<String>) -> Self {
        self.title = Some(title.into());
        self
    }

    /// Title and body joined by a single space; this is what gets indexed
    /// and what is shown to a model inside a prompt.
    pub fn content(&self) -> String {
        match self.title.as_deref().filter(|t| !t.is_empty()) {
            Some(title) if self.text.is_empty() => title.to_string(),
            Some(title) => format!("{title} {}", self.text),
            None => self.text.clone(),
        }
    }

    fn validate(&self) -> Result<(), CorpusError> {
        if self.doc_id.is_empty() {
            return Err(CorpusError::Config("document with empty doc_id".into()));
        }
        let has_title = self.title.as_deref().is_some_and(|t| !t.is_empty());
        if self.text.is_empty() && !has_title {
            return Err(CorpusError::Config(format!(
                "document `{}` has neither text nor title",
                self.doc_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub text: String,
}

impl Query {
    pub fn new(query_id: impl Into<String>, text: impl Into<String>) -> Self {
        Query {
            query_id: query_id.into(),
            text: text.into(),
        }
    }
}

/// Checks that query ids are non-empty and unique.
pub fn validate_queries(queries: &[Query]) -> Result<(), CorpusError> {
    let mut seen = HashSet::new();
    for q in queries {
        if q.query_id.is_empty() {
            return Err(CorpusError::Config("query with empty query_id".into()));
        }
        if !seen.insert(q.query_id.as_str()) {
            return Err(CorpusError::Duplicate {
                kind: "query",
                id: q.query_id.clone(),
            });
        }
    }
    Ok(())
}

/// Lowercase stopword set used by the tokenizer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stopwords(BTreeSet<String>);

impl Stopwords {
    pub fn none() -> Self {
        Stopwords(BTreeSet::new())
    }

    /// The bundled English list.
    pub fn english() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }

    /// One word per line; blank lines and `#` comments are ignored.
    pub fn parse(list: &str) -> Self {
        Stopwords(
            list.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let raw = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        Ok(Self::parse(&raw))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for Stopwords {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Stopwords(iter.into_iter().map(|s| s.into().to_lowercase()).collect())
    }
}

/// Lowercases, splits on runs of non-alphanumeric characters and drops stopwords.
pub fn tokenize(text: &str, stopwords: &Stopwords) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !stopwords.contains(t))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Corpus {
    documents: Vec<Document>,
    stopwords: Stopwords,
}

impl Corpus {
    pub fn new(documents: Vec<Document>, stopwords: Stopwords) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(documents.len());
        for doc in &documents {
            doc.validate()?;
            if !seen.insert(doc.doc_id.as_str()) {
                return Err(CorpusError::Duplicate {
                    kind: "document",
                    id: doc.doc_id.clone(),
                });
            }
        }
        Ok(Corpus { documents, stopwords })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn stopwords(&self) -> &Stopwords {
        &self.stopwords
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Document> {
        self.documents.get(index)
    }

    pub fn find(&self, doc_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }
}

/// The `n` retrieved candidates for one query, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    query: Query,
    docs: Vec<Document>,
    retrieval_scores: Vec<f64>,
}

impl CandidateSet {
    pub fn new(query: Query, docs: Vec<Document>, retrieval_scores: Vec<f64>) -> Result<Self, CorpusError> {
        if docs.is_empty() {
            return Err(CorpusError::InvalidCandidates("no candidates".into()));
        }
        if docs.len() != retrieval_scores.len() {
            return Err(CorpusError::InvalidCandidates(format!(
                "{} documents but {} scores",
                docs.len(),
                retrieval_scores.len()
            )));
        }
        let mut seen = HashSet::new();
        for d in &docs {
            if !seen.insert(d.doc_id.as_str()) {
                return Err(CorpusError::InvalidCandidates(format!(
                    "duplicate doc_id `{}`",
                    d.doc_id
                )));
            }
        }
        if retrieval_scores.windows(2).any(|w| w[0] < w[1]) {
            return Err(CorpusError::InvalidCandidates(
                "retrieval scores must be non-increasing".into(),
            ));
        }
        Ok(CandidateSet {
            query,
            docs,
            retrieval_scores,
        })
    }

    /// Candidates in a given order without retrieval scores (all zero).
    pub fn unscored(query: Query, docs: Vec<Document>) -> Result<Self, CorpusError> {
        let scores = vec![0.0; docs.len()];
        Self::new(query, docs, scores)
    }

    pub fn query(&self) -> &Query {
        &self.query
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn retrieval_scores(&self) -> &[f64] {
        &self.retrieval_scores
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc_ids(&self) -> Vec<String> {
        self.docs.iter().map(|d| d.doc_id.clone()).collect()
    }
}
