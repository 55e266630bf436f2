use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{tokenize, CandidateSet, Corpus, CorpusError, Query, Stopwords};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.5, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if !(self.k1.is_finite() && self.k1 > 0.0) {
            return Err(CorpusError::Config(format!("k1 must be positive, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(CorpusError::Config(format!("b must lie in [0,1], got {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct TermEntry {
    /// (doc index, term frequency), ascending by doc index.
    postings: Vec<(u32, u32)>,
}

/// Inverted index with Okapi BM25 scoring. Immutable once built.
#[derive(Debug, Clone)]
pub struct PostingsIndex {
    terms: HashMap<String, TermEntry>,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    params: Bm25Params,
    stopwords: Stopwords,
}

impl PostingsIndex {
    pub fn build(corpus: &Corpus, params: Bm25Params) -> Result<Self, CorpusError> {
        params.validate()?;
        if corpus.is_empty() {
            return Err(CorpusError::Config("cannot index an empty corpus".into()));
        }
        let mut terms: HashMap<String, TermEntry> = HashMap::new();
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        for (idx, doc) in corpus.documents().iter().enumerate() {
            let tokens = tokenize(&doc.content(), corpus.stopwords());
            doc_lengths.push(tokens.len() as u32);
            let mut counts: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *counts.entry(t).or_default() += 1;
            }
            for (term, tf) in counts {
                terms
                    .entry(term)
                    .or_insert_with(|| TermEntry { postings: Vec::new() })
                    .postings
                    .push((idx as u32, tf));
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avg_doc_length = total as f64 / doc_lengths.len() as f64;
        if avg_doc_length <= 0.0 {
            return Err(CorpusError::Config("corpus contains no indexable tokens".into()));
        }
        Ok(PostingsIndex {
            terms,
            doc_ids: corpus.documents().iter().map(|d| d.doc_id.clone()).collect(),
            doc_lengths,
            avg_doc_length,
            params,
            stopwords: corpus.stopwords().clone(),
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn num_docs(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, doc_index: usize) -> u32 {
        self.doc_lengths[doc_index]
    }

    pub fn vocabulary_size(&self) -> usize {
        self.terms.len()
    }

    pub fn stopwords(&self) -> &Stopwords {
        &self.stopwords
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        tokenize(text, &self.stopwords)
    }

    pub fn df(&self, term: &str) -> usize {
        self.terms.get(term).map_or(0, |e| e.postings.len())
    }

    pub fn tf(&self, term: &str, doc_index: usize) -> u32 {
        let Some(entry) = self.terms.get(term) else {
            return 0;
        };
        entry
            .postings
            .binary_search_by_key(&(doc_index as u32), |&(d, _)| d)
            .map_or(0, |pos| entry.postings[pos].1)
    }

    /// Postings of one term as (doc index, tf) pairs.
    pub fn postings(&self, term: &str) -> &[(u32, u32)] {
        self.terms.get(term).map_or(&[], |e| e.postings.as_slice())
    }

    /// ln(1 + (N - df + 0.5) / (df + 0.5)); never negative.
    pub fn idf(&self, term: &str) -> f64 {
        idf(self.num_docs(), self.df(term))
    }

    fn term_weight(&self, tf: f64, doc_len: f64) -> f64 {
        let Bm25Params { k1, b } = self.params;
        tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * doc_len / self.avg_doc_length))
    }

    /// BM25 score of an indexed document. Repeated query tokens count once per
    /// occurrence.
    pub fn score(&self, query_tokens: &[String], doc_index: usize) -> f64 {
        let dl = f64::from(self.doc_lengths[doc_index]);
        query_tokens
            .iter()
            .map(|t| {
                let tf = self.tf(t, doc_index);
                if tf == 0 {
                    0.0
                } else {
                    self.idf(t) * self.term_weight(f64::from(tf), dl)
                }
            })
            .sum()
    }

    /// BM25 score of an arbitrary token sequence against this index's
    /// collection statistics.
    pub fn score_tokens(&self, query_tokens: &[String], doc_tokens: &[String]) -> f64 {
        let mut counts: HashMap<&str, u32> = HashMap::new();
        for t in doc_tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
        let dl = doc_tokens.len() as f64;
        query_tokens
            .iter()
            .map(|t| match counts.get(t.as_str()) {
                Some(&tf) => self.idf(t) * self.term_weight(f64::from(tf), dl),
                None => 0.0,
            })
            .sum()
    }

    /// Every document sharing at least one token with the query, best first.
    pub fn search(&self, query_tokens: &[String]) -> Vec<(usize, f64)> {
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for t in query_tokens {
            let Some(entry) = self.terms.get(t) else {
                continue;
            };
            let idf = idf(self.num_docs(), entry.postings.len());
            for &(doc, tf) in &entry.postings {
                let dl = f64::from(self.doc_lengths[doc as usize]);
                *acc.entry(doc).or_default() += idf * self.term_weight(f64::from(tf), dl);
            }
        }
        let mut hits: Vec<(usize, f64)> = acc.into_iter().map(|(d, s)| (d as usize, s)).collect();
        self.sort_hits(&mut hits);
        hits
    }

    /// All documents in the index, best first, including those scoring zero.
    pub fn rank_all(&self, query_tokens: &[String]) -> Vec<(usize, f64)> {
        let mut hits: Vec<(usize, f64)> = (0..self.num_docs()).map(|d| (d, self.score(query_tokens, d))).collect();
        self.sort_hits(&mut hits);
        hits
    }

    fn sort_hits(&self, hits: &mut [(usize, f64)]) {
        hits.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.doc_ids[a.0].cmp(&self.doc_ids[b.0]))
        });
    }

    /// Top-`k` BM25 candidates for a query. Returns `None` when no document
    /// shares a token with the query; fewer than `k` matches give a shorter set.
    pub fn retrieve_topk(&self, corpus: &Corpus, query: &Query, k: usize) -> Result<Option<CandidateSet>, CorpusError> {
        if k == 0 {
            return Err(CorpusError::Config("k must be at least 1".into()));
        }
        self.check_corpus(corpus)?;
        let tokens = self.tokenize(&query.text);
        let mut hits = self.search(&tokens);
        hits.truncate(k);
        if hits.is_empty() {
            return Ok(None);
        }
        let docs = hits.iter().map(|&(d, _)| corpus.documents()[d].clone()).collect();
        let scores = hits.iter().map(|&(_, s)| s).collect();
        CandidateSet::new(query.clone(), docs, scores).map(Some)
    }

    pub(crate) fn check_corpus(&self, corpus: &Corpus) -> Result<(), CorpusError> {
        let consistent = corpus.len() == self.num_docs()
            && corpus
                .documents()
                .iter()
                .zip(&self.doc_ids)
                .all(|(d, id)| &d.doc_id == id);
        if consistent {
            Ok(())
        } else {
            Err(CorpusError::Config("index was not built from this corpus".into()))
        }
    }
}

pub(crate) fn idf(num_docs: usize, df: usize) -> f64 {
    let n = num_docs as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}
