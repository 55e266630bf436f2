use std::collections::{BTreeMap, BTreeSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::EvalError;
use crate::corpus::{CandidateSet, Corpus, PostingsIndex, Query};

pub const DEFAULT_POPULARITY_THRESHOLD: u64 = 200;
/// Items taken from the top of the BM25 ranking.
pub const POOL_TOP: usize = 5;
/// Popular items sampled in addition.
pub const POOL_POPULAR: usize = 4;

/// Mention counts per item; items with more than `threshold` mentions are
/// popular.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PopularityTable {
    counts: BTreeMap<String, u64>,
    threshold: u64,
}

impl PopularityTable {
    pub fn new(counts: BTreeMap<String, u64>, threshold: u64) -> Self {
        PopularityTable { counts, threshold }
    }

    pub fn threshold(&self) -> u64 {
        self.threshold
    }

    pub fn count(&self, doc_id: &str) -> u64 {
        self.counts.get(doc_id).copied().unwrap_or(0)
    }

    pub fn is_popular(&self, doc_id: &str) -> bool {
        self.count(doc_id) > self.threshold
    }

    pub fn popular(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts
            .iter()
            .filter(|(_, &c)| c > self.threshold)
            .map(|(d, &c)| (d.as_str(), c))
    }

    /// Reads `doc_id,count` rows with a header.
    pub fn read_csv<R: std::io::Read>(reader: R, threshold: u64) -> Result<Self, EvalError> {
        let mut counts = BTreeMap::new();
        let mut rdr = csv::Reader::from_reader(reader);
        for row in rdr.deserialize() {
            let (doc_id, count): (String, u64) = row?;
            counts.insert(doc_id, count);
        }
        Ok(PopularityTable::new(counts, threshold))
    }
}

fn pool_rng(seed: u64, query_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(query_id.as_bytes());
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&h.finalize());
    ChaCha8Rng::from_seed(bytes)
}

/// Candidate pool for a recommendation dialog: the BM25 top five over the
/// dialog text plus four popular items outside them, drawn one at a time
/// with probability proportional to mention count. The pool is ordered by
/// BM25 score.
pub fn build_rec_pool(
    dialog: &Query,
    corpus: &Corpus,
    index: &PostingsIndex,
    popularity: &PopularityTable,
    seed: u64,
) -> Result<CandidateSet, EvalError> {
    if corpus.len() < POOL_TOP + POOL_POPULAR {
        return Err(EvalError::InvalidInput(format!(
            "a pool needs at least {} items, catalog has {}",
            POOL_TOP + POOL_POPULAR,
            corpus.len()
        )));
    }
    let tokens = index.tokenize(&dialog.text);
    let ranked = index.rank_all(&tokens);
    let top: Vec<(usize, f64)> = ranked[..POOL_TOP].to_vec();
    let top_ids: BTreeSet<&str> = top
        .iter()
        .map(|&(d, _)| corpus.documents()[d].doc_id.as_str())
        .collect();

    let mut universe: Vec<(usize, u64)> = corpus
        .documents()
        .iter()
        .enumerate()
        .filter(|(_, d)| popularity.is_popular(&d.doc_id) && !top_ids.contains(d.doc_id.as_str()))
        .map(|(i, d)| (i, popularity.count(&d.doc_id)))
        .collect();
    if universe.len() < POOL_POPULAR {
        return Err(EvalError::InvalidInput(format!(
            "only {} popular items outside the top {POOL_TOP} for `{}`",
            universe.len(),
            dialog.query_id
        )));
    }
    let mut rng = pool_rng(seed, &dialog.query_id);
    let mut picked = Vec::with_capacity(POOL_POPULAR);
    for _ in 0..POOL_POPULAR {
        let dist =
            WeightedIndex::new(universe.iter().map(|&(_, c)| c)).map_err(|e| EvalError::InvalidInput(e.to_string()))?;
        picked.push(universe.remove(dist.sample(&mut rng)).0);
    }

    let mut pool = top;
    pool.extend(picked.into_iter().map(|d| (d, index.score(&tokens, d))));
    pool.sort_by(|a, b| b.1.total_cmp(&a.1));
    let docs = pool.iter().map(|&(d, _)| corpus.documents()[d].clone()).collect();
    let scores = pool.iter().map(|&(_, s)| s).collect();
    CandidateSet::new(dialog.clone(), docs, scores).map_err(|e| EvalError::InvalidInput(e.to_string()))
}
