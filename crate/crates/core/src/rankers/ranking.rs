use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::RankError;
use crate::corpus::RunLine;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
}

/// A query's documents with scores and 1-based ranks, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    query_id: String,
    entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn entries(&self) -> &[RankedEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.doc_id.as_str()).collect()
    }

    pub fn top(&self) -> Option<&str> {
        self.entries.first().map(|e| e.doc_id.as_str())
    }

    /// Rank of a document, if present.
    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.entries.iter().find(|e| e.doc_id == doc_id).map(|e| e.rank)
    }

    pub fn to_run_lines(&self) -> Vec<RunLine> {
        self.entries
            .iter()
            .map(|e| RunLine {
                query_id: self.query_id.clone(),
                doc_id: e.doc_id.clone(),
                rank: e.rank,
                score: e.score,
            })
            .collect()
    }

    /// Groups run lines by query (in first-seen order) and orders each group
    /// by rank. Ranks must form 1..=n within a query.
    pub fn from_run_lines(lines: &[RunLine]) -> Result<Vec<RankedList>, RankError> {
        let mut order: Vec<&str> = Vec::new();
        let mut groups: BTreeMap<&str, Vec<&RunLine>> = BTreeMap::new();
        for l in lines {
            let g = groups.entry(&l.query_id).or_default();
            if g.is_empty() {
                order.push(&l.query_id);
            }
            g.push(l);
        }
        order
            .into_iter()
            .map(|q| {
                let mut group = groups.remove(q).unwrap_or_default();
                group.sort_by_key(|l| l.rank);
                if group.iter().enumerate().any(|(i, l)| l.rank != i + 1) {
                    return Err(RankError::InvalidInput(format!("ranks for query `{q}` are not 1..n")));
                }
                Ok(RankedList {
                    query_id: q.to_string(),
                    entries: group
                        .into_iter()
                        .map(|l| RankedEntry {
                            doc_id: l.doc_id.clone(),
                            score: l.score,
                            rank: l.rank,
                        })
                        .collect(),
                })
            })
            .collect()
    }
}

/// Stable descending sort of `scores`; equal scores keep their input order.
pub fn scores_to_ranking(query_id: &str, scores: &[f64], original_order: &[String]) -> Result<RankedList, RankError> {
    if scores.len() != original_order.len() {
        return Err(RankError::InvalidInput(format!(
            "{} scores for {} documents",
            scores.len(),
            original_order.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(RankError::InvalidInput(format!("score {bad} is not a number")));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    Ok(RankedList {
        query_id: query_id.to_string(),
        entries: idx
            .into_iter()
            .enumerate()
            .map(|(pos, i)| RankedEntry {
                doc_id: original_order[i].clone(),
                score: scores[i],
                rank: pos + 1,
            })
            .collect(),
    })
}

/// Pairwise choices `c[i][j]` for all ordered pairs `i != j`, each in
/// {0, 0.5, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonMatrix {
    n: usize,
    values: Vec<f64>,
}

impl ComparisonMatrix {
    /// All off-diagonal entries start at 0.5.
    pub fn new(n: usize) -> Self {
        ComparisonMatrix {
            n,
            values: vec![0.5; n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self, RankError> {
        let mut m = Self::new(n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m.set(i, j, f(i, j))?;
                }
            }
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) -> Result<(), RankError> {
        if i == j || i >= self.n || j >= self.n {
            return Err(RankError::InvalidInput(format!("no comparison cell ({i}, {j})")));
        }
        if ![0.0, 0.5, 1.0].contains(&value) {
            return Err(RankError::InvalidInput(format!(
                "comparison value {value} not in {{0, 0.5, 1}}"
            )));
        }
        self.values[i * self.n + j] = value;
        Ok(())
    }

    /// s_i = sum over j != i of c[i][j] + (1 - c[j][i]).
    pub fn scores(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (0..self.n)
                    .filter(|&j| j != i)
                    .map(|j| self.get(i, j) + (1.0 - self.get(j, i)))
                    .sum()
            })
            .collect()
    }
}
