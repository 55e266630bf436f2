//! Ranking metrics, latency measurement, recommendation candidate pools and
//! report output.

mod pool;
mod report;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backend::CallCounter;
use crate::corpus::{CandidateSet, Qrels};
use crate::rankers::RankedList;

pub use pool::{build_rec_pool, PopularityTable, DEFAULT_POPULARITY_THRESHOLD, POOL_POPULAR, POOL_TOP};
pub use report::{render_markdown, write_report_csv, ReportRow};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Gain applied to a relevance grade.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gain {
    #[default]
    Linear,
    /// 2^rel - 1.
    Exp,
}

impl Gain {
    pub fn apply(self, grade: u32) -> f64 {
        match self {
            Gain::Linear => f64::from(grade),
            Gain::Exp => 2f64.powi(grade as i32) - 1.0,
        }
    }
}

impl FromStr for Gain {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Gain::Linear),
            "exp" => Ok(Gain::Exp),
            _ => Err(EvalError::InvalidInput(format!("unknown gain `{s}`"))),
        }
    }
}

impl fmt::Display for Gain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gain::Linear => "linear",
            Gain::Exp => "exp",
        })
    }
}

/// DCG of gains listed in rank order, cut at `k`.
pub fn dcg(gains: &[f64], k: usize) -> f64 {
    gains
        .iter()
        .take(k)
        .enumerate()
        .map(|(r, g)| g / ((r + 2) as f64).log2())
        .sum()
}

/// nDCG@k of a ranking. The ideal ordering is built from every judged
/// document of the query, so relevant documents missing from the ranking
/// lower the score. Returns 0 when the query has no positive judgment.
pub fn ndcg_at_k(ranked: &RankedList, qrels: &Qrels, k: usize, gain: Gain) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    let q = ranked.query_id();
    let gains: Vec<f64> = ranked
        .entries()
        .iter()
        .map(|e| gain.apply(qrels.grade(q, &e.doc_id)))
        .collect();
    let mut ideal: Vec<f64> = qrels
        .for_query(q)
        .map(|judged| judged.values().map(|&g| gain.apply(g)).collect())
        .unwrap_or_default();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg(&ideal, k);
    if idcg <= 0.0 {
        0.0
    } else {
        dcg(&gains, k) / idcg
    }
}

/// 1 if the top-ranked item is `target`, else 0.
pub fn acc_at_1(ranked: &RankedList, target: &str) -> f64 {
    if ranked.top() == Some(target) {
        1.0
    } else {
        0.0
    }
}

/// Acc@1 against judgments: a hit when the top item carries the query's
/// highest positive grade. 0 when the query has no positive judgment.
pub fn acc_at_1_qrels(ranked: &RankedList, qrels: &Qrels) -> f64 {
    let q = ranked.query_id();
    let best = qrels
        .for_query(q)
        .and_then(|judged| judged.values().copied().max())
        .unwrap_or(0);
    match ranked.top() {
        Some(top) if best > 0 && qrels.grade(q, top) == best => 1.0,
        _ => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub ndcg_1: f64,
    pub ndcg_5: f64,
    pub ndcg_10: f64,
    pub acc_1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_query: Vec<QueryMetrics>,
    pub ndcg_1: f64,
    pub ndcg_5: f64,
    pub ndcg_10: f64,
    pub acc_1: f64,
}

impl MetricReport {
    pub fn query_count(&self) -> usize {
        self.per_query.len()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Metrics for every ranked query; queries without judgments score 0.
pub fn evaluate(runs: &[RankedList], qrels: &Qrels, gain: Gain) -> MetricReport {
    let per_query: Vec<QueryMetrics> = runs
        .iter()
        .map(|r| QueryMetrics {
            query_id: r.query_id().to_string(),
            ndcg_1: ndcg_at_k(r, qrels, 1, gain),
            ndcg_5: ndcg_at_k(r, qrels, 5, gain),
            ndcg_10: ndcg_at_k(r, qrels, 10, gain),
            acc_1: acc_at_1_qrels(r, qrels),
        })
        .collect();
    MetricReport {
        ndcg_1: mean(per_query.iter().map(|m| m.ndcg_1)),
        ndcg_5: mean(per_query.iter().map(|m| m.ndcg_5)),
        ndcg_10: mean(per_query.iter().map(|m| m.ndcg_10)),
        acc_1: mean(per_query.iter().map(|m| m.acc_1)),
        per_query,
    }
}

/// Timing of one strategy over a query set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyEntry {
    pub strategy: String,
    pub queries: usize,
    pub sec_per_q: f64,
    pub calls_per_q: f64,
}

/// Runs `rank` on every candidate set in turn and reports mean wall-clock
/// seconds and backend calls per query. Calls are read from `counter` under
/// the `strategy` tag.
pub fn measure_latency<T, E>(
    strategy: &str,
    candidate_sets: &[CandidateSet],
    counter: &Arc<CallCounter>,
    mut rank: impl FnMut(&CandidateSet) -> Result<T, E>,
) -> Result<(LatencyEntry, Vec<T>), E> {
    let calls_before = counter.calls(strategy);
    let started = Instant::now();
    let mut outputs = Vec::with_capacity(candidate_sets.len());
    for c in candidate_sets {
        outputs.push(rank(c)?);
    }
    let elapsed = started.elapsed().as_secs_f64();
    let q = candidate_sets.len().max(1) as f64;
    let entry = LatencyEntry {
        strategy: strategy.to_string(),
        queries: candidate_sets.len(),
        sec_per_q: elapsed / q,
        calls_per_q: (counter.calls(strategy) - calls_before) as f64 / q,
    };
    Ok((entry, outputs))
}

/// Latency entries with speedups relative to a reference strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub reference: String,
    pub entries: Vec<LatencyEntry>,
}

impl LatencyReport {
    pub fn new(reference: &str, entries: Vec<LatencyEntry>) -> Self {
        LatencyReport {
            reference: reference.to_string(),
            entries,
        }
    }

    pub fn get(&self, strategy: &str) -> Option<&LatencyEntry> {
        self.entries.iter().find(|e| e.strategy == strategy)
    }

    /// Reference Sec/Q divided by this strategy's Sec/Q.
    pub fn speedup(&self, strategy: &str) -> Option<f64> {
        let reference = self.get(&self.reference)?.sec_per_q;
        let s = self.get(strategy)?.sec_per_q;
        if s > 0.0 {
            Some(reference / s)
        } else {
            Some(f64::INFINITY)
        }
    }
}
