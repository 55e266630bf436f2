use std::collections::BTreeMap;

use super::*;
use crate::backend::{Capabilities, OracleBackend, OracleConfig, OracleTruth};
use crate::corpus::{Corpus, Qrels, Stopwords};

/// Query q1 with `grades.len()` documents d1..dn; candidate order is d1..dn.
fn fixture(grades: &[u32]) -> (CandidateSet, OracleTruth) {
    let docs: Vec<Document> = grades
        .iter()
        .enumerate()
        .map(|(i, _)| Document::new(format!("d{}", i + 1), format!("text of document number {}", i + 1)))
        .collect();
    let corpus = Corpus::new(docs.clone(), Stopwords::none()).unwrap();
    let query = Query::new("q1", "which document");
    let mut qrels = Qrels::new();
    for (i, g) in grades.iter().enumerate() {
        qrels.insert("q1", &format!("d{}", i + 1), *g);
    }
    let truth = OracleTruth::new(std::slice::from_ref(&query), &corpus, qrels);
    (CandidateSet::unscored(query, docs).unwrap(), truth)
}

fn reranker_with(backend: Arc<dyn Backend>, parallelism: usize) -> Reranker {
    Reranker::new(
        backend,
        Arc::new(TemplateSet::builtin()),
        Arc::new(CallCounter::new()),
        RerankerConfig {
            parallelism,
            ..RerankerConfig::default()
        },
    )
    .unwrap()
}

fn oracle_reranker(truth: OracleTruth, config: OracleConfig, parallelism: usize) -> Reranker {
    let oracle = OracleBackend::new(config, TemplateSet::builtin(), truth).unwrap();
    reranker_with(Arc::new(oracle), parallelism)
}

struct Failing;

impl Backend for Failing {
    fn generate(&self, _: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        Err(BackendError::Transport {
            attempts: 3,
            message: "connection refused".into(),
        })
    }
}

/// Always answers with fixed text and option probabilities.
struct Canned {
    text: String,
    probs: BTreeMap<String, f64>,
    caps: Capabilities,
}

impl Backend for Canned {
    fn generate(&self, _: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        Ok(GenerationResult {
            text: self.text.clone(),
            option_probs: Some(self.probs.clone()),
            target_token_logprobs: None,
        })
    }

    fn capabilities(&self) -> Capabilities {
        self.caps
    }
}

#[test]
fn strategy_tags_round_trip() {
    for s in Strategy::ALL {
        assert_eq!(s.tag().parse::<Strategy>().unwrap(), s);
    }
    assert!("pairwise".parse::<Strategy>().is_err());
}

#[test]
fn listwise_call_counts() {
    let p = ListwiseParams::default();
    assert_eq!(p.expected_calls(100), 9);
    assert_eq!(p.expected_calls(20), 1);
    assert_eq!(p.window_starts(100), vec![80, 70, 60, 50, 40, 30, 20, 10, 0]);
    let odd = ListwiseParams {
        window: 4,
        stride: 3,
        passes: 1,
    };
    assert_eq!(odd.window_starts(9), vec![5, 2, 0]);
    assert_eq!(odd.expected_calls(9), 3);
    let small = p.scaled_to(5);
    assert_eq!((small.window, small.stride), (5, 4));
    assert!(ListwiseParams {
        window: 4,
        stride: 4,
        passes: 1
    }
    .validate(10)
    .is_err());
}

#[test]
fn relevance_score_values() {
    let v = |label, p| PointwiseVerdict {
        label,
        label_probability: p,
    };
    assert_eq!(relevance_score(&v(Label::Yes, 0.75)), 1.75);
    assert_eq!(relevance_score(&v(Label::No, 0.75)), 0.25);
    assert_eq!(relevance_score(&v(Label::Other, 0.0)), 1.0);
}

#[test]
fn pairwise_perfect_judge_sorts_by_grade() {
    let grades = [0, 2, 1, 3, 0];
    let (cands, truth) = fixture(&grades);
    let r = oracle_reranker(truth, OracleConfig::default(), 2);
    let out = r.rank_pairwise_allpair(&cands).unwrap();
    assert_eq!(out.calls, 20);
    assert_eq!(r.counter().calls("pairwise-allpair"), 20);
    assert_eq!(out.list.doc_ids(), vec!["d4", "d2", "d3", "d1", "d5"]);
    // Equal grades tie at n - 1 and keep input order.
    assert_eq!(out.list.entries()[3].score, out.list.entries()[4].score);
}

#[test]
fn pairwise_matrix_matches_oracle_answers() {
    let (cands, truth) = fixture(&[1, 0, 2]);
    let r = oracle_reranker(truth, OracleConfig::default(), 1);
    let (m, failed, _) = r.comparison_matrix(&cands).unwrap();
    assert_eq!(failed, 0);
    let expect = [[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [1.0, 1.0, 0.0]];
    for (i, row) in expect.iter().enumerate() {
        for (j, &want) in row.iter().enumerate() {
            if i != j {
                assert_eq!(m.get(i, j), want, "cell ({i},{j})");
            }
        }
    }
    assert_eq!(m.scores(), vec![2.0, 0.0, 4.0]);
}

#[test]
fn position_biased_judge_cancels_out() {
    // Always picking the first item gives every document the same score.
    let (cands, truth) = fixture(&[0, 3, 1, 2]);
    let config = OracleConfig {
        position_bias: 1.0,
        ..OracleConfig::default()
    };
    let out = oracle_reranker(truth, config, 1).rank_pairwise_allpair(&cands).unwrap();
    assert!(out.list.entries().iter().all(|e| e.score == 3.0));
    assert_eq!(out.list.doc_ids(), vec!["d1", "d2", "d3", "d4"]);
}

#[test]
fn pointwise_rg_uses_probabilities() {
    let (cands, truth) = fixture(&[0, 2, 3, 1]);
    let r = oracle_reranker(truth, OracleConfig::default(), 3);
    let out = r.rank_pointwise_rg(&cands).unwrap();
    assert_eq!(out.calls, 4);
    assert_eq!(out.list.doc_ids(), vec!["d3", "d2", "d4", "d1"]);
    assert!(out.list.entries()[3].score < 1.0);
    assert!(out.list.entries()[0].score > 1.5);
}

#[test]
fn pointwise_rg_unreadable_answers_score_one() {
    let (cands, _) = fixture(&[0, 1]);
    let canned = Canned {
        text: "maybe".into(),
        probs: BTreeMap::new(),
        caps: Capabilities::ALL,
    };
    let out = reranker_with(Arc::new(canned), 1).rank_pointwise_rg(&cands).unwrap();
    assert!(out.list.entries().iter().all(|e| e.score == 1.0));
    assert_eq!(out.degraded, 2);
}

#[test]
fn pointwise_qg_needs_logprobs() {
    let (cands, _) = fixture(&[0, 1]);
    let canned = Canned {
        text: String::new(),
        probs: BTreeMap::new(),
        caps: Capabilities {
            option_probs: true,
            token_logprobs: false,
        },
    };
    let r = reranker_with(Arc::new(canned), 1);
    assert!(matches!(r.rank_pointwise_qg(&cands), Err(RankError::Capability(_))));
    assert_eq!(r.counter().total_calls(), 0);
}

#[test]
fn pointwise_qg_orders_by_likelihood() {
    let (cands, truth) = fixture(&[1, 0, 3]);
    let out = oracle_reranker(truth, OracleConfig::default(), 2)
        .rank_pointwise_qg(&cands)
        .unwrap();
    assert_eq!(out.list.doc_ids(), vec!["d3", "d1", "d2"]);
    assert!(out.list.entries().iter().all(|e| e.score < 0.0));
}

#[test]
fn listwise_perfect_judge_surfaces_top_items() {
    // One back-to-front pass with window w and stride s places the best
    // w - s items correctly.
    let grades: Vec<u32> = (0..30)
        .map(|i| if i % 7 == 3 { 3 - (i / 10) as u32 } else { 0 })
        .collect();
    let (cands, truth) = fixture(&grades);
    let r = oracle_reranker(truth, OracleConfig::default(), 1);
    let params = ListwiseParams {
        window: 10,
        stride: 5,
        passes: 1,
    };
    let out = r.rank_listwise_window(&cands, params).unwrap();
    assert_eq!(out.calls, params.expected_calls(30));
    assert_eq!(r.counter().calls("listwise"), 5);
    let top: Vec<u32> = out.list.doc_ids()[..4]
        .iter()
        .map(|d| grades[d[1..].parse::<usize>().unwrap() - 1])
        .collect();
    assert_eq!(top, vec![3, 2, 2, 1]);
    let first = out.list.entries()[0].score;
    assert_eq!(first, 1.0);
    assert_eq!(out.list.entries()[1].score, 0.5);
}

#[test]
fn listwise_single_item_needs_no_call() {
    let (cands, truth) = fixture(&[1]);
    let r = oracle_reranker(truth, OracleConfig::default(), 1);
    let out = r.rank(Strategy::Listwise, &cands).unwrap();
    assert_eq!(out.calls, 0);
    assert_eq!(out.list.doc_ids(), vec!["d1"]);
}

#[test]
fn failures_fall_back_to_neutral_values() {
    let (cands, _) = fixture(&[0, 1, 2, 3]);
    let r = reranker_with(Arc::new(Failing), 2);
    let out = r.rank_pairwise_allpair(&cands).unwrap();
    assert_eq!(out.failed_calls, 12);
    assert!(out.list.entries().iter().all(|e| e.score == 3.0));
    assert_eq!(r.counter().get("pairwise-allpair").failures, 12);

    let out = r
        .rank_listwise_window(&cands, ListwiseParams::default().scaled_to(4))
        .unwrap();
    assert_eq!(out.failed_calls, 1);
    assert_eq!(out.list.doc_ids(), vec!["d1", "d2", "d3", "d4"]);

    let out = r.rank_pointwise_qg(&cands).unwrap();
    assert_eq!(out.failed_calls, 4);
    assert_eq!(out.degraded, 4);
}

#[test]
fn parallelism_does_not_change_results() {
    let grades = [0, 1, 2, 3, 0, 1, 2, 3, 1];
    let config = OracleConfig {
        accuracy: 0.7,
        tie_rate: 0.1,
        position_bias: 0.1,
        seed: 9,
        ..OracleConfig::default()
    };
    let mut lists = Vec::new();
    for threads in [1, 4] {
        let (cands, truth) = fixture(&grades);
        let r = oracle_reranker(truth, config, threads);
        lists.push(r.rank_pairwise_allpair(&cands).unwrap().list);
    }
    assert_eq!(lists[0], lists[1]);
}
