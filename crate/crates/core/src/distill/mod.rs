//! Instruction distillation: pairwise all-pair rankings serve as the teacher
//! for a cheap pointwise student trained with a pairwise logistic (RankNet)
//! loss and AdamW.
//!
//! The pipeline has three stages: BM25 candidate generation, teacher
//! inference ([`build_training_set`]) and student learning ([`train`]).

mod features;
mod optim;
mod student;

use std::collections::HashMap;
use std::io::{BufRead, Write};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CandidateSet, Corpus, CorpusError, Document, PostingsIndex, Query};
use crate::rankers::{scores_to_ranking, RankError, RankedList, Reranker};

pub use features::{FeatureExtractor, FeatureSpec, FEATURE_NAMES};
pub use optim::{adamw_step, ordered_pairs, ranknet_grad, ranknet_loss, AdamWParams, OptimizerState};
pub use student::{Architecture, StudentScorer};

#[derive(Debug, thiserror::Error)]
pub enum DistillError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// A query, its candidates and the teacher's 1-based rank for each candidate
/// (aligned with `docs`). Ranks may tie.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub query: Query,
    pub docs: Vec<Document>,
    pub teacher_ranks: Vec<usize>,
}

impl TrainingExample {
    pub fn new(query: Query, docs: Vec<Document>, teacher_ranks: Vec<usize>) -> Result<Self, DistillError> {
        let n = docs.len();
        if n < 2 {
            return Err(DistillError::InvalidInput(format!(
                "query `{}` needs at least two documents",
                query.query_id
            )));
        }
        if teacher_ranks.len() != n || teacher_ranks.iter().any(|&r| r == 0 || r > n) {
            return Err(DistillError::InvalidInput(format!(
                "teacher ranks for query `{}` must be {n} values in 1..={n}",
                query.query_id
            )));
        }
        Ok(TrainingExample {
            query,
            docs,
            teacher_ranks,
        })
    }

    /// Competition ranks (equal scores share the best rank) of a teacher
    /// ranking, aligned with `docs`.
    pub fn from_teacher(candidates: &CandidateSet, teacher: &RankedList) -> Result<Self, DistillError> {
        let ranks = candidates
            .docs()
            .iter()
            .map(|d| {
                let score = teacher
                    .entries()
                    .iter()
                    .find(|e| e.doc_id == d.doc_id)
                    .map(|e| e.score)
                    .ok_or_else(|| DistillError::InvalidInput(format!("teacher ranking lacks `{}`", d.doc_id)))?;
                Ok(1 + teacher.entries().iter().filter(|e| e.score > score).count())
            })
            .collect::<Result<Vec<_>, DistillError>>()?;
        Self::new(candidates.query().clone(), candidates.docs().to_vec(), ranks)
    }

    pub fn record(&self) -> TrainingRecord {
        TrainingRecord {
            query_id: self.query.query_id.clone(),
            doc_ids: self.docs.iter().map(|d| d.doc_id.clone()).collect(),
            teacher_ranks: self.teacher_ranks.clone(),
        }
    }
}

/// On-disk form of a [`TrainingExample`], one JSON object per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub query_id: String,
    pub doc_ids: Vec<String>,
    pub teacher_ranks: Vec<usize>,
}

/// Which queries made it into a training set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub completed: Vec<String>,
    /// Fewer than two retrievable documents.
    pub skipped: Vec<String>,
    /// At least one teacher call failed; rerun (with a cache) to resume.
    pub failed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub examples: Vec<TrainingExample>,
    pub manifest: TrainingManifest,
}

enum TeacherOutcome {
    Done(TrainingExample),
    Skipped,
    Failed,
}

/// Retrieves `n` BM25 candidates per query and ranks them with the pairwise
/// all-pair teacher. Queries run concurrently on the reranker's pool.
pub fn build_training_set(
    queries: &[Query],
    corpus: &Corpus,
    index: &PostingsIndex,
    teacher: &Reranker,
    n: usize,
) -> Result<TrainingSet, DistillError> {
    if n < 2 {
        return Err(DistillError::InvalidInput("n must be at least 2".into()));
    }
    let outcomes: Vec<Result<TeacherOutcome, DistillError>> = teacher.install(|| {
        queries
            .par_iter()
            .map(|q| {
                let Some(cands) = index.retrieve_topk(corpus, q, n)? else {
                    return Ok(TeacherOutcome::Skipped);
                };
                if cands.len() < 2 {
                    return Ok(TeacherOutcome::Skipped);
                }
                let out = teacher.rank_pairwise_allpair(&cands)?;
                if out.failed_calls > 0 {
                    warn!("query {}: {} teacher call(s) failed", q.query_id, out.failed_calls);
                    return Ok(TeacherOutcome::Failed);
                }
                Ok(TeacherOutcome::Done(TrainingExample::from_teacher(&cands, &out.list)?))
            })
            .collect()
    });
    let mut set = TrainingSet {
        examples: Vec::new(),
        manifest: TrainingManifest::default(),
    };
    for (q, outcome) in queries.iter().zip(outcomes) {
        let id = q.query_id.clone();
        match outcome? {
            TeacherOutcome::Done(ex) => {
                set.examples.push(ex);
                set.manifest.completed.push(id);
            }
            TeacherOutcome::Skipped => set.manifest.skipped.push(id),
            TeacherOutcome::Failed => set.manifest.failed.push(id),
        }
    }
    info!(
        "training set: {} completed, {} skipped, {} failed",
        set.manifest.completed.len(),
        set.manifest.skipped.len(),
        set.manifest.failed.len()
    );
    Ok(set)
}

pub fn write_training_set<W: Write>(mut out: W, examples: &[TrainingExample]) -> Result<(), DistillError> {
    for ex in examples {
        serde_json::to_writer(&mut out, &ex.record())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads JSON-lines training records, resolving ids against `queries` and
/// `corpus`.
pub fn read_training_set<R: BufRead>(
    reader: R,
    queries: &[Query],
    corpus: &Corpus,
) -> Result<Vec<TrainingExample>, DistillError> {
    let by_id: HashMap<&str, &Query> = queries.iter().map(|q| (q.query_id.as_str(), q)).collect();
    let mut examples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrainingRecord = serde_json::from_str(&line)?;
        let query = by_id
            .get(rec.query_id.as_str())
            .ok_or_else(|| DistillError::InvalidInput(format!("line {}: unknown query `{}`", i + 1, rec.query_id)))?;
        let docs = rec
            .doc_ids
            .iter()
            .map(|d| {
                corpus
                    .find(d)
                    .cloned()
                    .ok_or_else(|| DistillError::InvalidInput(format!("line {}: unknown document `{d}`", i + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        examples.push(TrainingExample::new((*query).clone(), docs, rec.teacher_ranks)?);
    }
    Ok(examples)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Queries per optimizer step.
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub max_input_tokens: usize,
    pub architecture: Architecture,
    /// Stop after an epoch whose mean loss does not improve on the previous one.
    pub early_stop: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 32,
            lr: 3e-5,
            weight_decay: 0.01,
            seed: 42,
            max_input_tokens: 512,
            architecture: Architecture::Linear,
            early_stop: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DistillError> {
        let bad = |m: &str| Err(DistillError::InvalidInput(m.into()));
        if self.epochs == 0 || self.batch_size == 0 || self.max_input_tokens == 0 {
            return bad("epochs, batch_size and max_input_tokens must be positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWParams {
        AdamWParams {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWParams::default()
        }
    }
}

/// A trained scorer together with the features it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct Student {
    pub scorer: StudentScorer,
    pub feature_spec: FeatureSpec,
    pub train_config: TrainConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    architecture: Architecture,
    feature_spec: FeatureSpec,
    theta: Vec<f64>,
    train_config: TrainConfig,
    seed: u64,
}

impl Student {
    pub fn to_json(&self) -> Result<String, DistillError> {
        let ckpt = Checkpoint {
            architecture: self.scorer.architecture(),
            feature_spec: self.feature_spec.clone(),
            theta: self.scorer.theta().to_vec(),
            train_config: self.train_config,
            seed: self.train_config.seed,
        };
        Ok(serde_json::to_string_pretty(&ckpt)?)
    }

    pub fn from_json(text: &str) -> Result<Self, DistillError> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.feature_spec.names != FeatureSpec::new(ckpt.feature_spec.max_input_tokens).names {
            return Err(DistillError::InvalidInput(format!(
                "checkpoint features {:?} are not supported",
                ckpt.feature_spec.names
            )));
        }
        let scorer = StudentScorer::from_parts(ckpt.architecture, ckpt.feature_spec.dim(), ckpt.theta)?;
        Ok(Student {
            scorer,
            feature_spec: ckpt.feature_spec,
            train_config: ckpt.train_config,
        })
    }

    pub fn score(&self, index: &PostingsIndex, query: &Query, doc: &Document) -> f64 {
        let fx = FeatureExtractor::new(index, self.feature_spec.clone());
        self.scorer.score(&fx.extract(query, doc))
    }

    /// Ranks candidates with one scorer evaluation each; no backend is involved.
    pub fn rank(&self, index: &PostingsIndex, candidates: &CandidateSet) -> Result<RankedList, DistillError> {
        let fx = FeatureExtractor::new(index, self.feature_spec.clone());
        let scores: Vec<f64> = candidates
            .docs()
            .iter()
            .map(|d| self.scorer.score(&fx.extract(candidates.query(), d)))
            .collect();
        Ok(scores_to_ranking(
            &candidates.query().query_id,
            &scores,
            &candidates.doc_ids(),
        )?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub student: Student,
    /// Mean per-query loss of each completed epoch.
    pub epoch_losses: Vec<f64>,
}

/// Loss of one query and its gradient with respect to the parameters.
fn example_loss_grad(scorer: &StudentScorer, features: &[Vec<f64>], ranks: &[usize]) -> (f64, Vec<f64>) {
    let (scores, grads): (Vec<f64>, Vec<Vec<f64>>) = features.iter().map(|x| scorer.score_and_grad(x)).unzip();
    let loss = ranknet_loss(ranks, &scores);
    let dscore = ranknet_grad(ranks, &scores);
    let mut grad = vec![0.0; scorer.theta().len()];
    for (ds, g) in dscore.iter().zip(&grads) {
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += ds * gi;
        }
    }
    (loss, grad)
}

/// Trains a student on teacher rankings. Single-threaded and bit-reproducible
/// for a given seed, config and data.
pub fn train(
    examples: &[TrainingExample],
    index: &PostingsIndex,
    config: &TrainConfig,
) -> Result<TrainOutcome, DistillError> {
    config.validate()?;
    if examples.is_empty() {
        return Err(DistillError::InvalidInput("no training examples".into()));
    }
    let spec = FeatureSpec::new(config.max_input_tokens);
    let fx = FeatureExtractor::new(index, spec.clone());
    let features: Vec<Vec<Vec<f64>>> = examples.iter().map(|ex| fx.extract_all(&ex.query, &ex.docs)).collect();
    if features.iter().flatten().flatten().any(|v| !v.is_finite()) {
        return Err(DistillError::InvalidInput("non-finite feature value".into()));
    }

    let mut scorer = StudentScorer::init(config.architecture, spec.dim(), config.seed)?;
    let mut state = OptimizerState::new(scorer.theta().len(), config.adamw());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses: Vec<f64> = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grad = vec![0.0; scorer.theta().len()];
            for &i in batch {
                let (l, g) = example_loss_grad(&scorer, &features[i], &examples[i].teacher_ranks);
                total += l;
                for (acc, gi) in grad.iter_mut().zip(g) {
                    *acc += gi / batch.len() as f64;
                }
            }
            adamw_step(&mut state, scorer.theta_mut(), &grad);
        }
        let mean = total / examples.len() as f64;
        info!("epoch {epoch}: mean loss {mean:.6}");
        let stop = config.early_stop && epoch_losses.last().is_some_and(|&prev| mean >= prev);
        epoch_losses.push(mean);
        if stop {
            info!("loss stopped improving; ending after epoch {epoch}");
            break;
        }
    }
    if scorer.theta().iter().any(|t| !t.is_finite()) {
        return Err(DistillError::InvalidInput("training diverged".into()));
    }
    Ok(TrainOutcome {
        student: Student {
            scorer,
            feature_spec: spec,
            train_config: *config,
        },
        epoch_losses,
    })
}

/// Writes `epoch,mean_loss` rows.
pub fn write_loss_trace<W: Write>(out: W, epoch_losses: &[f64]) -> Result<(), DistillError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "mean_loss"])?;
    for (i, l) in epoch_losses.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
