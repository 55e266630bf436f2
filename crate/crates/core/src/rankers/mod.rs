//! Zero-shot ranking strategies: pointwise relevance generation, pointwise
//! query generation, all-pair pairwise comparison and sliding-window listwise
//! permutation.
//!
//! Each strategy turns a [`CandidateSet`] into a [`RankedList`]. Backend calls
//! within one invocation run on the reranker's thread pool; results are
//! collected by request position, so aggregation never depends on completion
//! order.

mod ranking;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, CallCounter, GenerationRequest, GenerationResult};
use crate::corpus::{CandidateSet, CorpusError, Document, Query};
use crate::prompts::{
    parse_pair_choice, parse_permutation, parse_yes_no, render, Label, PairwiseChoice, PointwiseVerdict, PromptError,
    Task, TemplateKind, TemplateSet,
};

pub use ranking::{scores_to_ranking, ComparisonMatrix, RankedEntry, RankedList};

#[derive(Debug, thiserror::Error)]
pub enum RankError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("backend lacks capability: {0}")]
    Capability(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "pointwise-rg")]
    PointwiseRg,
    #[serde(rename = "pointwise-qg")]
    PointwiseQg,
    #[serde(rename = "pairwise-allpair")]
    PairwiseAllPair,
    #[serde(rename = "listwise")]
    Listwise,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::PointwiseRg,
        Strategy::PointwiseQg,
        Strategy::PairwiseAllPair,
        Strategy::Listwise,
    ];

    /// Tag used in call counters, run files and reports.
    pub fn tag(self) -> &'static str {
        match self {
            Strategy::PointwiseRg => "pointwise-rg",
            Strategy::PointwiseQg => "pointwise-qg",
            Strategy::PairwiseAllPair => "pairwise-allpair",
            Strategy::Listwise => "listwise",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Strategy {
    type Err = RankError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.tag() == s)
            .ok_or_else(|| RankError::InvalidInput(format!("unknown strategy `{s}`")))
    }
}

/// Sliding-window schedule for listwise ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListwiseParams {
    pub window: usize,
    pub stride: usize,
    /// Number of back-to-front passes.
    pub passes: usize,
}

impl Default for ListwiseParams {
    fn default() -> Self {
        ListwiseParams {
            window: 20,
            stride: 10,
            passes: 1,
        }
    }
}

impl ListwiseParams {
    /// Shrinks the window to `n` when there are fewer candidates, keeping the
    /// stride below the window.
    pub fn scaled_to(self, n: usize) -> Self {
        let window = self.window.min(n).max(2);
        ListwiseParams {
            window,
            stride: self.stride.min(window - 1).max(1),
            passes: self.passes,
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), RankError> {
        if self.window < 2 || self.window > n {
            return Err(RankError::InvalidInput(format!(
                "window {} must lie in [2, {n}]",
                self.window
            )));
        }
        if self.stride < 1 || self.stride >= self.window {
            return Err(RankError::InvalidInput(format!(
                "stride {} must lie in [1, {})",
                self.stride, self.window
            )));
        }
        if self.passes == 0 {
            return Err(RankError::InvalidInput("passes must be at least 1".into()));
        }
        Ok(())
    }

    /// Backend calls for one ranking of `n` items.
    pub fn expected_calls(&self, n: usize) -> usize {
        let per_pass = if n > self.window {
            (n - self.window).div_ceil(self.stride) + 1
        } else {
            1
        };
        per_pass * self.passes
    }

    /// Start offsets of the windows of one pass, back to front.
    fn window_starts(&self, n: usize) -> Vec<usize> {
        let mut starts = Vec::new();
        let mut start = n - self.window;
        loop {
            starts.push(start);
            if start == 0 {
                break;
            }
            start = start.saturating_sub(self.stride);
        }
        starts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankerConfig {
    pub task: Task,
    /// Maximum concurrent backend calls.
    pub parallelism: usize,
    pub listwise: ListwiseParams,
}

impl Default for RerankerConfig {
    fn default() -> Self {
        RerankerConfig {
            task: Task::Passage,
            parallelism: 1,
            listwise: ListwiseParams::default(),
        }
    }
}

/// A ranking plus how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOutcome {
    pub list: RankedList,
    pub calls: usize,
    pub failed_calls: usize,
    /// Items or windows that fell back to a neutral outcome.
    pub degraded: usize,
}

/// Relevance score: 1 + P(yes) for yes, 1 - P(no) for no, 1 otherwise.
pub fn relevance_score(verdict: &PointwiseVerdict) -> f64 {
    match verdict.label {
        Label::Yes => 1.0 + verdict.label_probability,
        Label::No => 1.0 - verdict.label_probability,
        Label::Other => 1.0,
    }
}

/// Maps a pairwise answer to c in {1, 0, 0.5}.
pub fn choice_value(choice: PairwiseChoice) -> f64 {
    match choice {
        PairwiseChoice::First => 1.0,
        PairwiseChoice::Second => 0.0,
        PairwiseChoice::Neither => 0.5,
    }
}

/// Runs ranking strategies against one backend.
pub struct Reranker {
    backend: Arc<dyn Backend>,
    templates: Arc<TemplateSet>,
    counter: Arc<CallCounter>,
    config: RerankerConfig,
    pool: rayon::ThreadPool,
}

const POINTWISE_TOKENS: u32 = 4;
const PAIRWISE_TOKENS: u32 = 8;

impl Reranker {
    pub fn new(
        backend: Arc<dyn Backend>,
        templates: Arc<TemplateSet>,
        counter: Arc<CallCounter>,
        config: RerankerConfig,
    ) -> Result<Self, RankError> {
        if config.parallelism == 0 {
            return Err(RankError::InvalidInput("parallelism must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallelism)
            .thread_name(|i| format!("rerank-{i}"))
            .build()
            .map_err(|e| RankError::Pool(e.to_string()))?;
        Ok(Reranker {
            backend,
            templates,
            counter,
            config,
            pool,
        })
    }

    pub fn config(&self) -> &RerankerConfig {
        &self.config
    }

    pub fn counter(&self) -> &Arc<CallCounter> {
        &self.counter
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    /// Runs `f` on the reranker's thread pool.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }

    pub fn rank(&self, strategy: Strategy, candidates: &CandidateSet) -> Result<RankOutcome, RankError> {
        match strategy {
            Strategy::PointwiseRg => self.rank_pointwise_rg(candidates),
            Strategy::PointwiseQg => self.rank_pointwise_qg(candidates),
            Strategy::PairwiseAllPair => self.rank_pairwise_allpair(candidates),
            Strategy::Listwise => {
                self.rank_listwise_window(candidates, self.config.listwise.scaled_to(candidates.len()))
            }
        }
    }

    fn call(&self, strategy: Strategy, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        let started = Instant::now();
        let result = self.backend.generate(request);
        self.counter
            .count_call(strategy.tag(), started.elapsed(), result.is_ok());
        if let Err(e) = &result {
            warn!("{} call failed: {e}", strategy.tag());
        }
        result
    }

    fn call_all(
        &self,
        strategy: Strategy,
        requests: &[GenerationRequest],
    ) -> Vec<Result<GenerationResult, BackendError>> {
        self.pool
            .install(|| requests.par_iter().map(|r| self.call(strategy, r)).collect())
    }

    fn template(&self, kind: TemplateKind) -> &crate::prompts::InstructionTemplate {
        self.templates.get(kind, self.config.task)
    }

    fn finish(
        &self,
        strategy: Strategy,
        candidates: &CandidateSet,
        scores: &[f64],
        calls: usize,
        failed_calls: usize,
        degraded: usize,
    ) -> Result<RankOutcome, RankError> {
        self.counter.count_degraded(strategy.tag(), degraded as u64);
        let list = scores_to_ranking(&candidates.query().query_id, scores, &candidates.doc_ids())?;
        Ok(RankOutcome {
            list,
            calls,
            failed_calls,
            degraded,
        })
    }

    /// One Yes/No call per candidate.
    pub fn rank_pointwise_rg(&self, candidates: &CandidateSet) -> Result<RankOutcome, RankError> {
        let template = self.template(TemplateKind::PointwiseRg);
        let options = self.config.task.yes_no_options();
        let requests = candidates
            .docs()
            .iter()
            .map(|d| {
                Ok(
                    GenerationRequest::text(render(template, candidates.query(), &[d])?, POINTWISE_TOKENS)
                        .with_options(options),
                )
            })
            .collect::<Result<Vec<_>, PromptError>>()?;
        let results = self.call_all(Strategy::PointwiseRg, &requests);
        let mut failed = 0;
        let mut degraded = 0;
        let mut logged_missing_probs = false;
        let scores: Vec<f64> = results
            .iter()
            .map(|r| match r {
                Ok(result) => {
                    let probs = result.option_probs.clone().unwrap_or_default();
                    if probs.is_empty() && !logged_missing_probs {
                        warn!("backend returned no option probabilities; pointwise scores degrade to {{0, 1, 2}}");
                        logged_missing_probs = true;
                    }
                    let verdict = parse_yes_no(&result.text, &probs);
                    if verdict.label == Label::Other {
                        degraded += 1;
                    }
                    relevance_score(&verdict)
                }
                Err(_) => {
                    failed += 1;
                    degraded += 1;
                    1.0
                }
            })
            .collect();
        self.finish(
            Strategy::PointwiseRg,
            candidates,
            &scores,
            requests.len(),
            failed,
            degraded,
        )
    }

    /// One query-likelihood call per candidate; the score is the mean token
    /// log-probability of the query. Candidates whose call fails are placed
    /// below every scored candidate.
    pub fn rank_pointwise_qg(&self, candidates: &CandidateSet) -> Result<RankOutcome, RankError> {
        if !self.backend.capabilities().token_logprobs {
            return Err(RankError::Capability(
                "query-generation scoring needs token log-probabilities".into(),
            ));
        }
        let template = self.template(TemplateKind::PointwiseQg);
        let query = candidates.query();
        let requests = candidates
            .docs()
            .iter()
            .map(
                |d| Ok(GenerationRequest::text(render(template, query, &[d])?, 1).with_echo_target(query.text.clone())),
            )
            .collect::<Result<Vec<_>, PromptError>>()?;
        let results = self.call_all(Strategy::PointwiseQg, &requests);
        let mut failed = 0;
        let mut scores: Vec<Option<f64>> = Vec::with_capacity(results.len());
        for r in &results {
            match r {
                Ok(result) => match result.target_token_logprobs.as_deref() {
                    None => {
                        return Err(RankError::Capability(
                            "backend returned no target token log-probabilities".into(),
                        ))
                    }
                    Some([]) => scores.push(None),
                    Some(lps) => scores.push(Some(lps.iter().sum::<f64>() / lps.len() as f64)),
                },
                Err(_) => {
                    failed += 1;
                    scores.push(None);
                }
            }
        }
        let floor = scores.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let floor = if floor.is_finite() { floor - 1.0 } else { -1.0 };
        let degraded = scores.iter().filter(|s| s.is_none()).count();
        let scores: Vec<f64> = scores.into_iter().map(|s| s.unwrap_or(floor)).collect();
        self.finish(
            Strategy::PointwiseQg,
            candidates,
            &scores,
            requests.len(),
            failed,
            degraded,
        )
    }

    fn pair_request(
        &self,
        query: &Query,
        first: &Document,
        second: &Document,
    ) -> Result<GenerationRequest, PromptError> {
        let prompt = render(self.template(TemplateKind::Pairwise), query, &[first, second])?;
        Ok(GenerationRequest::text(prompt, PAIRWISE_TOKENS))
    }

    /// c(i, j) for one presentation order; failures and unreadable answers give 0.5.
    pub fn compare_pair(&self, query: &Query, first: &Document, second: &Document) -> Result<f64, RankError> {
        let request = self.pair_request(query, first, second)?;
        Ok(match self.call(Strategy::PairwiseAllPair, &request) {
            Ok(r) => choice_value(parse_pair_choice(&r.text)),
            Err(_) => 0.5,
        })
    }

    /// The full comparison matrix: both presentation orders of every pair.
    pub fn comparison_matrix(&self, candidates: &CandidateSet) -> Result<(ComparisonMatrix, usize, usize), RankError> {
        let n = candidates.len();
        let docs = candidates.docs();
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        let requests = pairs
            .iter()
            .map(|&(i, j)| self.pair_request(candidates.query(), &docs[i], &docs[j]))
            .collect::<Result<Vec<_>, _>>()?;
        let results = self.call_all(Strategy::PairwiseAllPair, &requests);
        let mut matrix = ComparisonMatrix::new(n);
        let mut failed = 0;
        let mut neither = 0;
        for (&(i, j), r) in pairs.iter().zip(&results) {
            let value = match r {
                Ok(result) => {
                    let choice = parse_pair_choice(&result.text);
                    if choice == PairwiseChoice::Neither {
                        neither += 1;
                    }
                    choice_value(choice)
                }
                Err(_) => {
                    failed += 1;
                    0.5
                }
            };
            matrix.set(i, j, value)?;
        }
        Ok((matrix, failed, neither + failed))
    }

    /// n(n-1) calls; s_i = sum over j of c(i,j) + 1 - c(j,i).
    pub fn rank_pairwise_allpair(&self, candidates: &CandidateSet) -> Result<RankOutcome, RankError> {
        let n = candidates.len();
        let (matrix, failed, degraded) = self.comparison_matrix(candidates)?;
        self.finish(
            Strategy::PairwiseAllPair,
            candidates,
            &matrix.scores(),
            n * (n - 1),
            failed,
            degraded,
        )
    }

    /// Back-to-front sliding windows; each window is re-ordered by the parsed
    /// permutation. Final scores are 1 / rank.
    pub fn rank_listwise_window(
        &self,
        candidates: &CandidateSet,
        params: ListwiseParams,
    ) -> Result<RankOutcome, RankError> {
        let n = candidates.len();
        if n == 1 {
            return self.finish(Strategy::Listwise, candidates, &[1.0], 0, 0, 0);
        }
        params.validate(n)?;
        let template = self.template(TemplateKind::Listwise);
        let docs = candidates.docs();
        let mut order: Vec<usize> = (0..n).collect();
        let (mut calls, mut failed, mut degraded) = (0, 0, 0);
        for _ in 0..params.passes {
            for start in params.window_starts(n) {
                let window = &mut order[start..start + params.window];
                let items: Vec<&Document> = window.iter().map(|&i| &docs[i]).collect();
                let prompt = render(template, candidates.query(), &items)?;
                let request = GenerationRequest::text(prompt, 16 + 6 * params.window as u32);
                calls += 1;
                match self.call(Strategy::Listwise, &request) {
                    Ok(result) => {
                        let perm = parse_permutation(&result.text, params.window);
                        if perm.repaired {
                            degraded += 1;
                        }
                        let reordered: Vec<usize> = perm.order.iter().map(|&k| window[k - 1]).collect();
                        window.copy_from_slice(&reordered);
                    }
                    Err(_) => {
                        failed += 1;
                        degraded += 1;
                    }
                }
            }
        }
        let mut scores = vec![0.0; n];
        for (pos, &i) in order.iter().enumerate() {
            scores[i] = 1.0 / (pos + 1) as f64;
        }
        self.finish(Strategy::Listwise, candidates, &scores, calls, failed, degraded)
    }
}

#[cfg(test)]
mod tests;
