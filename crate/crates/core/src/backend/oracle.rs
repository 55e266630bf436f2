use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, Capabilities, GenerationRequest, GenerationResult};
use crate::corpus::{Corpus, Qrels, Query};
use crate::prompts::{Task, TemplateKind, TemplateSet};

/// Noise model of the synthetic judge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub seed: u64,
    /// Probability that a pairwise comparison follows the true grades; also
    /// 1 minus the per-adjacent-pair swap probability in listwise answers.
    pub accuracy: f64,
    /// Probability of naming the first-listed item regardless of content.
    pub position_bias: f64,
    /// Probability of answering "neither" to a pairwise prompt.
    pub tie_rate: f64,
    /// Standard deviation of Gaussian noise on pointwise probabilities and
    /// token log-probabilities.
    pub pointwise_noise: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            seed: 0,
            accuracy: 1.0,
            position_bias: 0.0,
            tie_rate: 0.0,
            pointwise_noise: 0.0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: String| Err(BackendError::InvalidRequest(m));
        if !(0.5..=1.0).contains(&self.accuracy) {
            return bad(format!("oracle accuracy must lie in [0.5,1], got {}", self.accuracy));
        }
        if !(0.0..=1.0).contains(&self.position_bias) {
            return bad(format!("position bias must lie in [0,1], got {}", self.position_bias));
        }
        if !(0.0..=1.0).contains(&self.tie_rate) {
            return bad(format!("tie rate must lie in [0,1], got {}", self.tie_rate));
        }
        if !(self.pointwise_noise.is_finite() && self.pointwise_noise >= 0.0) {
            return bad(format!(
                "pointwise noise must be non-negative, got {}",
                self.pointwise_noise
            ));
        }
        Ok(())
    }
}

/// Prompt shape as seen by the oracle.
pub type PromptKind = TemplateKind;

fn rng_for(seed: u64, request: &GenerationRequest) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(request.canonical_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

/// Baseline P(yes) for a grade, before noise.
fn yes_probability(grade: u32) -> f64 {
    if grade == 0 {
        0.2
    } else {
        0.5 + 0.35 * f64::from(grade.min(3)) / 3.0
    }
}

/// Baseline per-token log-likelihood of the query for a grade, before noise.
fn query_logprob(grade: u32) -> f64 {
    (0.1 + 0.25 * f64::from(grade.min(3))).ln()
}

fn is_affirmative(option: &str) -> bool {
    matches!(option.trim().to_lowercase().as_str(), "yes" | "y")
}

/// Answers one prompt whose items have the given true grades (prompt order).
/// A pure function of `(config, request, kind, task, grades)`.
pub fn oracle_answer(
    request: &GenerationRequest,
    kind: PromptKind,
    task: Task,
    grades: &[u32],
    config: &OracleConfig,
) -> GenerationResult {
    let mut rng = rng_for(config.seed, request);
    match kind {
        TemplateKind::PointwiseRg => {
            let grade = grades.first().copied().unwrap_or(0);
            let noise: f64 = rng.sample(StandardNormal);
            let p_yes = (yes_probability(grade) + config.pointwise_noise * noise).clamp(0.0, 1.0);
            let [yes_text, no_text] = task.yes_no_options();
            let (yes_text, no_text) = match &request.options {
                Some(opts) => (
                    opts.iter().find(|o| is_affirmative(o)).map_or(yes_text, String::as_str),
                    opts.iter().find(|o| !is_affirmative(o)).map_or(no_text, String::as_str),
                ),
                None => (yes_text, no_text),
            };
            // The answer is the more likely option, as greedy decoding would pick.
            let text = if p_yes >= 0.5 { yes_text } else { no_text };
            let option_probs = request.options.as_ref().map(|opts| {
                opts.iter()
                    .map(|o| {
                        let p = if o == yes_text {
                            p_yes
                        } else if o == no_text {
                            1.0 - p_yes
                        } else {
                            0.0
                        };
                        (o.clone(), p)
                    })
                    .collect::<BTreeMap<_, _>>()
            });
            GenerationResult {
                text: text.to_string(),
                option_probs,
                target_token_logprobs: None,
            }
        }
        TemplateKind::PointwiseQg => {
            let grade = grades.first().copied().unwrap_or(0);
            let target = request.echo_target.as_deref().unwrap_or("");
            let logprobs = target
                .split_whitespace()
                .map(|_| {
                    let noise: f64 = rng.sample(StandardNormal);
                    (query_logprob(grade) + config.pointwise_noise * noise).min(0.0)
                })
                .collect();
            GenerationResult {
                text: String::new(),
                option_probs: None,
                target_token_logprobs: Some(logprobs),
            }
        }
        TemplateKind::Pairwise => {
            let [first, second] = task.pair_answers();
            let (a, b) = (
                grades.first().copied().unwrap_or(0),
                grades.get(1).copied().unwrap_or(0),
            );
            let tie: f64 = rng.random();
            let biased: f64 = rng.random();
            let honest: f64 = rng.random();
            let coin: bool = rng.random();
            let text = if tie < config.tie_rate {
                "Neither"
            } else if biased < config.position_bias {
                first
            } else {
                let truth = a.cmp(&b);
                let follow = honest < config.accuracy;
                match (truth, follow) {
                    (std::cmp::Ordering::Greater, true) | (std::cmp::Ordering::Less, false) => first,
                    (std::cmp::Ordering::Less, true) | (std::cmp::Ordering::Greater, false) => second,
                    (std::cmp::Ordering::Equal, true) => "Neither",
                    (std::cmp::Ordering::Equal, false) => {
                        if coin {
                            first
                        } else {
                            second
                        }
                    }
                }
            };
            GenerationResult::text(text)
        }
        TemplateKind::Listwise => {
            let mut order: Vec<usize> = (0..grades.len()).collect();
            order.sort_by(|&i, &j| grades[j].cmp(&grades[i]));
            for i in 0..order.len().saturating_sub(1) {
                let swap: f64 = rng.random();
                if swap < 1.0 - config.accuracy {
                    order.swap(i, i + 1);
                }
            }
            let text = order
                .iter()
                .map(|i| format!("[{}]", i + 1))
                .collect::<Vec<_>>()
                .join(" > ");
            GenerationResult::text(text)
        }
    }
}

/// Lookup tables that map prompt text back to judged documents.
#[derive(Debug, Clone, Default)]
pub struct OracleTruth {
    query_by_text: HashMap<String, String>,
    doc_by_content: HashMap<String, String>,
    qrels: Qrels,
}

impl OracleTruth {
    pub fn new(queries: &[Query], corpus: &Corpus, qrels: Qrels) -> Self {
        let mut query_by_text = HashMap::new();
        for q in queries {
            query_by_text
                .entry(q.text.clone())
                .or_insert_with(|| q.query_id.clone());
        }
        let mut doc_by_content = HashMap::new();
        for d in corpus.documents() {
            doc_by_content.entry(d.content()).or_insert_with(|| d.doc_id.clone());
        }
        OracleTruth {
            query_by_text,
            doc_by_content,
            qrels,
        }
    }

    fn grade(&self, query_id: Option<&str>, item_text: &str) -> u32 {
        match (query_id, self.doc_by_content.get(item_text)) {
            (Some(q), Some(d)) => self.qrels.grade(q, d),
            _ => 0,
        }
    }
}

/// Deterministic synthetic judge that answers rendered prompts from relevance
/// judgments.
pub struct OracleBackend {
    config: OracleConfig,
    templates: TemplateSet,
    truth: OracleTruth,
}

impl OracleBackend {
    pub fn new(config: OracleConfig, templates: TemplateSet, truth: OracleTruth) -> Result<Self, BackendError> {
        config.validate()?;
        Ok(OracleBackend {
            config,
            templates,
            truth,
        })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }
}

impl Backend for OracleBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        request.validate()?;
        let (template, values) = self
            .templates
            .identify(&request.prompt)
            .ok_or_else(|| BackendError::InvalidRequest("oracle cannot parse prompt".into()))?;
        let query_text = match template.kind() {
            TemplateKind::PointwiseQg => request.echo_target.clone(),
            _ => values.query.clone(),
        };
        let query_id = query_text.and_then(|t| self.truth.query_by_text.get(&t).cloned());
        let grades: Vec<u32> = values
            .items
            .iter()
            .map(|item| self.truth.grade(query_id.as_deref(), item))
            .collect();
        Ok(oracle_answer(
            request,
            template.kind(),
            template.task(),
            &grades,
            &self.config,
        ))
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::ALL
    }
}
