//! Instruction templates and parsers for model answers.
//!
//! Templates are plain UTF-8 assets with `{{query}}`, `{{passage}}`,
//! `{{passage_A}}`/`{{passage_B}}` (or the `movie` equivalents) and, for
//! listwise prompts, a numbered `[1]: ... [2]: ... ...` block that is expanded
//! to as many items as are given.

mod template;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Query};

pub use template::{InstructionTemplate, SlotValues, Task, TemplateKind, TemplateSet};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("template error: {0}")]
    Template(String),
    #[error("{kind} prompt cannot take {got} item(s)")]
    ItemCount { kind: &'static str, got: usize },
}

/// Renders a template for a query and its candidate documents.
pub fn render(template: &InstructionTemplate, query: &Query, items: &[&Document]) -> Result<String, PromptError> {
    let texts: Vec<String> = items.iter().map(|d| d.content()).collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    template.render(&query.text, &refs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Yes,
    No,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointwiseVerdict {
    pub label: Label,
    /// Probability of the emitted label; 1.0 when the backend gave none.
    pub label_probability: f64,
}

fn first_alpha_word(text: &str) -> Option<&str> {
    let start = text.find(|c: char| c.is_alphabetic())?;
    let rest = &text[start..];
    let end = rest.find(|c: char| !c.is_alphabetic()).unwrap_or(rest.len());
    Some(&rest[..end])
}

fn lookup_prob(option_probs: &BTreeMap<String, f64>, label: Label) -> Option<f64> {
    let accepted: &[&str] = match label {
        Label::Yes => &["yes", "y"],
        Label::No => &["no", "n"],
        Label::Other => return None,
    };
    option_probs
        .iter()
        .find(|(k, _)| accepted.contains(&k.trim().to_lowercase().as_str()))
        .map(|(_, &p)| p.clamp(0.0, 1.0))
}

/// Reads a Yes/No answer. The label comes from the first alphabetic word;
/// its probability comes from `option_probs` when the backend supplied them.
pub fn parse_yes_no(text: &str, option_probs: &BTreeMap<String, f64>) -> PointwiseVerdict {
    let label = match first_alpha_word(text).map(str::to_lowercase).as_deref() {
        Some("yes" | "y") => Label::Yes,
        Some("no" | "n") => Label::No,
        _ => Label::Other,
    };
    let label_probability = match label {
        Label::Other => 0.0,
        _ => lookup_prob(option_probs, label).unwrap_or(1.0),
    };
    PointwiseVerdict {
        label,
        label_probability,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairwiseChoice {
    First,
    Second,
    Neither,
}

/// Reads which of two items the model picked. `passage a`/`movie a` phrases
/// take precedence over a bare `a`/`b` word; the first occurrence wins.
pub fn parse_pair_choice(text: &str) -> PairwiseChoice {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    let letter = |w: &str| match w {
        "a" => Some(PairwiseChoice::First),
        "b" => Some(PairwiseChoice::Second),
        _ => None,
    };
    let phrase = words.windows(2).find_map(|w| match w[0] {
        "passage" | "movie" => letter(w[1]),
        _ => None,
    });
    phrase
        .or_else(|| words.iter().find_map(|w| letter(w)))
        .unwrap_or(PairwiseChoice::Neither)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationParse {
    /// 1-based item identifiers, best first; always a permutation of 1..=n.
    pub order: Vec<usize>,
    pub repaired: bool,
}

/// Reads a ranking such as `[2] > [3] > [1]`. Out-of-range and repeated
/// identifiers are dropped and missing ones appended in ascending order.
pub fn parse_permutation(text: &str, n: usize) -> PermutationParse {
    let mut seen = vec![false; n + 1];
    let mut order = Vec::with_capacity(n);
    let mut repaired = false;
    for run in text.split(|c: char| !c.is_ascii_digit()).filter(|r| !r.is_empty()) {
        match run.parse::<usize>() {
            Ok(id) if (1..=n).contains(&id) && !seen[id] => {
                seen[id] = true;
                order.push(id);
            }
            _ => repaired = true,
        }
    }
    for (id, present) in seen.iter().enumerate().skip(1) {
        if !present {
            order.push(id);
            repaired = true;
        }
    }
    PermutationParse { order, repaired }
}
