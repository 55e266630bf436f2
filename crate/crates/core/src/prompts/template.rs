use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PromptError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    PointwiseRg,
    PointwiseQg,
    Pairwise,
    Listwise,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 4] = [
        TemplateKind::PointwiseRg,
        TemplateKind::PointwiseQg,
        TemplateKind::Pairwise,
        TemplateKind::Listwise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateKind::PointwiseRg => "pointwise_rg",
            TemplateKind::PointwiseQg => "pointwise_qg",
            TemplateKind::Pairwise => "pairwise",
            TemplateKind::Listwise => "listwise",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Passage,
    Movie,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Passage, Task::Movie];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Passage => "passage",
            Task::Movie => "movie",
        }
    }

    /// Placeholder stem for items: `passage` or `movie`.
    pub fn item_slot(self) -> &'static str {
        self.as_str()
    }

    /// The affirmative and negative answer strings the pointwise template asks for.
    pub fn yes_no_options(self) -> [&'static str; 2] {
        match self {
            Task::Passage => ["Yes", "No"],
            Task::Movie => ["Y", "N"],
        }
    }

    /// Answer strings naming the first and second item of a pairwise prompt.
    pub fn pair_answers(self) -> [&'static str; 2] {
        match self {
            Task::Passage => ["Passage A", "Passage B"],
            Task::Movie => ["A", "B"],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "passage" => Ok(Task::Passage),
            "movie" => Ok(Task::Movie),
            other => Err(PromptError::Template(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(String),
}

fn parse_segments(text: &str) -> Result<Vec<Segment>, PromptError> {
    let mut segments = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        if start > 0 {
            segments.push(Segment::Literal(rest[..start].to_string()));
        }
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or_else(|| PromptError::Template("unterminated `{{` placeholder".into()))?;
        let name = &after[..end];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(PromptError::Template(format!("invalid placeholder `{{{{{name}}}}}`")));
        }
        segments.push(Segment::Slot(name.to_string()));
        rest = &after[end + 2..];
    }
    if !rest.is_empty() {
        segments.push(Segment::Literal(rest.to_string()));
    }
    Ok(segments)
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Body {
    Flat(Vec<Segment>),
    /// `head`, then `[1]: item` lines joined by `separator`, then `tail`.
    List {
        head: Vec<Segment>,
        separator: String,
        tail: Vec<Segment>,
    },
}

/// Values substituted into a template, or recovered from a rendered prompt.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SlotValues {
    pub query: Option<String>,
    pub items: Vec<String>,
}

/// One instruction template with `{{...}}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionTemplate {
    kind: TemplateKind,
    task: Task,
    text: String,
    body: Body,
}

impl InstructionTemplate {
    pub fn parse(kind: TemplateKind, task: Task, text: &str) -> Result<Self, PromptError> {
        let segments = parse_segments(text)?;
        let stem = task.item_slot();
        let slots: Vec<&str> = segments
            .iter()
            .filter_map(|s| match s {
                Segment::Slot(n) => Some(n.as_str()),
                Segment::Literal(_) => None,
            })
            .collect();
        let required: Vec<String> = match kind {
            TemplateKind::PointwiseRg => vec!["query".into(), stem.into()],
            TemplateKind::PointwiseQg => vec![stem.into()],
            TemplateKind::Pairwise => {
                vec!["query".into(), format!("{stem}_A"), format!("{stem}_B")]
            }
            TemplateKind::Listwise => vec!["query".into(), format!("{stem}_1"), format!("{stem}_2")],
        };
        let found: BTreeSet<&str> = slots.iter().copied().collect();
        let expected: BTreeSet<&str> = required.iter().map(String::as_str).collect();
        if found != expected || slots.len() != required.len() {
            return Err(PromptError::Template(format!(
                "{} {} template must contain each of {:?} exactly once, found {:?}",
                task.as_str(),
                kind.as_str(),
                required,
                slots
            )));
        }
        let body = match kind {
            TemplateKind::Listwise => split_list(segments, stem)?,
            _ => Body::Flat(segments),
        };
        Ok(InstructionTemplate {
            kind,
            task,
            text: text.to_string(),
            body,
        })
    }

    pub fn kind(&self) -> TemplateKind {
        self.kind
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Substitutes the query and item texts. Placeholder syntax appearing inside
    /// the substituted values is left untouched.
    pub fn render(&self, query: &str, items: &[&str]) -> Result<String, PromptError> {
        let expected_ok = match self.kind {
            TemplateKind::PointwiseRg | TemplateKind::PointwiseQg => items.len() == 1,
            TemplateKind::Pairwise => items.len() == 2,
            TemplateKind::Listwise => items.len() >= 2,
        };
        if !expected_ok {
            return Err(PromptError::ItemCount {
                kind: self.kind.as_str(),
                got: items.len(),
            });
        }
        let stem = self.task.item_slot();
        let lookup = |name: &str| -> &str {
            if name == "query" {
                return query;
            }
            match name.strip_prefix(stem).and_then(|s| s.strip_prefix('_')) {
                Some("A") => items[0],
                Some("B") => items[1],
                _ => items[0],
            }
        };
        let mut out = String::with_capacity(self.text.len() + items.iter().map(|i| i.len() + 8).sum::<usize>());
        let push = |out: &mut String, segs: &[Segment]| {
            for s in segs {
                match s {
                    Segment::Literal(l) => out.push_str(l),
                    Segment::Slot(n) => out.push_str(lookup(n)),
                }
            }
        };
        match &self.body {
            Body::Flat(segs) => push(&mut out, segs),
            Body::List { head, separator, tail } => {
                push(&mut out, head);
                for (k, item) in items.iter().enumerate() {
                    if k > 0 {
                        out.push_str(separator);
                    }
                    out.push_str(&format!("[{}]: ", k + 1));
                    out.push_str(item);
                }
                push(&mut out, tail);
            }
        }
        Ok(out)
    }

    /// Recovers the substituted values from a prompt rendered with this
    /// template, or `None` if the prompt does not have this template's shape.
    /// Values containing the template's own literal text may be split wrongly.
    pub fn extract(&self, prompt: &str) -> Option<SlotValues> {
        let mut values = SlotValues::default();
        let stem = self.task.item_slot();
        match &self.body {
            Body::Flat(segs) => {
                let mut named = HashMap::new();
                match_segments(segs, prompt, true, &mut named)?;
                values.query = named.remove("query");
                if let Some(v) = named.remove(stem) {
                    values.items.push(v);
                }
                for suffix in ["A", "B"] {
                    if let Some(v) = named.remove(&format!("{stem}_{suffix}")) {
                        values.items.push(v);
                    }
                }
            }
            Body::List { head, separator, tail } => {
                let mut named = HashMap::new();
                let consumed = match_segments(head, prompt, false, &mut named)?;
                values.query = named.remove("query");
                let tail_text = literal_text(tail)?;
                let region = prompt.get(consumed..)?.strip_suffix(tail_text.as_str())?;
                let mut rest = region.strip_prefix("[1]: ")?;
                let mut k = 2;
                loop {
                    let marker = format!("{separator}[{k}]: ");
                    match rest.find(&marker) {
                        Some(pos) => {
                            values.items.push(rest[..pos].to_string());
                            rest = &rest[pos + marker.len()..];
                            k += 1;
                        }
                        None => {
                            values.items.push(rest.to_string());
                            break;
                        }
                    }
                }
            }
        }
        Some(values)
    }
}

fn literal_text(segs: &[Segment]) -> Option<String> {
    segs.iter()
        .map(|s| match s {
            Segment::Literal(l) => Some(l.as_str()),
            Segment::Slot(_) => None,
        })
        .collect::<Option<Vec<_>>>()
        .map(|v| v.concat())
}

/// Matches `segs` against the start of `prompt`, returning the bytes
/// consumed. With `anchored_end` the match must cover the whole prompt.
fn match_segments(
    segs: &[Segment],
    prompt: &str,
    anchored_end: bool,
    named: &mut HashMap<String, String>,
) -> Option<usize> {
    let mut pos = 0;
    for (i, seg) in segs.iter().enumerate() {
        match seg {
            Segment::Literal(l) => {
                if !prompt.get(pos..)?.starts_with(l.as_str()) {
                    return None;
                }
                pos += l.len();
            }
            Segment::Slot(name) => {
                let rest = prompt.get(pos..)?;
                let len = match segs.get(i + 1) {
                    Some(Segment::Literal(next)) if anchored_end && i + 2 == segs.len() => {
                        rest.strip_suffix(next.as_str())?.len()
                    }
                    Some(Segment::Literal(next)) => rest.find(next.as_str())?,
                    Some(Segment::Slot(_)) => return None,
                    None if anchored_end => rest.len(),
                    None => return None,
                };
                named.insert(name.clone(), rest[..len].to_string());
                pos += len;
            }
        }
    }
    if anchored_end && pos != prompt.len() {
        return None;
    }
    Some(pos)
}

fn split_list(segments: Vec<Segment>, stem: &str) -> Result<Body, PromptError> {
    let bad = |msg: &str| PromptError::Template(format!("listwise template: {msg}"));
    let first = format!("{stem}_1");
    let second = format!("{stem}_2");
    let i = segments
        .iter()
        .position(|s| *s == Segment::Slot(first.clone()))
        .ok_or_else(|| bad("missing first item slot"))?;
    if segments.get(i + 2) != Some(&Segment::Slot(second)) {
        return Err(bad("second item slot must follow the first"));
    }
    let (Some(Segment::Literal(before)), Some(Segment::Literal(between)), Some(Segment::Literal(after))) = (
        i.checked_sub(1).and_then(|j| segments.get(j)),
        segments.get(i + 1),
        segments.get(i + 3),
    ) else {
        return Err(bad("item slots must be surrounded by literal text"));
    };
    let head_lit = before
        .strip_suffix("[1]: ")
        .ok_or_else(|| bad("first item line must start with `[1]: `"))?;
    let separator = between
        .strip_suffix("[2]: ")
        .ok_or_else(|| bad("second item line must start with `[2]: `"))?
        .to_string();
    let tail_lit = after
        .strip_prefix(separator.as_str())
        .and_then(|s| s.strip_prefix("..."))
        .ok_or_else(|| bad("item lines must be followed by an `...` line"))?;

    let mut head: Vec<Segment> = segments[..i - 1].to_vec();
    if !head_lit.is_empty() {
        head.push(Segment::Literal(head_lit.to_string()));
    }
    let mut tail = Vec::new();
    if !tail_lit.is_empty() {
        tail.push(Segment::Literal(tail_lit.to_string()));
    }
    tail.extend(segments[i + 4..].iter().cloned());
    if literal_text(&tail).is_none() {
        return Err(bad("placeholders after the item list are not supported"));
    }
    Ok(Body::List { head, separator, tail })
}

/// The full set of templates, one per (kind, task).
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: HashMap<(TemplateKind, Task), InstructionTemplate>,
}

fn builtin_text(kind: TemplateKind, task: Task) -> &'static str {
    use TemplateKind::*;
    match (task, kind) {
        (Task::Passage, PointwiseRg) => include_str!("../../assets/templates/passage_pointwise_rg.txt"),
        (Task::Passage, PointwiseQg) => include_str!("../../assets/templates/passage_pointwise_qg.txt"),
        (Task::Passage, Pairwise) => include_str!("../../assets/templates/passage_pairwise.txt"),
        (Task::Passage, Listwise) => include_str!("../../assets/templates/passage_listwise.txt"),
        (Task::Movie, PointwiseRg) => include_str!("../../assets/templates/movie_pointwise_rg.txt"),
        (Task::Movie, PointwiseQg) => include_str!("../../assets/templates/movie_pointwise_qg.txt"),
        (Task::Movie, Pairwise) => include_str!("../../assets/templates/movie_pairwise.txt"),
        (Task::Movie, Listwise) => include_str!("../../assets/templates/movie_listwise.txt"),
    }
}

impl TemplateSet {
    /// The templates bundled with the crate.
    pub fn builtin() -> Self {
        let mut templates = HashMap::new();
        for task in Task::ALL {
            for kind in TemplateKind::ALL {
                let t = InstructionTemplate::parse(kind, task, builtin_text(kind, task))
                    .expect("bundled templates are valid");
                templates.insert((kind, task), t);
            }
        }
        TemplateSet { templates }
    }

    /// Built-in templates overridden by any `{task}_{kind}.txt` files found in
    /// `dir`. One trailing newline is stripped from each file.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::builtin();
        for task in Task::ALL {
            for kind in TemplateKind::ALL {
                let path = dir.join(format!("{}_{}.txt", task.as_str(), kind.as_str()));
                if !path.exists() {
                    continue;
                }
                let raw = fs::read_to_string(&path)
                    .map_err(|e| PromptError::Template(format!("cannot read {}: {e}", path.display())))?;
                let text = raw
                    .strip_suffix("\r\n")
                    .or_else(|| raw.strip_suffix('\n'))
                    .unwrap_or(&raw);
                set.templates
                    .insert((kind, task), InstructionTemplate::parse(kind, task, text)?);
            }
        }
        Ok(set)
    }

    pub fn get(&self, kind: TemplateKind, task: Task) -> &InstructionTemplate {
        &self.templates[&(kind, task)]
    }

    /// Identifies which template produced `prompt` and recovers its values.
    pub fn identify(&self, prompt: &str) -> Option<(&InstructionTemplate, SlotValues)> {
        let mut keys: Vec<_> = self.templates.keys().copied().collect();
        keys.sort();
        keys.into_iter().find_map(|key| {
            let t = &self.templates[&key];
            t.extract(prompt).map(|v| (t, v))
        })
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}
