use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{validate_queries, Corpus, CorpusError, Document, Query, Stopwords};

fn open(path: &Path) -> Result<BufReader<File>, CorpusError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CorpusError::io(path, e))
}

fn parse_err(source: &str, line: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::Parse {
        path: source.to_string(),
        line,
        message: message.into(),
    }
}

/// Iterates non-blank lines with 1-based line numbers.
fn lines<'a, R: BufRead + 'a>(
    reader: R,
    source: &'a str,
) -> impl Iterator<Item = Result<(usize, String), CorpusError>> + 'a {
    reader
        .lines()
        .enumerate()
        .map(move |(i, l)| {
            l.map(|l| (i + 1, l)).map_err(|e| CorpusError::Io {
                path: source.to_string(),
                source: e,
            })
        })
        .filter(|r| !matches!(r, Ok((_, l)) if l.trim().is_empty()))
}

/// JSON-lines corpus: `{"doc_id": str, "title": str?, "text": str}` per line.
pub fn load_corpus(path: &Path, stopwords: Stopwords) -> Result<Corpus, CorpusError> {
    parse_corpus(open(path)?, &path.display().to_string(), stopwords)
}

pub fn parse_corpus<R: BufRead>(reader: R, source: &str, stopwords: Stopwords) -> Result<Corpus, CorpusError> {
    let mut docs = Vec::new();
    for item in lines(reader, source) {
        let (no, line) = item?;
        let doc: Document = serde_json::from_str(&line).map_err(|e| parse_err(source, no, e.to_string()))?;
        docs.push(doc);
    }
    Corpus::new(docs, stopwords)
}

/// Queries as TSV (`query_id<TAB>text`) or JSON-lines (`{"query_id", "text"}`),
/// detected per line by a leading `{`.
pub fn load_queries(path: &Path) -> Result<Vec<Query>, CorpusError> {
    parse_queries(open(path)?, &path.display().to_string())
}

pub fn parse_queries<R: BufRead>(reader: R, source: &str) -> Result<Vec<Query>, CorpusError> {
    let mut queries = Vec::new();
    for item in lines(reader, source) {
        let (no, line) = item?;
        let query = if line.trim_start().starts_with('{') {
            serde_json::from_str::<Query>(&line).map_err(|e| parse_err(source, no, e.to_string()))?
        } else {
            let (id, text) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(source, no, "expected `query_id<TAB>text`"))?;
            Query::new(id.trim(), text.trim_end_matches(['\r', '\n']))
        };
        if query.query_id.is_empty() {
            return Err(parse_err(source, no, "empty query_id"));
        }
        queries.push(query);
    }
    validate_queries(&queries)?;
    Ok(queries)
}

/// Graded relevance judgments keyed by query then document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a judgment; returns `false` (leaving the existing grade) if the
    /// pair was already judged.
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) -> bool {
        let docs = self.judgments.entry(query_id.to_string()).or_default();
        if docs.contains_key(doc_id) {
            return false;
        }
        docs.insert(doc_id.to_string(), grade);
        true
    }

    /// Grade of a document, 0 when unjudged.
    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.judgments
            .get(query_id)
            .and_then(|d| d.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.judgments
            .iter()
            .flat_map(|(q, docs)| docs.iter().map(move |(d, &g)| (q.as_str(), d.as_str(), g)))
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// TREC qrels text, `qid 0 docid grade` per line.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (q, d, g) in self.iter() {
            writeln!(out, "{q} 0 {d} {g}")?;
        }
        Ok(())
    }
}

/// TREC qrels: `qid 0 docid grade`, whitespace separated.
pub fn load_qrels(path: &Path) -> Result<Qrels, CorpusError> {
    parse_qrels(open(path)?, &path.display().to_string())
}

pub fn parse_qrels<R: BufRead>(reader: R, source: &str) -> Result<Qrels, CorpusError> {
    let mut qrels = Qrels::new();
    for item in lines(reader, source) {
        let (no, line) = item?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [qid, _iter, docid, grade] = fields[..] else {
            return Err(parse_err(
                source,
                no,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        };
        let grade: u32 = grade
            .parse()
            .map_err(|_| parse_err(source, no, format!("invalid grade `{grade}`")))?;
        if !qrels.insert(qid, docid, grade) {
            return Err(parse_err(
                source,
                no,
                format!("duplicate judgment for ({qid}, {docid})"),
            ));
        }
    }
    Ok(qrels)
}

/// One line of a TREC run file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLine {
    pub query_id: String,
    pub doc_id: String,
    pub rank: usize,
    pub score: f64,
}

/// Writes `qid Q0 docid rank score tag` lines; scores with 6 decimals.
pub fn write_run<W: Write>(mut out: W, lines: &[RunLine], tag: &str) -> std::io::Result<()> {
    for l in lines {
        writeln!(out, "{} Q0 {} {} {:.6} {}", l.query_id, l.doc_id, l.rank, l.score, tag)?;
    }
    Ok(())
}

pub fn read_run<R: BufRead>(reader: R, source: &str) -> Result<Vec<RunLine>, CorpusError> {
    let mut out = Vec::new();
    for item in lines(reader, source) {
        let (no, line) = item?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [qid, _q0, docid, rank, score, _tag] = fields[..] else {
            return Err(parse_err(
                source,
                no,
                format!("expected 6 fields, found {}", fields.len()),
            ));
        };
        let rank: usize = rank
            .parse()
            .ok()
            .filter(|&r| r >= 1)
            .ok_or_else(|| parse_err(source, no, format!("invalid rank `{rank}`")))?;
        let score: f64 = score
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| parse_err(source, no, format!("invalid score `{score}`")))?;
        out.push(RunLine {
            query_id: qid.to_string(),
            doc_id: docid.to_string(),
            rank,
            score,
        });
    }
    Ok(out)
}

pub fn load_run(path: &Path) -> Result<Vec<RunLine>, CorpusError> {
    read_run(open(path)?, &path.display().to_string())
}
