//! Deterministic synthetic benchmark data.
//!
//! [`passage_suite`] builds queries with graded documents whose lexical
//! overlap with the query grows with the grade, so term-matching features
//! carry real but imperfect signal. [`movie_catalog`] builds a small movie
//! catalog with mention counts and dialog queries for candidate-pool tests.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Qrels, Query, Stopwords};

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Distinct pronounceable pseudo-words (three consonant-vowel syllables),
/// none of them a stopword, in a seeded random order.
fn pseudo_words(count: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let syllables: Vec<String> = CONSONANTS
        .iter()
        .flat_map(|&c| VOWELS.iter().map(move |&v| format!("{}{}", c as char, v as char)))
        .collect();
    let stop = Stopwords::english();
    let mut seen = BTreeSet::new();
    let mut words = Vec::with_capacity(count);
    while words.len() < count {
        let w: String = (0..3)
            .map(|_| syllables[rng.random_range(0..syllables.len())].as_str())
            .collect();
        if !stop.contains(&w) && seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub seed: u64,
    pub train_queries: usize,
    pub test_queries: usize,
    /// Query terms per query.
    pub query_terms: usize,
    /// Grades of the documents written for each query.
    pub grade_counts: [usize; 4],
    pub background_vocab: usize,
    pub min_doc_len: usize,
    pub max_doc_len: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 42,
            train_queries: 200,
            test_queries: 50,
            query_terms: 3,
            // grade 0, 1, 2, 3
            grade_counts: [6, 3, 2, 1],
            background_vocab: 400,
            min_doc_len: 20,
            max_doc_len: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub documents: Vec<Document>,
    pub train_queries: Vec<Query>,
    pub test_queries: Vec<Query>,
    pub qrels: Qrels,
}

/// How many times each query term appears in a document of grade `g`.
/// Higher grades cover more of the query and repeat terms more often, with
/// enough spread that neighbouring grades overlap.
fn term_counts(grade: u32, terms: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let covered = match grade {
        0 => 1,
        1 => rng.random_range(1..=2),
        2 => rng.random_range(2..=terms),
        _ => terms,
    }
    .min(terms);
    let max_tf = match grade {
        0 | 1 => 1,
        2 => 2,
        _ => 3,
    };
    let mut order: Vec<usize> = (0..terms).collect();
    order.shuffle(rng);
    let mut counts = vec![0; terms];
    for &t in &order[..covered] {
        counts[t] = rng.random_range(1..=max_tf);
    }
    counts
}

pub fn passage_suite(config: &SuiteConfig) -> Suite {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let total_queries = config.train_queries + config.test_queries;
    let words = pseudo_words(total_queries * config.query_terms + config.background_vocab, &mut rng);
    let (query_words, background) = words.split_at(total_queries * config.query_terms);

    let mut documents = Vec::new();
    let mut contents = BTreeSet::new();
    let mut queries = Vec::with_capacity(total_queries);
    let mut qrels = Qrels::new();
    for (qi, terms) in query_words.chunks(config.query_terms).enumerate() {
        let query_id = format!("q{:04}", qi + 1);
        queries.push(Query::new(&query_id, terms.join(" ")));
        let mut grades: Vec<u32> = (0..4u32)
            .flat_map(|g| std::iter::repeat_n(g, config.grade_counts[g as usize]))
            .collect();
        grades.shuffle(&mut rng);
        for (di, &g) in grades.iter().enumerate() {
            let doc_id = format!("{query_id}-d{:02}", di + 1);
            let text = loop {
                let len = rng.random_range(config.min_doc_len..=config.max_doc_len);
                let mut tokens: Vec<&str> = Vec::with_capacity(len + 9);
                for (t, &c) in terms.iter().zip(&term_counts(g, terms.len(), &mut rng)) {
                    tokens.extend(std::iter::repeat_n(t.as_str(), c));
                }
                while tokens.len() < len {
                    tokens.push(&background[rng.random_range(0..background.len())]);
                }
                tokens.shuffle(&mut rng);
                let text = tokens.join(" ");
                if contents.insert(text.clone()) {
                    break text;
                }
            };
            documents.push(Document::new(&doc_id, text));
            qrels.insert(&query_id, &doc_id, g);
        }
    }
    let test_queries = queries.split_off(config.train_queries);
    Suite {
        documents,
        train_queries: queries,
        test_queries,
        qrels,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub movies: Vec<Document>,
    pub mentions: BTreeMap<String, u64>,
    pub dialogs: Vec<Query>,
}

/// A catalog of `movies` titles over a handful of genres. About a third of
/// the movies have more than 200 mentions; each dialog asks for two genre
/// words and mentions one title word.
pub fn movie_catalog(movies: usize, dialogs: usize, seed: u64) -> Catalog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let genres = pseudo_words(8, &mut rng);
    let title_words = pseudo_words(movies * 2 + 8, &mut rng)[8..].to_vec();
    let mut catalog_movies = Vec::with_capacity(movies);
    let mut mentions = BTreeMap::new();
    for i in 0..movies {
        let id = format!("m{:03}", i + 1);
        let title = format!("{} {}", title_words[2 * i], title_words[2 * i + 1]);
        let g1 = &genres[i % genres.len()];
        let g2 = &genres[(i * 3 + 1) % genres.len()];
        catalog_movies.push(Document::new(&id, format!("{g1} {g2} film")).with_title(title));
        let count = if i % 3 == 0 {
            rng.random_range(201..2000)
        } else {
            rng.random_range(0..=200)
        };
        mentions.insert(id, count);
    }
    let dialogs = (0..dialogs)
        .map(|d| {
            let a = &genres[rng.random_range(0..genres.len())];
            let b = &genres[rng.random_range(0..genres.len())];
            let t = &title_words[rng.random_range(0..title_words.len())];
            Query::new(
                format!("dlg{:03}", d + 1),
                format!("I liked {t} and want something {a} or {b}"),
            )
        })
        .collect();
    Catalog {
        movies: catalog_movies,
        mentions,
        dialogs,
    }
}

pub fn write_corpus<W: Write>(mut out: W, docs: &[Document]) -> std::io::Result<()> {
    for d in docs {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// `query_id<TAB>text` lines.
pub fn write_queries<W: Write>(mut out: W, queries: &[Query]) -> std::io::Result<()> {
    for q in queries {
        writeln!(out, "{}\t{}", q.query_id, q.text)?;
    }
    Ok(())
}
