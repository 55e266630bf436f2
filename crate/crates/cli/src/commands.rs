use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde_json::{json, Value};

use rankdistill_core::backend::{
    Backend, CacheMode, CacheStore, CachedBackend, CallCounter, FixedLatency, HttpBackend, HttpConfig, OracleBackend,
    OracleTruth,
};
use rankdistill_core::corpus::{
    load_corpus, load_qrels, load_queries, load_run, write_run, CandidateSet, Corpus, PostingsIndex, Qrels, Query,
    RunLine,
};
use rankdistill_core::distill::{
    build_training_set, read_training_set, train, write_loss_trace, write_training_set, Student, TrainConfig,
};
use rankdistill_core::eval::{
    build_rec_pool, evaluate, measure_latency, render_markdown, write_report_csv, LatencyEntry, LatencyReport,
    PopularityTable, ReportRow,
};
use rankdistill_core::prompts::{Task, TemplateSet};
use rankdistill_core::rankers::{RankedList, Reranker, RerankerConfig, Strategy};
use rankdistill_core::stage_seed;
use rankdistill_core::synth::{movie_catalog, passage_suite, write_corpus, write_queries, SuiteConfig};

use crate::config::{BackendKind, RunConfig};

/// Tag of the distilled pointwise scorer in run files and reports.
pub const STUDENT: &str = "student";

/// What a command reports on stdout, plus the queries it could not finish.
pub struct Outcome {
    pub summary: Value,
    pub unprocessed: Vec<String>,
}

impl Outcome {
    fn done(summary: Value) -> Self {
        Outcome {
            summary,
            unprocessed: Vec::new(),
        }
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut BufWriter<&mut File>) -> Result<()>) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        write(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

/// Loaded inputs shared by most commands.
pub struct Workspace {
    pub config: RunConfig,
    pub corpus: Corpus,
    pub index: PostingsIndex,
    pub queries: Vec<Query>,
    pub task: Task,
}

impl Workspace {
    pub fn load(config: RunConfig) -> Result<Self> {
        let corpus = load_corpus(config.input("corpus")?, config.stopwords()?)?;
        let queries = load_queries(config.input("queries")?)?;
        let index = PostingsIndex::build(&corpus, config.bm25()?)?;
        let task = config.task()?;
        info!("{} documents, {} queries", corpus.len(), queries.len());
        Ok(Workspace {
            config,
            corpus,
            index,
            queries,
            task,
        })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.config.paths.output_dir.join(name)
    }

    fn qrels(&self) -> Result<Qrels> {
        Ok(load_qrels(self.config.input("qrels")?)?)
    }

    fn templates(&self) -> Result<TemplateSet> {
        Ok(match &self.config.paths.templates {
            Some(dir) => TemplateSet::load_dir(dir)?,
            None => TemplateSet::builtin(),
        })
    }

    /// The configured backend, optionally slowed by a fixed per-call delay
    /// and wrapped in a record/replay cache.
    fn backend(&self, delay: Option<Duration>) -> Result<Arc<dyn Backend>> {
        let cfg = &self.config.backend;
        let base: Box<dyn Backend> = match cfg.kind {
            BackendKind::Oracle => {
                let mut oracle = cfg.oracle;
                oracle.seed = stage_seed(self.config.seed, "oracle");
                let truth = OracleTruth::new(&self.queries, &self.corpus, self.qrels()?);
                Box::new(OracleBackend::new(oracle, self.templates()?, truth)?)
            }
            BackendKind::Http => {
                let mut http = match &cfg.endpoint {
                    Some(e) => {
                        let mut c = HttpConfig::new(e.clone());
                        c.token = std::env::var(rankdistill_core::backend::TOKEN_ENV)
                            .ok()
                            .filter(|t| !t.is_empty());
                        c
                    }
                    None => HttpConfig::from_env()?,
                };
                if let Some(t) = cfg.timeout_secs {
                    http.timeout = Duration::from_secs(t);
                }
                if let Some(a) = cfg.attempts {
                    http.attempts = a;
                }
                Box::new(HttpBackend::new(http)?)
            }
        };
        let base: Box<dyn Backend> = match delay {
            Some(d) => Box::new(FixedLatency::new(base, d)),
            None => base,
        };
        Ok(match &self.config.paths.cache {
            Some(path) => {
                let mode = self.config.paths.cache_mode.unwrap_or(CacheMode::Record);
                let store = CacheStore::open(path)?;
                info!("cache {} ({} entries, {mode:?})", path.display(), store.len());
                Arc::new(CachedBackend::new(base, store, mode))
            }
            None => Arc::from(base),
        })
    }

    fn reranker(&self, backend: Arc<dyn Backend>, counter: Arc<CallCounter>) -> Result<Reranker> {
        Ok(Reranker::new(
            backend,
            Arc::new(self.templates()?),
            counter,
            RerankerConfig {
                task: self.task,
                parallelism: self.config.strategy.parallelism,
                listwise: self.config.listwise(),
            },
        )?)
    }

    /// Candidates per query: from a run file if given, recommendation pools
    /// for the movie task when mention counts are configured, else BM25.
    fn candidates(&self, run: Option<&Path>) -> Result<Vec<CandidateSet>> {
        let n = self.config.retrieval.n;
        if let Some(run) = run {
            let by_id: HashMap<&str, &Query> = self.queries.iter().map(|q| (q.query_id.as_str(), q)).collect();
            return RankedList::from_run_lines(&load_run(run)?)?
                .into_iter()
                .map(|list| {
                    let query = *by_id
                        .get(list.query_id())
                        .with_context(|| format!("run query `{}` is not in the queries file", list.query_id()))?;
                    let entries = &list.entries()[..list.len().min(n)];
                    let docs = entries
                        .iter()
                        .map(|e| {
                            self.corpus
                                .find(&e.doc_id)
                                .cloned()
                                .with_context(|| format!("run document `{}` is not in the corpus", e.doc_id))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let scores = entries.iter().map(|e| e.score).collect();
                    Ok(CandidateSet::new(query.clone(), docs, scores)?)
                })
                .collect();
        }
        if self.task == Task::Movie && self.config.paths.popularity.is_some() {
            let file = File::open(self.config.input("popularity")?)?;
            let popularity = PopularityTable::read_csv(file, self.config.eval.popularity_threshold)?;
            let seed = stage_seed(self.config.seed, "pool");
            return self
                .queries
                .iter()
                .map(|q| Ok(build_rec_pool(q, &self.corpus, &self.index, &popularity, seed)?))
                .collect();
        }
        let mut sets = Vec::with_capacity(self.queries.len());
        for q in &self.queries {
            match self.index.retrieve_topk(&self.corpus, q, n)? {
                Some(c) => sets.push(c),
                None => warn!("query {} matches no document", q.query_id),
            }
        }
        Ok(sets)
    }
}

fn run_lines(lists: &[RankedList]) -> Vec<RunLine> {
    lists.iter().flat_map(|l| l.to_run_lines()).collect()
}

pub fn retrieve(ws: &Workspace) -> Result<Outcome> {
    let sets = ws.candidates(None)?;
    let lines: Vec<RunLine> = sets
        .iter()
        .flat_map(|c| {
            c.docs()
                .iter()
                .zip(c.retrieval_scores())
                .enumerate()
                .map(|(i, (d, s))| RunLine {
                    query_id: c.query().query_id.clone(),
                    doc_id: d.doc_id.clone(),
                    rank: i + 1,
                    score: *s,
                })
        })
        .collect();
    let path = ws.out("bm25.run");
    write_atomic(&path, |w| Ok(write_run(w, &lines, "bm25")?))?;
    Ok(Outcome::done(json!({
        "command": "retrieve",
        "queries": ws.queries.len(),
        "with_candidates": sets.len(),
        "output": path,
    })))
}

fn load_student(path: Option<&Path>) -> Result<Student> {
    let path = path.context("the student strategy needs --checkpoint")?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Student::from_json(&text)?)
}

pub fn rank(ws: &Workspace, strategy: &str, candidates: Option<&Path>, checkpoint: Option<&Path>) -> Result<Outcome> {
    let sets = ws.candidates(candidates)?;
    let mut lists = Vec::with_capacity(sets.len());
    let mut unprocessed = Vec::new();
    let (mut calls, mut failed, mut degraded) = (0, 0, 0);
    if strategy == STUDENT {
        let student = load_student(checkpoint)?;
        for c in &sets {
            lists.push(student.rank(&ws.index, c)?);
        }
    } else {
        let strategy: Strategy = strategy.parse()?;
        let reranker = ws.reranker(ws.backend(None)?, Arc::new(CallCounter::new()))?;
        for c in &sets {
            let out = reranker.rank(strategy, c)?;
            calls += out.calls;
            failed += out.failed_calls;
            degraded += out.degraded;
            if out.failed_calls > 0 {
                unprocessed.push(c.query().query_id.clone());
            }
            lists.push(out.list);
        }
    }
    let path = ws.out(&format!("{strategy}.run"));
    write_atomic(&path, |w| Ok(write_run(w, &run_lines(&lists), strategy)?))?;
    Ok(Outcome {
        summary: json!({
            "command": "rank",
            "strategy": strategy,
            "queries": lists.len(),
            "calls": calls,
            "failed_calls": failed,
            "degraded": degraded,
            "output": path,
        }),
        unprocessed,
    })
}

pub fn teach(ws: &Workspace) -> Result<Outcome> {
    let reranker = ws.reranker(ws.backend(None)?, Arc::new(CallCounter::new()))?;
    let set = build_training_set(&ws.queries, &ws.corpus, &ws.index, &reranker, ws.config.retrieval.n)?;
    let path = ws.out("train.jsonl");
    write_atomic(&path, |w| Ok(write_training_set(w, &set.examples)?))?;
    let manifest = ws.out("teach_manifest.json");
    write_json(&manifest, &set.manifest)?;
    Ok(Outcome {
        summary: json!({
            "command": "teach",
            "completed": set.manifest.completed.len(),
            "skipped": set.manifest.skipped.len(),
            "failed": set.manifest.failed.len(),
            "teacher_calls": reranker.counter().calls(Strategy::PairwiseAllPair.tag()),
            "output": path,
            "manifest": manifest,
        }),
        unprocessed: set.manifest.failed,
    })
}

pub fn distill(ws: &Workspace, train_set: Option<&Path>) -> Result<Outcome> {
    let path = train_set
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ws.out("train.jsonl"));
    let file = File::open(&path).with_context(|| format!("opening training set {}", path.display()))?;
    let examples = read_training_set(BufReader::new(file), &ws.queries, &ws.corpus)?;
    let config = TrainConfig {
        seed: stage_seed(ws.config.seed, "train"),
        ..ws.config.train
    };
    let trained = train(&examples, &ws.index, &config)?;
    let checkpoint = ws.out("checkpoint.json");
    let json_text = trained.student.to_json()?;
    write_atomic(&checkpoint, |w| Ok(w.write_all(json_text.as_bytes())?))?;
    let loss = ws.out("loss.csv");
    write_atomic(&loss, |w| Ok(write_loss_trace(w, &trained.epoch_losses)?))?;
    Ok(Outcome::done(json!({
        "command": "distill",
        "examples": examples.len(),
        "epoch_losses": trained.epoch_losses,
        "checkpoint": checkpoint,
        "loss_trace": loss,
    })))
}

pub fn eval(ws: &RunConfig, run: &Path) -> Result<Outcome> {
    let qrels = load_qrels(ws.input("qrels")?)?;
    let lists = RankedList::from_run_lines(&load_run(run)?)?;
    let report = evaluate(&lists, &qrels, ws.eval.gain);
    let path = ws.paths.output_dir.join("metrics.json");
    write_json(&path, &report)?;
    Ok(Outcome::done(json!({
        "command": "eval",
        "run": run,
        "queries": report.query_count(),
        "ndcg@1": report.ndcg_1,
        "ndcg@5": report.ndcg_5,
        "ndcg@10": report.ndcg_10,
        "acc@1": report.acc_1,
        "output": path,
    })))
}

pub struct BenchOptions<'a> {
    pub strategies: Vec<String>,
    pub max_queries: Option<usize>,
    pub delay: Option<Duration>,
    pub checkpoint: Option<&'a Path>,
}

pub fn bench(ws: &Workspace, opts: &BenchOptions) -> Result<Outcome> {
    let mut sets = ws.candidates(None)?;
    if let Some(m) = opts.max_queries {
        sets.truncate(m);
    }
    if sets.is_empty() {
        bail!("no query has candidates to benchmark");
    }
    let qrels = match &ws.config.paths.qrels {
        Some(_) => Some(ws.qrels()?),
        None => None,
    };
    let counter = Arc::new(CallCounter::new());
    let reranker = ws.reranker(ws.backend(opts.delay)?, counter.clone())?;
    let model_tag = match ws.config.backend.kind {
        BackendKind::Oracle => "oracle",
        BackendKind::Http => "http",
    };
    let mut entries: Vec<LatencyEntry> = Vec::new();
    let mut rows: Vec<(ReportRow, Vec<RankedList>)> = Vec::new();
    let mut unprocessed = Vec::new();
    for name in &opts.strategies {
        let (entry, lists, tag) = if name == STUDENT {
            let student = load_student(opts.checkpoint)?;
            let (entry, lists) = measure_latency(STUDENT, &sets, &counter, |c| student.rank(&ws.index, c))?;
            let tag = format!("{:?}", student.scorer.architecture()).to_lowercase();
            (entry, lists, tag)
        } else {
            let strategy: Strategy = name.parse()?;
            let (entry, outs) = measure_latency(strategy.tag(), &sets, &counter, |c| reranker.rank(strategy, c))?;
            for o in &outs {
                if o.failed_calls > 0 {
                    unprocessed.push(format!("{}:{}", strategy, o.list.query_id()));
                }
            }
            (entry, outs.into_iter().map(|o| o.list).collect(), model_tag.to_string())
        };
        info!("{name}: {:.4} s/q, {:.1} calls/q", entry.sec_per_q, entry.calls_per_q);
        let metrics = qrels.as_ref().map(|q| evaluate(&lists, q, ws.config.eval.gain));
        rows.push((
            ReportRow {
                strategy: name.clone(),
                model_tag: tag,
                n: ws.config.retrieval.n,
                ndcg_1: metrics.as_ref().map_or(0.0, |m| m.ndcg_1),
                ndcg_5: metrics.as_ref().map_or(0.0, |m| m.ndcg_5),
                ndcg_10: metrics.as_ref().map_or(0.0, |m| m.ndcg_10),
                acc_1: (ws.task == Task::Movie).then(|| metrics.as_ref().map_or(0.0, |m| m.acc_1)),
                sec_per_q: Some(entry.sec_per_q),
                calls_per_q: Some(entry.calls_per_q),
                speedup_vs_ref: None,
            },
            lists,
        ));
        entries.push(entry);
    }
    let latency = LatencyReport::new(Strategy::PairwiseAllPair.tag(), entries);
    let rows: Vec<ReportRow> = rows
        .into_iter()
        .map(|(mut r, _)| {
            r.speedup_vs_ref = latency.speedup(&r.strategy);
            r
        })
        .collect();
    let csv_path = ws.out("report.csv");
    write_atomic(&csv_path, |w| Ok(write_report_csv(w, &rows)?))?;
    let md_path = ws.out("report.md");
    let md = render_markdown(&rows);
    write_atomic(&md_path, |w| Ok(w.write_all(md.as_bytes())?))?;
    write_json(&ws.out("latency.json"), &latency)?;
    Ok(Outcome {
        summary: json!({
            "command": "bench",
            "queries": sets.len(),
            "strategies": latency.entries,
            "report": csv_path,
            "markdown": md_path,
        }),
        unprocessed,
    })
}

pub fn synth(config: &RunConfig, movies: Option<usize>) -> Result<Outcome> {
    let dir = &config.paths.output_dir;
    let suite_config = SuiteConfig {
        seed: stage_seed(config.seed, "synth"),
        ..config.synth
    };
    let suite = passage_suite(&suite_config);
    let all: Vec<Query> = suite.train_queries.iter().chain(&suite.test_queries).cloned().collect();
    write_atomic(&dir.join("corpus.jsonl"), |w| Ok(write_corpus(w, &suite.documents)?))?;
    write_atomic(&dir.join("queries.tsv"), |w| Ok(write_queries(w, &all)?))?;
    write_atomic(&dir.join("queries_train.tsv"), |w| {
        Ok(write_queries(w, &suite.train_queries)?)
    })?;
    write_atomic(&dir.join("queries_test.tsv"), |w| {
        Ok(write_queries(w, &suite.test_queries)?)
    })?;
    write_atomic(&dir.join("qrels.txt"), |w| Ok(suite.qrels.write(w)?))?;
    let mut summary = json!({
        "command": "synth",
        "documents": suite.documents.len(),
        "train_queries": suite.train_queries.len(),
        "test_queries": suite.test_queries.len(),
        "output_dir": dir,
    });
    if let Some(m) = movies {
        let catalog = movie_catalog(m, m / 2, stage_seed(config.seed, "catalog"));
        write_atomic(&dir.join("catalog.jsonl"), |w| Ok(write_corpus(w, &catalog.movies)?))?;
        write_atomic(&dir.join("dialogs.tsv"), |w| Ok(write_queries(w, &catalog.dialogs)?))?;
        write_atomic(&dir.join("popularity.csv"), |w| {
            writeln!(w, "doc_id,count")?;
            for (id, c) in &catalog.mentions {
                writeln!(w, "{id},{c}")?;
            }
            Ok(())
        })?;
        summary["movies"] = json!(catalog.movies.len());
        summary["dialogs"] = json!(catalog.dialogs.len());
    }
    Ok(Outcome::done(summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("f.txt");
        write_atomic(&path, |w| Ok(w.write_all(b"first")?)).unwrap();
        write_atomic(&path, |w| Ok(w.write_all(b"second")?)).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second");
        let failed = write_atomic(&path, |w| {
            w.write_all(b"partial")?;
            bail!("interrupted")
        });
        assert!(failed.is_err());
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second");
        assert_eq!(std::fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
