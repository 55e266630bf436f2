use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use rankdistill_core::backend::{CacheMode, OracleConfig};
use rankdistill_core::corpus::{Bm25Params, Stopwords};
use rankdistill_core::distill::TrainConfig;
use rankdistill_core::eval::{Gain, DEFAULT_POPULARITY_THRESHOLD};
use rankdistill_core::prompts::Task;
use rankdistill_core::rankers::{ListwiseParams, Strategy};
use rankdistill_core::synth::SuiteConfig;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every stage derives its own seed from it.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_task")]
    pub task: String,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub retrieval: Retrieval,
    #[serde(default)]
    pub strategy: StrategySection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub synth: SuiteConfig,
}

fn default_seed() -> u64 {
    42
}

fn default_task() -> String {
    "passage".into()
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    /// Directory of template overrides named `{task}_{kind}.txt`.
    pub templates: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    #[serde(default)]
    pub cache_mode: Option<CacheMode>,
    /// `doc_id,count` mention counts; enables recommendation pools for the
    /// movie task.
    pub popularity: Option<PathBuf>,
    /// `english` (default), `none`, or a path to a one-word-per-line list.
    pub stopwords: Option<String>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Oracle,
    Http,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    #[serde(default = "default_kind")]
    pub kind: BackendKind,
    /// Falls back to the endpoint environment variable.
    pub endpoint: Option<String>,
    pub timeout_secs: Option<u64>,
    pub attempts: Option<u32>,
    #[serde(default)]
    pub oracle: OracleConfig,
}

fn default_kind() -> BackendKind {
    BackendKind::Oracle
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            kind: BackendKind::Oracle,
            endpoint: None,
            timeout_secs: None,
            attempts: None,
            oracle: OracleConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Retrieval {
    pub k1: f64,
    pub b: f64,
    /// Candidates per query.
    pub n: usize,
}

impl Default for Retrieval {
    fn default() -> Self {
        let p = Bm25Params::default();
        Retrieval {
            k1: p.k1,
            b: p.b,
            n: 100,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategySection {
    pub name: String,
    pub window: usize,
    pub stride: usize,
    pub passes: usize,
    pub parallelism: usize,
}

impl Default for StrategySection {
    fn default() -> Self {
        let l = ListwiseParams::default();
        StrategySection {
            name: Strategy::PairwiseAllPair.tag().into(),
            window: l.window,
            stride: l.stride,
            passes: l.passes,
            parallelism: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub gain: Gain,
    pub popularity_threshold: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            gain: Gain::Linear,
            popularity_threshold: DEFAULT_POPULARITY_THRESHOLD,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: default_seed(),
            task: default_task(),
            paths: Paths {
                output_dir: default_output_dir(),
                ..Paths::default()
            },
            backend: BackendSection::default(),
            retrieval: Retrieval::default(),
            strategy: StrategySection::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
            synth: SuiteConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a TOML file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let p = &mut config.paths;
        for slot in [
            &mut p.corpus,
            &mut p.queries,
            &mut p.qrels,
            &mut p.templates,
            &mut p.cache,
            &mut p.popularity,
        ] {
            if let Some(rel) = slot.as_mut() {
                if rel.is_relative() {
                    *rel = base.join(&*rel);
                }
            }
        }
        if p.output_dir.is_relative() {
            p.output_dir = base.join(&p.output_dir);
        }
        Ok(config)
    }

    pub fn task(&self) -> Result<Task> {
        Ok(self.task.parse::<Task>()?)
    }

    pub fn bm25(&self) -> Result<Bm25Params> {
        let p = Bm25Params {
            k1: self.retrieval.k1,
            b: self.retrieval.b,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn listwise(&self) -> ListwiseParams {
        ListwiseParams {
            window: self.strategy.window,
            stride: self.strategy.stride,
            passes: self.strategy.passes,
        }
    }

    pub fn stopwords(&self) -> Result<Stopwords> {
        match self.paths.stopwords.as_deref() {
            None | Some("english") => Ok(Stopwords::english()),
            Some("none") => Ok(Stopwords::none()),
            Some(path) => Ok(Stopwords::load(Path::new(path))?),
        }
    }

    /// An input path that must be configured and exist.
    pub fn input(&self, key: &str) -> Result<&Path> {
        let p = match key {
            "corpus" => &self.paths.corpus,
            "queries" => &self.paths.queries,
            "qrels" => &self.paths.qrels,
            "popularity" => &self.paths.popularity,
            other => bail!("unknown path key `{other}`"),
        };
        let p = p
            .as_deref()
            .with_context(|| format!("missing config key `paths.{key}`"))?;
        if !p.exists() {
            bail!("paths.{key} = {} does not exist", p.display());
        }
        Ok(p)
    }

    /// Checks fields that only matter for some settings.
    pub fn validate(&self) -> Result<()> {
        self.task()?;
        self.bm25()?;
        self.train.validate()?;
        if self.retrieval.n == 0 {
            bail!("retrieval.n must be at least 1");
        }
        if self.strategy.parallelism == 0 {
            bail!("strategy.parallelism must be at least 1");
        }
        if let Some(t) = &self.paths.templates {
            if !t.is_dir() {
                bail!("paths.templates = {} is not a directory", t.display());
            }
        }
        if self.backend.kind == BackendKind::Oracle {
            self.backend.oracle.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "seed = 7\n[paths]\ncorpus = \"data/c.jsonl\"\n[strategy]\nname = \"listwise\"\nwindow = 4\n[train]\nepochs = 2\n",
        )
        .unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(
            c.paths.corpus.as_deref(),
            Some(dir.path().join("data/c.jsonl").as_path())
        );
        assert_eq!(c.paths.output_dir, dir.path().join("out"));
        assert_eq!(
            c.listwise(),
            ListwiseParams {
                window: 4,
                stride: 10,
                passes: 1
            }
        );
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.train.batch_size, 32);
        assert!(c.input("corpus").is_err());
        assert!(c.input("qrels").unwrap_err().to_string().contains("paths.qrels"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[retrieval]\ntop_k = 5\n").unwrap();
        assert!(RunConfig::load(&path).is_err());
    }
}
