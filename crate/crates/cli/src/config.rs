//! TOML configuration file: one structured file describes the data locations,
//! retrieval and reasoning knobs, client selection, and output directory.
//! Relative paths resolve against the configuration file's own directory;
//! environment variables are used only for provider credentials
//! (`HETDOC_API_BASE` / `HETDOC_API_KEY`).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hetdoc_core::corpus::{SummarizerSpec, TableStrategy};
use hetdoc_core::eval::{PipelineConfig, Split, DEFAULT_GRID};
use serde::Deserialize;

/// Which evaluation split to run, or every record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitChoice {
    One(Split),
    All,
}

/// How reranking and reasoning completions are served.
#[derive(Debug, Clone)]
pub enum CompletionChoice {
    /// Deterministic scripted client. Without a script every call returns
    /// the no-match sentinel, so offline runs degrade to ensemble-order
    /// rankings and parse failures instead of aborting.
    Mock { script: Option<PathBuf> },
    /// HTTP provider configured from the environment.
    Http,
}

/// How dense embeddings are produced.
#[derive(Debug, Clone)]
pub enum EmbeddingChoice {
    /// Bag-of-words embedder over the corpus vocabulary.
    Bow,
    /// HTTP provider configured from the environment, with a declared
    /// vector dimension.
    Http { dim: usize },
}

/// Fully resolved settings: every path absolute-or-config-relative resolved,
/// every knob folded into a [`PipelineConfig`].
#[derive(Debug, Clone)]
pub struct Settings {
    pub docs_dir: PathBuf,
    pub qa_path: PathBuf,
    pub out_dir: PathBuf,
    pub templates_dir: Option<PathBuf>,
    pub split: SplitChoice,
    pub grid_combos: Vec<(usize, usize)>,
    pub completion: CompletionChoice,
    pub embedding: EmbeddingChoice,
    pub pipeline: PipelineConfig,
}

impl Settings {
    /// Parse `path` and resolve every relative path against its directory.
    pub fn load(path: &Path) -> Result<Settings> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let file: FileConfig = toml::from_str(&text)
            .with_context(|| format!("cannot parse config file {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        file.resolve(base)
    }
}

fn resolve_path(base: &Path, value: &str) -> PathBuf {
    base.join(value)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    data: DataSection,
    #[serde(default)]
    retrieval: RetrievalSection,
    #[serde(default)]
    rerank: RerankSection,
    #[serde(default)]
    representation: RepresentationSection,
    #[serde(default)]
    reasoning: ReasoningSection,
    #[serde(default)]
    eval: EvalSection,
    #[serde(default)]
    clients: ClientsSection,
    #[serde(default)]
    grid: GridSection,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    /// Directory of per-document JSON files.
    docs: String,
    /// QA records, one JSON object per line.
    qa: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RetrievalSection {
    n: usize,
    m: usize,
    k1: f64,
    b: f64,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        let defaults = PipelineConfig::default();
        RetrievalSection {
            n: defaults.n,
            m: defaults.m,
            k1: defaults.k1,
            b: defaults.b,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RerankSection {
    max_input_tokens: usize,
}

impl Default for RerankSection {
    fn default() -> Self {
        RerankSection {
            max_input_tokens: PipelineConfig::default().rerank_budget_tokens,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RepresentationSection {
    bm25_corpus: String,
    embedding_corpus: String,
    summarizer: String,
    /// Prompt name for the model summarizer (defaults to the builtin
    /// refinement prompt).
    summarizer_prompt: Option<String>,
}

impl Default for RepresentationSection {
    fn default() -> Self {
        RepresentationSection {
            bm25_corpus: "table_level".into(),
            embedding_corpus: "hrcl".into(),
            summarizer: "template".into(),
            summarizer_prompt: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ReasoningSection {
    agreement_tolerance: f64,
    max_output_tokens: u32,
}

impl Default for ReasoningSection {
    fn default() -> Self {
        let defaults = PipelineConfig::default();
        ReasoningSection {
            agreement_tolerance: defaults.agreement_tolerance,
            max_output_tokens: defaults.max_output_tokens,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EvalSection {
    split: String,
    k_list: Vec<usize>,
    workers: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let defaults = PipelineConfig::default();
        EvalSection {
            split: "test".into(),
            k_list: defaults.k_list,
            workers: defaults.workers,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ClientsSection {
    completion: String,
    /// Script file for the mock completion client.
    mock_script: Option<String>,
    embedding: String,
    /// Declared vector dimension for the HTTP embedder.
    embedding_dim: Option<usize>,
}

impl Default for ClientsSection {
    fn default() -> Self {
        ClientsSection {
            completion: "mock".into(),
            mock_script: None,
            embedding: "bow".into(),
            embedding_dim: None,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GridSection {
    combos: Option<Vec<[usize; 2]>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct OutputSection {
    dir: String,
    /// Optional directory of `.txt` prompt-template overrides.
    templates: Option<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: "out".into(),
            templates: None,
        }
    }
}

fn parse_strategy(value: &str, field: &str) -> Result<TableStrategy> {
    match value {
        "table_level" => Ok(TableStrategy::TableLevel),
        "general_rcl" => Ok(TableStrategy::GeneralRcl),
        "hrcl" => Ok(TableStrategy::Hrcl),
        other => bail!("{field} must be one of table_level, general_rcl, hrcl (got {other:?})"),
    }
}

impl FileConfig {
    fn resolve(self, base: &Path) -> Result<Settings> {
        let summarizer = match self.representation.summarizer.as_str() {
            "template" => SummarizerSpec::Template,
            "model" => match self.representation.summarizer_prompt {
                Some(prompt_name) => SummarizerSpec::Model { prompt_name },
                None => SummarizerSpec::model_default(),
            },
            other => bail!("representation.summarizer must be template or model (got {other:?})"),
        };
        let split = match self.eval.split.as_str() {
            "train" => SplitChoice::One(Split::Train),
            "dev" => SplitChoice::One(Split::Dev),
            "test" => SplitChoice::One(Split::Test),
            "all" => SplitChoice::All,
            other => bail!("eval.split must be train, dev, test, or all (got {other:?})"),
        };
        let completion = match self.clients.completion.as_str() {
            "mock" => CompletionChoice::Mock {
                script: self
                    .clients
                    .mock_script
                    .as_deref()
                    .map(|script| resolve_path(base, script)),
            },
            "http" => CompletionChoice::Http,
            other => bail!("clients.completion must be mock or http (got {other:?})"),
        };
        let embedding = match self.clients.embedding.as_str() {
            "bow" => EmbeddingChoice::Bow,
            "http" => {
                let dim = self
                    .clients
                    .embedding_dim
                    .context("clients.embedding = \"http\" requires clients.embedding_dim")?;
                EmbeddingChoice::Http { dim }
            }
            other => bail!("clients.embedding must be bow or http (got {other:?})"),
        };
        let grid_combos = self
            .grid
            .combos
            .map(|combos| combos.into_iter().map(|[n, m]| (n, m)).collect())
            .unwrap_or_else(|| DEFAULT_GRID.to_vec());
        let pipeline = PipelineConfig {
            n: self.retrieval.n,
            m: self.retrieval.m,
            k1: self.retrieval.k1,
            b: self.retrieval.b,
            rerank_budget_tokens: self.rerank.max_input_tokens,
            bm25_strategy: parse_strategy(
                &self.representation.bm25_corpus,
                "representation.bm25_corpus",
            )?,
            embedding_strategy: parse_strategy(
                &self.representation.embedding_corpus,
                "representation.embedding_corpus",
            )?,
            summarizer,
            k_list: self.eval.k_list,
            agreement_tolerance: self.reasoning.agreement_tolerance,
            workers: self.eval.workers,
            max_output_tokens: self.reasoning.max_output_tokens,
        };
        pipeline
            .validate()
            .map_err(|err| anyhow::anyhow!(err.to_string()))?;
        Ok(Settings {
            docs_dir: resolve_path(base, &self.data.docs),
            qa_path: resolve_path(base, &self.data.qa),
            out_dir: resolve_path(base, &self.output.dir),
            templates_dir: self
                .output
                .templates
                .as_deref()
                .map(|dir| resolve_path(base, dir)),
            split,
            grid_combos,
            completion,
            embedding,
            pipeline,
        })
    }
}
