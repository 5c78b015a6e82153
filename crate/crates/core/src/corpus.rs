//! Turning heterogeneous documents into a retrieval corpus of text chunks.
//!
//! Passages are split into sentence chunks (with optional coreference
//! resolution up front). Tables are linearized under one of three strategies:
//!
//! - [`TableStrategy::TableLevel`] — one chunk naming the title, columns and
//!   rows; cheap, good for lexical matching.
//! - [`TableStrategy::GeneralRcl`] — the table is flattened and every row and
//!   every column becomes one chunk enumerating its cells.
//! - [`TableStrategy::Hrcl`] — hierarchical row/column linearization: every
//!   header node at every level becomes a chunk covering the cells beneath
//!   it, so coarse groupings and fine leaves are retrievable independently.
//!   On depth-1 tables this degenerates to exactly the general linearization.
//!
//! Chunk text is either used verbatim (template mode) or rewritten by a
//! completion model (model mode); both modes share the same structure.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{
    with_retries, ClientError, CompletionClient, CompletionRequest, HeuristicTokenCounter,
    TokenCounter, DEFAULT_MAX_RETRIES,
};
use crate::table::{HierarchicalTable, NodeView, PATH_SEPARATOR};
use crate::templates::PromptSet;

/// Maximum number of cells a non-leaf hierarchical summary enumerates before
/// eliding the remainder behind an aggregate marker.
pub const MAX_ENUMERATED_CELLS: usize = 20;

/// Minimum whitespace-delimited word count for a sentence chunk to be kept.
pub const MIN_SENTENCE_WORDS: usize = 5;

/// Errors raised while building a corpus.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("document id must be non-empty")]
    EmptyDocId,
    #[error("document {0} has no passages and no tables")]
    EmptyDocument(String),
    #[error("duplicate document id {0}")]
    DuplicateDocId(String),
    #[error("summarizer prompt template {0:?} not found")]
    MissingTemplate(String),
    #[error("model summarizer mode requires a completion client")]
    MissingClient,
    #[error(transparent)]
    Client(#[from] ClientError),
}

/// A source document: narrative passages plus zero or more tables.
#[derive(Debug, Clone)]
pub struct Document {
    doc_id: String,
    passages: Vec<String>,
    tables: Vec<HierarchicalTable>,
}

impl Document {
    pub fn new(
        doc_id: impl Into<String>,
        passages: Vec<String>,
        tables: Vec<HierarchicalTable>,
    ) -> Result<Self, CorpusError> {
        let doc_id = doc_id.into();
        if doc_id.trim().is_empty() {
            return Err(CorpusError::EmptyDocId);
        }
        if passages.is_empty() && tables.is_empty() {
            return Err(CorpusError::EmptyDocument(doc_id));
        }
        Ok(Document {
            doc_id,
            passages,
            tables,
        })
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn passages(&self) -> &[String] {
        &self.passages
    }

    pub fn tables(&self) -> &[HierarchicalTable] {
        &self.tables
    }
}

/// What kind of content a chunk carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkKind {
    /// One sentence from a passage.
    Sentence,
    /// A row-oriented table summary.
    RowSummary,
    /// A column-oriented table summary.
    ColSummary,
    /// A whole-table summary.
    TableSummary,
}

/// One retrievable unit of text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    /// Unique id within the corpus (`{doc_id}#c{order}`).
    pub chunk_id: String,
    /// Owning document.
    pub doc_id: String,
    /// The chunk text handed to indexing and prompting.
    pub text: String,
    pub kind: ChunkKind,
    /// Source table for table-derived chunks; `None` for sentences.
    pub table_id: Option<String>,
    /// Header level of a row/column summary (1 = coarsest); `None` for
    /// sentences and whole-table summaries.
    pub level: Option<u32>,
    /// Position of the chunk within its document (0-based).
    pub order: u32,
}

impl Chunk {
    fn new(
        doc_id: &str,
        order: u32,
        text: String,
        kind: ChunkKind,
        table_id: Option<String>,
        level: Option<u32>,
    ) -> Chunk {
        Chunk {
            chunk_id: format!("{doc_id}#c{order:04}"),
            doc_id: doc_id.to_string(),
            text,
            kind,
            table_id,
            level,
            order,
        }
    }
}

/// How tables are linearized into chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableStrategy {
    TableLevel,
    GeneralRcl,
    Hrcl,
}

/// How chunk text is produced from the structural template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SummarizerSpec {
    /// Use the deterministic template text verbatim.
    Template,
    /// Rewrite each template text with a completion model using the named
    /// prompt (see [`PromptSet`]); falls back to `"refine"`.
    Model { prompt_name: String },
}

impl SummarizerSpec {
    pub fn model_default() -> Self {
        SummarizerSpec::Model {
            prompt_name: crate::templates::REFINE_TEMPLATE.to_string(),
        }
    }
}

/// Optional passage preprocessing that rewrites pronouns and other referring
/// expressions to explicit mentions before sentence splitting. Failures must
/// not abort corpus construction; the passage is used unchanged instead.
pub trait CoreferenceResolver: Send + Sync {
    fn resolve(&self, passage: &str) -> Result<String, Box<dyn std::error::Error + Send + Sync>>;
}

/// The do-nothing resolver used by default.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityResolver;

impl CoreferenceResolver for IdentityResolver {
    fn resolve(&self, passage: &str) -> Result<String, Box<dyn std::error::Error + Send + Sync>> {
        Ok(passage.to_string())
    }
}

/// Builds chunk corpora from documents under a fixed strategy and summarizer
/// mode, accounting for every completion token spent along the way.
pub struct CorpusBuilder {
    strategy: TableStrategy,
    summarizer: SummarizerSpec,
    templates: PromptSet,
    client: Option<Arc<dyn CompletionClient>>,
    counter: Arc<dyn TokenCounter>,
    resolver: Arc<dyn CoreferenceResolver>,
    client_tokens: u64,
}

impl CorpusBuilder {
    pub fn new(strategy: TableStrategy, summarizer: SummarizerSpec) -> Self {
        CorpusBuilder {
            strategy,
            summarizer,
            templates: PromptSet::builtin(),
            client: None,
            counter: Arc::new(HeuristicTokenCounter),
            resolver: Arc::new(IdentityResolver),
            client_tokens: 0,
        }
    }

    pub fn with_templates(mut self, templates: PromptSet) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_client(mut self, client: Arc<dyn CompletionClient>) -> Self {
        self.client = Some(client);
        self
    }

    pub fn with_counter(mut self, counter: Arc<dyn TokenCounter>) -> Self {
        self.counter = counter;
        self
    }

    pub fn with_resolver(mut self, resolver: Arc<dyn CoreferenceResolver>) -> Self {
        self.resolver = resolver;
        self
    }

    pub fn strategy(&self) -> TableStrategy {
        self.strategy
    }

    /// Completion tokens (prompt + response, heuristic or backend count)
    /// spent on model-mode summaries so far.
    pub fn client_tokens(&self) -> u64 {
        self.client_tokens
    }

    /// Build the full corpus: for each document, sentence chunks for every
    /// passage followed by table chunks under the configured strategy, with
    /// chunk order running through the document.
    pub fn build(&mut self, documents: &[Document]) -> Result<Vec<Chunk>, CorpusError> {
        let mut seen = BTreeSet::new();
        for doc in documents {
            if !seen.insert(doc.doc_id().to_string()) {
                return Err(CorpusError::DuplicateDocId(doc.doc_id().to_string()));
            }
        }
        let mut chunks = Vec::new();
        for doc in documents {
            let mut order = 0u32;
            chunks.extend(self.process_passages(doc, &mut order));
            for table in doc.tables() {
                let table_chunks = match self.strategy {
                    TableStrategy::TableLevel => {
                        vec![self.table_level_summary(doc.doc_id(), table, &mut order)?]
                    }
                    TableStrategy::GeneralRcl => {
                        self.general_rcl_summary(doc.doc_id(), table, &mut order)?
                    }
                    TableStrategy::Hrcl => self.hrcl_summary(doc.doc_id(), table, &mut order)?,
                };
                chunks.extend(table_chunks);
            }
        }
        Ok(chunks)
    }

    /// Sentence chunks for every passage of `doc`: coreference-resolve (best
    /// effort), split into sentences, and drop sentences shorter than
    /// [`MIN_SENTENCE_WORDS`] words.
    pub fn process_passages(&mut self, doc: &Document, order: &mut u32) -> Vec<Chunk> {
        let mut chunks = Vec::new();
        for passage in doc.passages() {
            let resolved = match self.resolver.resolve(passage) {
                Ok(text) => text,
                Err(err) => {
                    log::warn!(
                        "coreference resolution failed for a passage of {}; using original: {err}",
                        doc.doc_id()
                    );
                    passage.clone()
                }
            };
            for sentence in split_sentences(&resolved) {
                if word_count(&sentence) < MIN_SENTENCE_WORDS {
                    continue;
                }
                chunks.push(Chunk::new(
                    doc.doc_id(),
                    *order,
                    sentence,
                    ChunkKind::Sentence,
                    None,
                    None,
                ));
                *order += 1;
            }
        }
        chunks
    }

    /// One whole-table chunk: `Table: {title} | columns: .. | .. | rows: ..`
    /// (the title segment is omitted for untitled tables). Column and row
    /// names are the flattened composite leaf labels.
    pub fn table_level_summary(
        &mut self,
        doc_id: &str,
        table: &HierarchicalTable,
        order: &mut u32,
    ) -> Result<Chunk, CorpusError> {
        let mut segments = Vec::new();
        if let Some(title) = table.title() {
            segments.push(format!("Table: {title}"));
        }
        let cols: Vec<String> = table
            .top()
            .leaf_paths()
            .iter()
            .map(|p| p.joined())
            .collect();
        let rows: Vec<String> = table
            .left()
            .leaf_paths()
            .iter()
            .map(|p| p.joined())
            .collect();
        segments.push(format!("columns: {}", cols.join(PATH_SEPARATOR)));
        segments.push(format!("rows: {}", rows.join(PATH_SEPARATOR)));
        let text = self.finish_text(segments.join(PATH_SEPARATOR))?;
        let chunk = Chunk::new(
            doc_id,
            *order,
            text,
            ChunkKind::TableSummary,
            Some(table.table_id().to_string()),
            None,
        );
        *order += 1;
        Ok(chunk)
    }

    /// Row and column chunks over the *flattened* table: one chunk per data
    /// row (`Row R: C=v; ..`) followed by one per data column
    /// (`Column C: R=v; ..`), all at level 1.
    pub fn general_rcl_summary(
        &mut self,
        doc_id: &str,
        table: &HierarchicalTable,
        order: &mut u32,
    ) -> Result<Vec<Chunk>, CorpusError> {
        let flat = table.flattened();
        self.linearize(doc_id, &flat, order)
    }

    /// Hierarchical row and column chunks: one chunk per header node at
    /// every level of both trees, each enumerating the cells its subtree
    /// covers (capped at [`MAX_ENUMERATED_CELLS`] for non-leaf nodes, with an
    /// aggregate elision marker). On a depth-1 table this produces exactly
    /// the general row/column linearization.
    pub fn hrcl_summary(
        &mut self,
        doc_id: &str,
        table: &HierarchicalTable,
        order: &mut u32,
    ) -> Result<Vec<Chunk>, CorpusError> {
        self.linearize(doc_id, table, order)
    }

    /// Shared row/column linearization over an arbitrary-depth table: every
    /// node of the left tree yields a row chunk, every node of the top tree a
    /// column chunk (row chunks first, both in pre-order).
    fn linearize(
        &mut self,
        doc_id: &str,
        table: &HierarchicalTable,
        order: &mut u32,
    ) -> Result<Vec<Chunk>, CorpusError> {
        let top_leaves: Vec<String> = table
            .top()
            .leaf_paths()
            .iter()
            .map(|p| p.joined())
            .collect();
        let left_leaves: Vec<String> = table
            .left()
            .leaf_paths()
            .iter()
            .map(|p| p.joined())
            .collect();
        let left_leaf_paths = table.left().leaf_paths();
        let top_leaf_paths = table.top().leaf_paths();

        let mut chunks = Vec::new();
        for node in table.left().nodes() {
            let text =
                self.node_summary_text(table, &node, Axis::Row, &top_leaves, &left_leaf_paths)?;
            chunks.push(Chunk::new(
                doc_id,
                *order,
                text,
                ChunkKind::RowSummary,
                Some(table.table_id().to_string()),
                Some(node.level),
            ));
            *order += 1;
        }
        for node in table.top().nodes() {
            let text =
                self.node_summary_text(table, &node, Axis::Col, &left_leaves, &top_leaf_paths)?;
            chunks.push(Chunk::new(
                doc_id,
                *order,
                text,
                ChunkKind::ColSummary,
                Some(table.table_id().to_string()),
                Some(node.level),
            ));
            *order += 1;
        }
        Ok(chunks)
    }

    /// Text for one header-node summary. `cross_labels` are the flattened
    /// leaf labels of the *other* axis; `own_leaf_paths` the full leaf paths
    /// of the node's own axis (used to derive the residual labels that
    /// distinguish covered leaves from the node's own path).
    fn node_summary_text(
        &mut self,
        table: &HierarchicalTable,
        node: &NodeView,
        axis: Axis,
        cross_labels: &[String],
        own_leaf_paths: &[crate::table::HeaderPath],
    ) -> Result<String, CorpusError> {
        let covered = node.leaf_start..node.leaf_start + node.leaf_count;
        let total_cells = node.leaf_count * cross_labels.len();
        let cap = if node.is_leaf {
            usize::MAX
        } else {
            MAX_ENUMERATED_CELLS
        };

        let mut entries = Vec::new();
        'outer: for own in covered.clone() {
            // Labels below this node that pin down the covered leaf.
            let residual = own_leaf_paths[own].labels()[node.path.len()..].join(PATH_SEPARATOR);
            for (cross, cross_label) in cross_labels.iter().enumerate() {
                if entries.len() >= cap {
                    break 'outer;
                }
                let raw = match axis {
                    Axis::Row => table.cell(own, cross).raw(),
                    Axis::Col => table.cell(cross, own).raw(),
                };
                if residual.is_empty() {
                    entries.push(format!("{cross_label}={raw}"));
                } else {
                    entries.push(format!("{residual}{PATH_SEPARATOR}{cross_label}={raw}"));
                }
            }
        }
        if entries.len() < total_cells {
            let noun = match axis {
                Axis::Row => "rows",
                Axis::Col => "columns",
            };
            entries.push(format!(
                "... ({} more cells across {} {noun})",
                total_cells - entries.len(),
                node.leaf_count
            ));
        }
        let prefix = match axis {
            Axis::Row => "Row",
            Axis::Col => "Column",
        };
        self.finish_text(format!(
            "{prefix} {}: {}",
            node.path.joined(),
            entries.join("; ")
        ))
    }

    /// Apply the summarizer mode to a template text: identity in template
    /// mode, a model rewrite (with retry and token accounting) in model mode.
    fn finish_text(&mut self, template_text: String) -> Result<String, CorpusError> {
        match &self.summarizer {
            SummarizerSpec::Template => Ok(template_text),
            SummarizerSpec::Model { prompt_name } => {
                let client = self.client.as_ref().ok_or(CorpusError::MissingClient)?;
                let template = self
                    .templates
                    .get(prompt_name)
                    .ok_or_else(|| CorpusError::MissingTemplate(prompt_name.clone()))?;
                let prompt = template.replace("{content}", &template_text);
                let request = CompletionRequest::new(prompt);
                let response = with_retries(DEFAULT_MAX_RETRIES, || client.complete(&request))?;
                self.client_tokens +=
                    (self.counter.count(&request.prompt) + self.counter.count(&response)) as u64;
                Ok(response)
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Axis {
    Row,
    Col,
}

/// Split `text` into sentences on `.`, `!`, `?` followed by whitespace and an
/// uppercase letter or digit. A period directly after a known abbreviation
/// does not end a sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    const ABBREVIATIONS: &[&str] = &[
        "co", "corp", "dr", "e.g", "etc", "fig", "i.e", "inc", "jr", "ltd", "mr", "mrs", "ms",
        "no", "prof", "sr", "st", "u.k", "u.s", "vs",
    ];
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        if !matches!(chars[i], '.' | '!' | '?') {
            i += 1;
            continue;
        }
        // Absorb a whole punctuation run ("..." / "?!") as one terminator.
        let mut j = i + 1;
        while j < chars.len() && matches!(chars[j], '.' | '!' | '?') {
            j += 1;
        }
        let mut k = j;
        while k < chars.len() && chars[k].is_whitespace() {
            k += 1;
        }
        let followed_by_ws = k > j;
        let next_starts_sentence =
            k < chars.len() && (chars[k].is_uppercase() || chars[k].is_ascii_digit());
        let abbreviation = chars[i] == '.' && j == i + 1 && {
            let mut w = i;
            while w > start && !chars[w - 1].is_whitespace() {
                w -= 1;
            }
            let word: String = chars[w..i].iter().collect::<String>().to_lowercase();
            let word = word.trim_matches(|c: char| !(c.is_alphanumeric() || c == '.'));
            ABBREVIATIONS.contains(&word)
        };
        if followed_by_ws && next_starts_sentence && !abbreviation {
            let sentence: String = chars[start..j].iter().collect();
            let sentence = sentence.trim();
            if !sentence.is_empty() {
                sentences.push(sentence.to_string());
            }
            start = k;
            i = k;
        } else {
            i = j;
        }
    }
    if start < chars.len() {
        let tail: String = chars[start..].iter().collect();
        let tail = tail.trim();
        if !tail.is_empty() {
            sentences.push(tail.to_string());
        }
    }
    sentences
}

/// Count words for the short-sentence filter: whitespace-delimited tokens
/// that still contain something after stripping surrounding punctuation.
pub fn word_count(sentence: &str) -> usize {
    sentence
        .split_whitespace()
        .filter(|token| {
            !token
                .trim_matches(|c: char| !c.is_alphanumeric())
                .is_empty()
        })
        .count()
}
