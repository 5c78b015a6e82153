//! End-to-end question answering over heterogeneous documents that mix
//! narrative passages with hierarchical tables.
//!
//! The engine is organised as a pipeline:
//!
//! 1. **Representation** ([`table`], [`corpus`]) — hierarchical tables are
//!    linearized into natural-language summary chunks (row/column/table
//!    level), passages are split into sentence chunks.
//! 2. **Retrieval** ([`retrieval`]) — a BM25 index and an embedding index are
//!    queried independently and their document rankings are merged by best
//!    rank into a deduplicated candidate list.
//! 3. **Reranking** ([`rerank`]) — candidate documents are filtered to the
//!    chunks most similar to the question under a token budget, then ordered
//!    by a completion model with a deterministic fallback to ensemble order.
//! 4. **Reasoning** ([`reasoning`]) — the top document is handed to a
//!    five-step structured prompt; any formula the model emits is re-derived
//!    with an exact decimal calculator and used to cross-check the answer.
//! 5. **Evaluation** ([`eval`]) — retrieval hit rate and exact-match metrics
//!    over a QA split, plus a grid sweep over ensemble depths.
//!
//! Every model-facing seam is a trait ([`clients`]), with deterministic
//! offline implementations (scripted completions, bag-of-words embeddings) so
//! the whole pipeline runs reproducibly without network access.

pub mod clients;
pub mod corpus;
pub mod eval;
pub mod reasoning;
pub mod rerank;
pub mod retrieval;
pub mod store;
pub mod table;
pub mod templates;
pub mod text;

pub use clients::{
    BowEmbedder, ClientError, CompletionClient, CompletionRequest, Embedder, EmbeddingVector,
    HeuristicTokenCounter, MockCompletionClient, TokenBudget, TokenCounter,
};
pub use corpus::{Chunk, ChunkKind, CorpusBuilder, Document, SummarizerSpec, TableStrategy};
pub use eval::{
    Aggregates, EvalError, ExperimentReport, FailureReason, GridRow, Pipeline, PipelineConfig,
    QAPair, QuestionRecord, Split,
};
pub use reasoning::{
    evaluate_formula, parse_formula, CalcError, Decimal, FormulaAst, QuestionType, RecapTrace,
    SelectionReason,
};
pub use rerank::{ChunkSelection, DocChunks, FilteredDocument, RerankOutcome};
pub use retrieval::{Bm25Index, EmbeddingIndex, RankSource, RankedDoc, RankedDocs};
pub use table::{
    Cell, HeaderNode, HeaderPath, HeaderTree, HierarchicalTable, Orientation, TableError,
    PATH_SEPARATOR,
};
pub use templates::PromptSet;
