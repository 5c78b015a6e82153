//! End-to-end evaluation: pipeline orchestration, per-question records,
//! aggregate metrics, and the retrieval-size grid search.

mod metrics;
mod pipeline;

pub use metrics::{exact_match, hit_at_k, MetricsError, RankingRecord};
pub use pipeline::{
    build_corpora, Aggregates, AnswerOutcome, BowProvider, BuiltCorpora, EmbedderProvider,
    EvalError, ExperimentReport, FailureReason, FixedEmbedderProvider, GridRow, Pipeline,
    PipelineConfig, PipelineDeps, QuestionRecord, DEFAULT_GRID,
};

use serde::{Deserialize, Serialize};

/// Dataset partition a question belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// One labeled question: text, the gold source document, and the gold answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAPair {
    pub question_id: String,
    pub question: String,
    pub gold_doc_id: String,
    pub gold_answer: String,
    pub split: Split,
}
