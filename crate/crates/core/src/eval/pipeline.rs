//! The full question-answering pipeline and its evaluation harness:
//! corpus construction, per-question retrieval → rerank → reasoning, report
//! assembly, and the ensemble-depth grid sweep.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{
    BowEmbedder, ClientError, CompletionClient, Embedder, HeuristicTokenCounter, TokenBudget,
    TokenCounter,
};
use crate::corpus::{
    Chunk, CoreferenceResolver, CorpusBuilder, CorpusError, Document, IdentityResolver,
    SummarizerSpec, TableStrategy,
};
use crate::reasoning::{run_recap, ReasoningError, RecapTrace};
use crate::rerank::{llm_rerank, recombine, select_top, CosineScorer, DocChunks};
use crate::retrieval::{
    ensemble_merge, Bm25Index, EmbeddingIndex, RankSource, RankedDoc, RankedDocs, RetrievalError,
};
use crate::templates::PromptSet;

use super::metrics::{exact_match, hit_at_k, MetricsError, RankingRecord};
use super::QAPair;

/// The ensemble-depth combinations swept by the default grid search.
pub const DEFAULT_GRID: [(usize, usize); 5] = [(70, 30), (60, 40), (50, 50), (40, 60), (30, 70)];

/// Errors that abort evaluation (per-question stage errors never do; they
/// are recorded on the question instead).
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("duplicate question id: {0}")]
    DuplicateQuestion(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Client(#[from] ClientError),
}

/// Why a question produced no answer (terminal reasons) or needed the
/// rerank fallback (`RerankParse`, diagnostic: the question still ran to
/// completion on the ensemble order).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    /// Both retrievers returned nothing; there was no candidate to reason
    /// over.
    RetrievalEmpty,
    /// The rerank model replied but no candidate id could be parsed from the
    /// reply; the ensemble order was used instead.
    RerankParse,
    /// The reasoning model's reply had no recognizable answer even after one
    /// corrective re-prompt.
    ReasoningParse,
    /// A model call failed after retries.
    ClientError,
}

/// All knobs of one experiment. Serializable so a run's exact settings
/// travel with its report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// BM25 candidate document count (top-n).
    pub n: usize,
    /// Embedding candidate document count (top-m).
    pub m: usize,
    /// BM25 term-saturation parameter.
    pub k1: f64,
    /// BM25 length-normalization parameter.
    pub b: f64,
    /// Token budget for budgeted chunk selection before reranking.
    pub rerank_budget_tokens: usize,
    /// Table representation used for the BM25 corpus.
    pub bm25_strategy: TableStrategy,
    /// Table representation used for the embedding corpus.
    pub embedding_strategy: TableStrategy,
    /// How table summaries are worded (deterministic template or model).
    pub summarizer: SummarizerSpec,
    /// Cutoffs reported for the retrieval hit rate.
    pub k_list: Vec<usize>,
    /// Relative tolerance for treating the model's number and the
    /// calculator's as the same answer.
    pub agreement_tolerance: f64,
    /// Bounded parallelism for evaluation runs.
    pub workers: usize,
    /// Completion cap passed on reasoning calls.
    pub max_output_tokens: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n: 40,
            m: 60,
            k1: crate::retrieval::DEFAULT_K1,
            b: crate::retrieval::DEFAULT_B,
            rerank_budget_tokens: 100_000,
            bm25_strategy: TableStrategy::TableLevel,
            embedding_strategy: TableStrategy::Hrcl,
            summarizer: SummarizerSpec::Template,
            k_list: vec![1, 3, 5, 10],
            agreement_tolerance: 1e-3,
            workers: 1,
            max_output_tokens: 1024,
        }
    }
}

impl PipelineConfig {
    /// Reject configurations the pipeline cannot run with.
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.n == 0 {
            return Err(EvalError::Config("n must be at least 1".into()));
        }
        if self.m == 0 {
            return Err(EvalError::Config("m must be at least 1".into()));
        }
        if !(self.k1.is_finite() && self.k1 >= 0.0) {
            return Err(EvalError::Config(format!(
                "k1 must be finite and >= 0, got {}",
                self.k1
            )));
        }
        if !(self.b.is_finite() && (0.0..=1.0).contains(&self.b)) {
            return Err(EvalError::Config(format!(
                "b must lie in [0, 1], got {}",
                self.b
            )));
        }
        if self.k_list.is_empty() {
            return Err(EvalError::Config(
                "k_list must name at least one cutoff".into(),
            ));
        }
        if self.k_list.contains(&0) {
            return Err(EvalError::Config(
                "k_list entries must be at least 1".into(),
            ));
        }
        if !(self.agreement_tolerance.is_finite() && self.agreement_tolerance > 0.0) {
            return Err(EvalError::Config(format!(
                "agreement_tolerance must be finite and > 0, got {}",
                self.agreement_tolerance
            )));
        }
        if self.workers == 0 {
            return Err(EvalError::Config("workers must be at least 1".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(EvalError::Config(
                "max_output_tokens must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// The model-facing collaborators a pipeline needs.
#[derive(Clone)]
pub struct PipelineDeps {
    pub completion: Arc<dyn CompletionClient>,
    pub counter: Arc<dyn TokenCounter>,
    pub resolver: Arc<dyn CoreferenceResolver>,
    pub templates: PromptSet,
}

impl PipelineDeps {
    /// Deps with the heuristic token counter, identity resolver, and
    /// built-in prompts.
    pub fn new(completion: Arc<dyn CompletionClient>) -> Self {
        PipelineDeps {
            completion,
            counter: Arc::new(HeuristicTokenCounter),
            resolver: Arc::new(IdentityResolver),
            templates: PromptSet::builtin(),
        }
    }

    pub fn with_counter(mut self, counter: Arc<dyn TokenCounter>) -> Self {
        self.counter = counter;
        self
    }

    pub fn with_resolver(mut self, resolver: Arc<dyn CoreferenceResolver>) -> Self {
        self.resolver = resolver;
        self
    }

    pub fn with_templates(mut self, templates: PromptSet) -> Self {
        self.templates = templates;
        self
    }
}

/// Supplies the dense embedder once the embedding corpus is known (the
/// bag-of-words embedder derives its vocabulary from the corpus itself;
/// provider-backed embedders ignore it).
pub trait EmbedderProvider: Send + Sync {
    fn build(&self, chunks: &[Chunk]) -> Result<Arc<dyn Embedder>, ClientError>;
}

/// Bag-of-words embedder whose vocabulary is the corpus vocabulary.
#[derive(Debug, Clone, Copy, Default)]
pub struct BowProvider;

impl EmbedderProvider for BowProvider {
    fn build(&self, chunks: &[Chunk]) -> Result<Arc<dyn Embedder>, ClientError> {
        let embedder = BowEmbedder::from_texts(chunks.iter().map(|c| c.text.as_str()))?;
        Ok(Arc::new(embedder))
    }
}

/// Wraps an already-constructed embedder (e.g. an HTTP-backed one).
pub struct FixedEmbedderProvider(pub Arc<dyn Embedder>);

impl EmbedderProvider for FixedEmbedderProvider {
    fn build(&self, _chunks: &[Chunk]) -> Result<Arc<dyn Embedder>, ClientError> {
        Ok(self.0.clone())
    }
}

/// Both chunk corpora plus the completion tokens spent producing them
/// (zero with the template summarizer and identity resolver).
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltCorpora {
    pub bm25_chunks: Vec<Chunk>,
    pub embedding_chunks: Vec<Chunk>,
    pub preprocessing_tokens: u64,
}

/// Build the sparse-retrieval corpus and the dense-retrieval corpus from the
/// same documents, each with its configured table representation.
pub fn build_corpora(
    config: &PipelineConfig,
    docs: &[Document],
    deps: &PipelineDeps,
) -> Result<BuiltCorpora, EvalError> {
    config.validate()?;
    let mut bm25_builder = CorpusBuilder::new(config.bm25_strategy, config.summarizer.clone())
        .with_templates(deps.templates.clone())
        .with_client(deps.completion.clone())
        .with_counter(deps.counter.clone())
        .with_resolver(deps.resolver.clone());
    let bm25_chunks = bm25_builder.build(docs)?;
    let mut embedding_builder =
        CorpusBuilder::new(config.embedding_strategy, config.summarizer.clone())
            .with_templates(deps.templates.clone())
            .with_client(deps.completion.clone())
            .with_counter(deps.counter.clone())
            .with_resolver(deps.resolver.clone());
    let embedding_chunks = embedding_builder.build(docs)?;
    let preprocessing_tokens = bm25_builder.client_tokens() + embedding_builder.client_tokens();
    Ok(BuiltCorpora {
        bm25_chunks,
        embedding_chunks,
        preprocessing_tokens,
    })
}

/// Everything the `answer` stage produced for one question. Stage errors are
/// recorded in `failure` rather than returned, so evaluation never aborts.
#[derive(Debug, Clone)]
pub struct AnswerOutcome {
    pub bm25: RankedDocs,
    pub embedding: RankedDocs,
    pub merged: RankedDocs,
    /// Final document ordering (reranked, or the ensemble order on
    /// fallback). Empty when retrieval found nothing.
    pub ranking: RankedDocs,
    pub chosen: Option<String>,
    pub answer: Option<String>,
    pub trace: Option<RecapTrace>,
    pub failure: Option<FailureReason>,
    /// True when the final ordering is the ensemble order rather than a
    /// model-derived one (for any reason).
    pub rerank_fallback: bool,
    /// Raw rerank model reply, when a rerank call was made.
    pub rerank_raw: Option<String>,
    /// Completion tokens spent on this question (rerank + reasoning calls).
    pub generation_tokens: u64,
}

/// One evaluated question, serialized into the experiment report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub question: String,
    pub gold_doc_id: String,
    pub gold_answer: String,
    /// Final document ordering, best first.
    pub ranking: Vec<String>,
    /// Document the answer was generated from.
    pub chosen: Option<String>,
    /// 1-based rank of the gold document in `ranking`, if present.
    pub hit_rank: Option<usize>,
    pub answer: Option<String>,
    pub exact_match: bool,
    pub failure: Option<FailureReason>,
    pub rerank_fallback: bool,
    pub generation_tokens: u64,
    pub wall_seconds: f64,
    pub trace: Option<RecapTrace>,
}

/// Aggregate metrics over a record set; always recomputable from the
/// records themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub questions: usize,
    /// Hit rate per cutoff in the configured k list.
    pub hit_at_k: BTreeMap<usize, f64>,
    pub exact_match: f64,
    /// Count per failure reason (absent reasons omitted).
    pub failures: BTreeMap<FailureReason, usize>,
    /// Fraction of questions that used the ensemble-order fallback.
    pub fallback_rate: f64,
    pub total_generation_tokens: u64,
    pub mean_generation_tokens: f64,
    /// Corpus-build completion tokens for the whole run (not per question).
    pub preprocessing_tokens: u64,
    pub mean_preprocessing_tokens: f64,
    pub mean_wall_seconds: f64,
    pub p95_wall_seconds: f64,
}

impl Aggregates {
    /// Recompute every aggregate from per-question records.
    pub fn from_records(
        records: &[QuestionRecord],
        k_list: &[usize],
        preprocessing_tokens: u64,
    ) -> Result<Self, MetricsError> {
        if records.is_empty() {
            return Err(MetricsError::EmptyRecords);
        }
        let ranking_records: Vec<RankingRecord> = records
            .iter()
            .map(|r| RankingRecord {
                ranking: r.ranking.clone(),
                gold_doc_id: r.gold_doc_id.clone(),
            })
            .collect();
        let mut hit = BTreeMap::new();
        for &k in k_list {
            hit.insert(k, hit_at_k(&ranking_records, k)?);
        }
        let n = records.len() as f64;
        let mut failures: BTreeMap<FailureReason, usize> = BTreeMap::new();
        for record in records {
            if let Some(reason) = record.failure {
                *failures.entry(reason).or_insert(0) += 1;
            }
        }
        let total_generation_tokens: u64 = records.iter().map(|r| r.generation_tokens).sum();
        let mut walls: Vec<f64> = records.iter().map(|r| r.wall_seconds).collect();
        walls.sort_by(f64::total_cmp);
        // Nearest-rank percentile over the sorted timings.
        let p95_index = ((walls.len() as f64 * 0.95).ceil() as usize).clamp(1, walls.len()) - 1;
        Ok(Aggregates {
            questions: records.len(),
            hit_at_k: hit,
            exact_match: records.iter().filter(|r| r.exact_match).count() as f64 / n,
            failures,
            fallback_rate: records.iter().filter(|r| r.rerank_fallback).count() as f64 / n,
            total_generation_tokens,
            mean_generation_tokens: total_generation_tokens as f64 / n,
            preprocessing_tokens,
            mean_preprocessing_tokens: preprocessing_tokens as f64 / n,
            mean_wall_seconds: walls.iter().sum::<f64>() / n,
            p95_wall_seconds: walls[p95_index],
        })
    }
}

/// A full evaluation run: the configuration it ran under, every question's
/// record, and the aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: PipelineConfig,
    pub records: Vec<QuestionRecord>,
    pub aggregates: Aggregates,
}

impl ExperimentReport {
    /// Copy with all wall-clock fields zeroed, so two runs can be compared
    /// byte-for-byte regardless of timing.
    pub fn zero_timing(&self) -> ExperimentReport {
        let mut copy = self.clone();
        for record in &mut copy.records {
            record.wall_seconds = 0.0;
        }
        copy.aggregates.mean_wall_seconds = 0.0;
        copy.aggregates.p95_wall_seconds = 0.0;
        copy
    }
}

/// One row of the ensemble-depth grid sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub n: usize,
    pub m: usize,
    /// Mean deduplicated candidate count across questions.
    pub mean_unique_candidates: f64,
    /// Fraction of questions whose gold document is in the merged set.
    pub gold_containment: f64,
}

/// The assembled engine: both indices, the embedder, per-document chunk
/// lists for the rerank/reasoning stages, and the model clients.
pub struct Pipeline {
    config: PipelineConfig,
    bm25: Bm25Index,
    embedding: EmbeddingIndex,
    embedder: Arc<dyn Embedder>,
    doc_chunks: BTreeMap<String, Vec<Chunk>>,
    completion: Arc<dyn CompletionClient>,
    counter: Arc<dyn TokenCounter>,
    templates: PromptSet,
    preprocessing_tokens: u64,
}

impl Pipeline {
    /// Build corpora and indices from documents in one step.
    pub fn prepare(
        config: PipelineConfig,
        docs: &[Document],
        deps: &PipelineDeps,
        provider: &dyn EmbedderProvider,
    ) -> Result<Self, EvalError> {
        let corpora = build_corpora(&config, docs, deps)?;
        Self::from_corpora(config, &corpora, deps, provider)
    }

    /// Build both indices from already-constructed corpora.
    pub fn from_corpora(
        config: PipelineConfig,
        corpora: &BuiltCorpora,
        deps: &PipelineDeps,
        provider: &dyn EmbedderProvider,
    ) -> Result<Self, EvalError> {
        config.validate()?;
        let bm25 = Bm25Index::build(&corpora.bm25_chunks, config.k1, config.b)?;
        let embedder = provider.build(&corpora.embedding_chunks)?;
        let embedding = EmbeddingIndex::build(&corpora.embedding_chunks, embedder.as_ref())?;
        Ok(Self::assemble(
            config,
            bm25,
            embedding,
            embedder,
            &corpora.embedding_chunks,
            deps,
            corpora.preprocessing_tokens,
        ))
    }

    /// Assemble from cached indices. The embedder is rebuilt from the
    /// embedding corpus (its vocabulary is part of no cache). Cached BM25
    /// parameters must match the configuration.
    #[allow(clippy::too_many_arguments)]
    pub fn with_indices(
        config: PipelineConfig,
        bm25: Bm25Index,
        embedding: EmbeddingIndex,
        embedding_chunks: &[Chunk],
        deps: &PipelineDeps,
        provider: &dyn EmbedderProvider,
        preprocessing_tokens: u64,
    ) -> Result<Self, EvalError> {
        config.validate()?;
        if (bm25.k1() - config.k1).abs() > 1e-12 || (bm25.b() - config.b).abs() > 1e-12 {
            return Err(EvalError::Config(format!(
                "cached BM25 index used k1={}, b={} but the configuration asks for k1={}, b={}; \
                 rebuild the index",
                bm25.k1(),
                bm25.b(),
                config.k1,
                config.b
            )));
        }
        let embedder = provider.build(embedding_chunks)?;
        Ok(Self::assemble(
            config,
            bm25,
            embedding,
            embedder,
            embedding_chunks,
            deps,
            preprocessing_tokens,
        ))
    }

    fn assemble(
        config: PipelineConfig,
        bm25: Bm25Index,
        embedding: EmbeddingIndex,
        embedder: Arc<dyn Embedder>,
        embedding_chunks: &[Chunk],
        deps: &PipelineDeps,
        preprocessing_tokens: u64,
    ) -> Self {
        let mut doc_chunks: BTreeMap<String, Vec<Chunk>> = BTreeMap::new();
        for chunk in embedding_chunks {
            doc_chunks
                .entry(chunk.doc_id.clone())
                .or_default()
                .push(chunk.clone());
        }
        Pipeline {
            config,
            bm25,
            embedding,
            embedder,
            doc_chunks,
            completion: deps.completion.clone(),
            counter: deps.counter.clone(),
            templates: deps.templates.clone(),
            preprocessing_tokens,
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn bm25(&self) -> &Bm25Index {
        &self.bm25
    }

    pub fn embedding(&self) -> &EmbeddingIndex {
        &self.embedding
    }

    /// Completion tokens spent building the corpora this pipeline runs on.
    pub fn preprocessing_tokens(&self) -> u64 {
        self.preprocessing_tokens
    }

    /// Run the full three-stage pipeline for one question. Stage errors are
    /// absorbed into the outcome's `failure` field.
    pub fn answer(&self, question: &str) -> AnswerOutcome {
        let bm25 = self.bm25.retrieve(question, self.config.n);
        let embedding =
            match self
                .embedding
                .retrieve(question, self.config.m, self.embedder.as_ref())
            {
                Ok(ranked) => ranked,
                Err(err) => {
                    log::warn!("embedding retrieval failed: {err}");
                    return AnswerOutcome {
                        bm25,
                        embedding: RankedDocs::empty(RankSource::Embedding),
                        merged: RankedDocs::empty(RankSource::Merged),
                        ranking: RankedDocs::empty(RankSource::Reranked),
                        chosen: None,
                        answer: None,
                        trace: None,
                        failure: Some(FailureReason::ClientError),
                        rerank_fallback: false,
                        rerank_raw: None,
                        generation_tokens: 0,
                    };
                }
            };
        let merged = ensemble_merge(&bm25, &embedding);
        if merged.is_empty() {
            return AnswerOutcome {
                bm25,
                embedding,
                merged,
                ranking: RankedDocs::empty(RankSource::Reranked),
                chosen: None,
                answer: None,
                trace: None,
                failure: Some(FailureReason::RetrievalEmpty),
                rerank_fallback: false,
                rerank_raw: None,
                generation_tokens: 0,
            };
        }

        let candidates: Vec<DocChunks> = merged
            .doc_ids()
            .map(|doc_id| DocChunks {
                doc_id: doc_id.to_string(),
                chunks: self.doc_chunks.get(doc_id).cloned().unwrap_or_default(),
            })
            .collect();
        let mut generation_tokens = 0u64;
        let scorer = CosineScorer::new(&self.embedding, self.embedder.as_ref());
        let budget = TokenBudget {
            max_tokens: self.config.rerank_budget_tokens,
        };
        let selection = select_top(
            question,
            &candidates,
            budget,
            &scorer,
            self.counter.as_ref(),
        );

        let (ranking, chosen, rerank_fallback, rerank_raw, recap_chunks) = match selection {
            Ok(selection) => {
                let filtered: Vec<_> = candidates
                    .iter()
                    .map(|doc| recombine(&selection, doc))
                    .collect();
                match llm_rerank(
                    question,
                    &filtered,
                    &merged,
                    self.completion.as_ref(),
                    self.counter.as_ref(),
                    self.templates.rerank(),
                ) {
                    Ok(outcome) => {
                        generation_tokens += outcome.tokens;
                        let chosen = outcome.chosen;
                        let filtered_chosen = filtered
                            .iter()
                            .find(|f| f.doc_id == chosen)
                            .map(|f| f.chunks.clone())
                            .unwrap_or_default();
                        // Reason over the budget-selected view of the chosen
                        // document; if selection eliminated it entirely, fall
                        // back to its full chunk list.
                        let recap_chunks = if filtered_chosen.is_empty() {
                            self.doc_chunks.get(&chosen).cloned().unwrap_or_default()
                        } else {
                            filtered_chosen
                        };
                        (
                            outcome.ranking,
                            chosen,
                            outcome.fallback_used,
                            Some(outcome.raw_model_text),
                            recap_chunks,
                        )
                    }
                    Err(err) => {
                        log::warn!("rerank stage failed ({err}); using ensemble order");
                        self.ensemble_fallback(&merged)
                    }
                }
            }
            Err(err) => {
                log::warn!("chunk selection failed ({err}); using ensemble order");
                self.ensemble_fallback(&merged)
            }
        };

        let (answer, trace, mut failure) = match run_recap(
            question,
            &recap_chunks,
            self.completion.as_ref(),
            self.counter.as_ref(),
            self.templates.recap(),
            self.config.agreement_tolerance,
            self.config.max_output_tokens,
        ) {
            Ok(run) => {
                generation_tokens += run.tokens;
                (
                    Some(run.trace.selected_answer.clone()),
                    Some(run.trace),
                    None,
                )
            }
            Err(ReasoningError::Unparseable) => (None, None, Some(FailureReason::ReasoningParse)),
            Err(ReasoningError::Client(err)) => {
                log::warn!("reasoning completion failed: {err}");
                (None, None, Some(FailureReason::ClientError))
            }
        };

        // A rerank fallback caused by an unusable (non-empty) reply is
        // reported as a parse failure even though the question completed on
        // the ensemble order. A fallback with no reply text (model call
        // failed after retries) carries no failure mark of its own.
        if failure.is_none()
            && rerank_fallback
            && rerank_raw.as_deref().is_some_and(|raw| !raw.is_empty())
        {
            failure = Some(FailureReason::RerankParse);
        }

        AnswerOutcome {
            bm25,
            embedding,
            merged,
            ranking,
            chosen: Some(chosen),
            answer,
            trace,
            failure,
            rerank_fallback,
            rerank_raw,
            generation_tokens,
        }
    }

    /// The fallback rerank result: ensemble order re-labeled as the final
    /// ranking, reasoning over the chosen document's full chunk list.
    fn ensemble_fallback(
        &self,
        merged: &RankedDocs,
    ) -> (RankedDocs, String, bool, Option<String>, Vec<Chunk>) {
        let entries = merged
            .doc_ids()
            .enumerate()
            .map(|(i, doc_id)| RankedDoc {
                doc_id: doc_id.to_string(),
                score: 1.0 / (i + 1) as f64,
            })
            .collect();
        let ranking = RankedDocs::new(RankSource::Reranked, entries)
            .expect("1/rank scores are strictly decreasing");
        let chosen = ranking.entries()[0].doc_id.clone();
        let chunks = self.doc_chunks.get(&chosen).cloned().unwrap_or_default();
        (ranking, chosen, true, None, chunks)
    }

    /// Evaluate a QA set: every question through the full pipeline, records
    /// ordered by question id, aggregates recomputed from the records.
    pub fn run(&self, qa: &[QAPair]) -> Result<ExperimentReport, EvalError> {
        let mut seen = BTreeSet::new();
        for pair in qa {
            if !seen.insert(pair.question_id.as_str()) {
                return Err(EvalError::DuplicateQuestion(pair.question_id.clone()));
            }
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers)
            .build()
            .map_err(|err| EvalError::Config(format!("cannot build worker pool: {err}")))?;
        let mut records: Vec<QuestionRecord> = pool.install(|| {
            qa.par_iter()
                .map(|pair| self.evaluate_question(pair))
                .collect()
        });
        records.sort_by(|a, b| a.question_id.cmp(&b.question_id));
        let aggregates =
            Aggregates::from_records(&records, &self.config.k_list, self.preprocessing_tokens)?;
        Ok(ExperimentReport {
            config: self.config.clone(),
            records,
            aggregates,
        })
    }

    fn evaluate_question(&self, pair: &QAPair) -> QuestionRecord {
        let started = Instant::now();
        let outcome = self.answer(&pair.question);
        let wall_seconds = started.elapsed().as_secs_f64();
        let ranking: Vec<String> = outcome.ranking.doc_ids().map(str::to_string).collect();
        let hit_rank = ranking
            .iter()
            .position(|doc| *doc == pair.gold_doc_id)
            .map(|i| i + 1);
        let matched = outcome
            .answer
            .as_deref()
            .is_some_and(|answer| exact_match(answer, &pair.gold_answer));
        QuestionRecord {
            question_id: pair.question_id.clone(),
            question: pair.question.clone(),
            gold_doc_id: pair.gold_doc_id.clone(),
            gold_answer: pair.gold_answer.clone(),
            ranking,
            chosen: outcome.chosen,
            hit_rank,
            answer: outcome.answer,
            exact_match: matched,
            failure: outcome.failure,
            rerank_fallback: outcome.rerank_fallback,
            generation_tokens: outcome.generation_tokens,
            wall_seconds,
            trace: outcome.trace,
        }
    }

    /// Ensemble-stage-only sweep over (n, m) combinations: per combination,
    /// the mean deduplicated candidate count and the gold-containment rate.
    /// A zero n or m disables that retriever for the combination.
    pub fn grid_search(
        &self,
        qa: &[QAPair],
        combos: &[(usize, usize)],
    ) -> Result<Vec<GridRow>, EvalError> {
        if combos.is_empty() {
            return Err(EvalError::Config(
                "grid search needs at least one (n, m) combination".into(),
            ));
        }
        if qa.is_empty() {
            return Err(EvalError::Metrics(MetricsError::EmptyRecords));
        }
        let mut rows = Vec::with_capacity(combos.len());
        for &(n, m) in combos {
            let mut unique_sum = 0usize;
            let mut contained = 0usize;
            for pair in qa {
                let bm25 = self.bm25.retrieve(&pair.question, n);
                let embedding = self
                    .embedding
                    .retrieve(&pair.question, m, self.embedder.as_ref())
                    .unwrap_or_else(|err| {
                        log::warn!("embedding retrieval failed in grid search: {err}");
                        RankedDocs::empty(RankSource::Embedding)
                    });
                let merged = ensemble_merge(&bm25, &embedding);
                unique_sum += merged.len();
                if merged.contains(&pair.gold_doc_id) {
                    contained += 1;
                }
            }
            rows.push(GridRow {
                n,
                m,
                mean_unique_candidates: unique_sum as f64 / qa.len() as f64,
                gold_containment: contained as f64 / qa.len() as f64,
            });
        }
        Ok(rows)
    }
}
