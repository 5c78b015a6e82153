//! Command implementations: cache-aware corpus and index construction plus
//! the user-facing ingest / index / retrieve / answer / eval / grid flows.
//!
//! Cache layout under `<out>/cache/`:
//!
//! - `corpus.bm25.jsonl`, `corpus.embedding.jsonl` — chunk corpora
//! - `corpus.meta.json` — build fingerprint and token accounting
//! - `index.bm25.json`, `index.embedding.json` — serialized indices keyed by
//!   corpus hash (plus the parameters they were built with)
//!
//! Caches are advisory: anything missing, corrupt, version-mismatched, or
//! keyed differently is rebuilt from the documents.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use hetdoc_core::clients::{HttpCompletionClient, HttpEmbedder};
use hetdoc_core::corpus::Document;
use hetdoc_core::eval::{
    build_corpora, BowProvider, BuiltCorpora, EmbedderProvider, ExperimentReport, FailureReason,
    FixedEmbedderProvider, GridRow, Pipeline, PipelineDeps, QAPair,
};
use hetdoc_core::retrieval::{ensemble_merge, Bm25Index, EmbeddingIndex, RankedDocs};
use hetdoc_core::store::{self, CorpusMeta, CACHE_VERSION};
use hetdoc_core::{CompletionClient, MockCompletionClient, PromptSet};

use crate::config::{CompletionChoice, EmbeddingChoice, Settings, SplitChoice};

pub struct App {
    settings: Settings,
    deps: PipelineDeps,
    provider: Box<dyn EmbedderProvider>,
}

impl App {
    pub fn new(settings: Settings) -> Result<App> {
        let completion: Arc<dyn CompletionClient> = match &settings.completion {
            CompletionChoice::Mock {
                script: Some(script),
            } => Arc::new(
                MockCompletionClient::from_script_file(script)
                    .with_context(|| format!("cannot load mock script {}", script.display()))?,
            ),
            CompletionChoice::Mock { script: None } => {
                Arc::new(MockCompletionClient::new(Vec::new()))
            }
            CompletionChoice::Http => Arc::new(
                HttpCompletionClient::from_env()
                    .context("cannot configure the HTTP completion client")?,
            ),
        };
        let mut deps = PipelineDeps::new(completion);
        if let Some(dir) = &settings.templates_dir {
            let templates = PromptSet::load_dir(dir)
                .with_context(|| format!("cannot load templates from {}", dir.display()))?;
            deps = deps.with_templates(templates);
        }
        let provider: Box<dyn EmbedderProvider> = match &settings.embedding {
            EmbeddingChoice::Bow => Box::new(BowProvider),
            EmbeddingChoice::Http { dim } => {
                let embedder = HttpEmbedder::from_env(*dim)
                    .context("cannot configure the HTTP embedding client")?;
                Box::new(FixedEmbedderProvider(Arc::new(embedder)))
            }
        };
        Ok(App {
            settings,
            deps,
            provider,
        })
    }

    fn cache_dir(&self) -> PathBuf {
        self.settings.out_dir.join("cache")
    }

    fn cache_path(&self, name: &str) -> PathBuf {
        self.cache_dir().join(name)
    }

    /// Everything the corpus build depends on: the document files and the
    /// representation settings. Stored in the corpus metadata; a mismatch
    /// forces a rebuild.
    fn build_fingerprint(&self) -> Result<String> {
        let docs = store::docs_fingerprint(&self.settings.docs_dir)
            .with_context(|| format!("cannot scan {}", self.settings.docs_dir.display()))?;
        let repr = serde_json::to_string(&(
            &self.settings.pipeline.bm25_strategy,
            &self.settings.pipeline.embedding_strategy,
            &self.settings.pipeline.summarizer,
        ))
        .expect("representation settings serialize infallibly");
        Ok(format!("{docs}|{repr}"))
    }

    fn load_documents(&self) -> Result<Vec<Document>> {
        let docs = store::load_documents_dir(&self.settings.docs_dir).with_context(|| {
            format!(
                "cannot load documents from {}",
                self.settings.docs_dir.display()
            )
        })?;
        if docs.is_empty() {
            bail!(
                "no *.json documents found in {}",
                self.settings.docs_dir.display()
            );
        }
        Ok(docs)
    }

    fn load_qa(&self) -> Result<Vec<QAPair>> {
        let qa = store::load_qa_jsonl(&self.settings.qa_path).with_context(|| {
            format!(
                "cannot load QA records from {}",
                self.settings.qa_path.display()
            )
        })?;
        let filtered: Vec<QAPair> = match self.settings.split {
            SplitChoice::All => qa,
            SplitChoice::One(split) => qa.into_iter().filter(|p| p.split == split).collect(),
        };
        if filtered.is_empty() {
            bail!(
                "no QA records in {} match the configured split",
                self.settings.qa_path.display()
            );
        }
        Ok(filtered)
    }

    /// Return cached corpora when fresh, otherwise rebuild and refresh the
    /// cache. The boolean reports whether a rebuild happened.
    fn ensure_corpora(&self, docs: &[Document]) -> Result<(BuiltCorpora, bool)> {
        std::fs::create_dir_all(self.cache_dir())
            .with_context(|| format!("cannot create {}", self.cache_dir().display()))?;
        let fingerprint = self.build_fingerprint()?;
        let meta_path = self.cache_path("corpus.meta.json");
        let bm25_path = self.cache_path("corpus.bm25.jsonl");
        let embedding_path = self.cache_path("corpus.embedding.jsonl");

        if let Some(meta) = store::load_corpus_meta(&meta_path) {
            if meta.docs_fingerprint == fingerprint {
                if let (Ok(bm25_chunks), Ok(embedding_chunks)) = (
                    store::read_chunks_jsonl(&bm25_path),
                    store::read_chunks_jsonl(&embedding_path),
                ) {
                    if store::corpus_hash(&bm25_chunks) == meta.bm25_hash
                        && store::corpus_hash(&embedding_chunks) == meta.embedding_hash
                    {
                        log::info!("reusing cached corpora from {}", self.cache_dir().display());
                        return Ok((
                            BuiltCorpora {
                                bm25_chunks,
                                embedding_chunks,
                                preprocessing_tokens: meta.preprocessing_tokens,
                            },
                            false,
                        ));
                    }
                }
                log::info!("corpus cache unreadable or inconsistent; rebuilding");
            } else {
                log::info!("documents or representation settings changed; rebuilding corpora");
            }
        }

        let corpora = build_corpora(&self.settings.pipeline, docs, &self.deps)
            .context("corpus construction failed")?;
        store::write_chunks_jsonl(&bm25_path, &corpora.bm25_chunks)
            .with_context(|| format!("cannot write {}", bm25_path.display()))?;
        store::write_chunks_jsonl(&embedding_path, &corpora.embedding_chunks)
            .with_context(|| format!("cannot write {}", embedding_path.display()))?;
        store::write_corpus_meta(
            &meta_path,
            &CorpusMeta {
                version: CACHE_VERSION,
                docs_fingerprint: fingerprint,
                bm25_hash: store::corpus_hash(&corpora.bm25_chunks),
                embedding_hash: store::corpus_hash(&corpora.embedding_chunks),
                preprocessing_tokens: corpora.preprocessing_tokens,
            },
        )
        .with_context(|| format!("cannot write {}", meta_path.display()))?;
        Ok((corpora, true))
    }

    fn bm25_cache_key(&self, corpora: &BuiltCorpora) -> String {
        format!(
            "{}|k1={}|b={}",
            store::corpus_hash(&corpora.bm25_chunks),
            self.settings.pipeline.k1,
            self.settings.pipeline.b
        )
    }

    fn embedding_cache_key(&self, corpora: &BuiltCorpora) -> String {
        let embedder = match &self.settings.embedding {
            EmbeddingChoice::Bow => "bow".to_string(),
            EmbeddingChoice::Http { dim } => format!("http:dim={dim}"),
        };
        format!(
            "{}|{embedder}",
            store::corpus_hash(&corpora.embedding_chunks)
        )
    }

    /// Load both indices from cache when their keys match, otherwise build
    /// and persist them. The boolean reports whether a rebuild happened.
    fn ensure_indices(&self, corpora: &BuiltCorpora) -> Result<(Bm25Index, EmbeddingIndex, bool)> {
        let bm25_path = self.cache_path("index.bm25.json");
        let embedding_path = self.cache_path("index.embedding.json");
        let bm25_key = self.bm25_cache_key(corpora);
        let embedding_key = self.embedding_cache_key(corpora);

        let cached_bm25: Option<Bm25Index> = store::load_index_cache(&bm25_path, &bm25_key);
        let cached_embedding: Option<EmbeddingIndex> =
            store::load_index_cache(&embedding_path, &embedding_key);
        if let (Some(bm25), Some(embedding)) = (cached_bm25, cached_embedding) {
            log::info!("reusing cached indices from {}", self.cache_dir().display());
            return Ok((bm25, embedding, false));
        }

        let bm25 = Bm25Index::build(
            &corpora.bm25_chunks,
            self.settings.pipeline.k1,
            self.settings.pipeline.b,
        )
        .context("cannot build the BM25 index")?;
        let embedder = self
            .provider
            .build(&corpora.embedding_chunks)
            .context("cannot construct the embedder")?;
        let embedding = EmbeddingIndex::build(&corpora.embedding_chunks, embedder.as_ref())
            .context("cannot build the embedding index")?;
        store::write_index_cache(&bm25_path, &bm25_key, &bm25)
            .with_context(|| format!("cannot write {}", bm25_path.display()))?;
        store::write_index_cache(&embedding_path, &embedding_key, &embedding)
            .with_context(|| format!("cannot write {}", embedding_path.display()))?;
        Ok((bm25, embedding, true))
    }

    fn pipeline(&self, corpora: &BuiltCorpora) -> Result<Pipeline> {
        let (bm25, embedding, _) = self.ensure_indices(corpora)?;
        Pipeline::with_indices(
            self.settings.pipeline.clone(),
            bm25,
            embedding,
            &corpora.embedding_chunks,
            &self.deps,
            self.provider.as_ref(),
            corpora.preprocessing_tokens,
        )
        .context("cannot assemble the pipeline")
    }

    // ----- commands --------------------------------------------------------

    pub fn ingest(&self) -> Result<()> {
        let docs = self.load_documents()?;
        let qa = store::load_qa_jsonl(&self.settings.qa_path).with_context(|| {
            format!(
                "cannot load QA records from {}",
                self.settings.qa_path.display()
            )
        })?;
        store::validate_qa(&qa, &docs).context("QA validation failed")?;
        let (corpora, rebuilt) = self.ensure_corpora(&docs)?;
        println!(
            "ingested {} documents and {} QA records",
            docs.len(),
            qa.len()
        );
        println!(
            "BM25 corpus: {} chunks; embedding corpus: {} chunks ({})",
            corpora.bm25_chunks.len(),
            corpora.embedding_chunks.len(),
            if rebuilt { "rebuilt" } else { "cached" }
        );
        println!(
            "preprocessing completion tokens: {}",
            corpora.preprocessing_tokens
        );
        println!("cache: {}", self.cache_dir().display());
        Ok(())
    }

    pub fn index(&self) -> Result<()> {
        let docs = self.load_documents()?;
        let (corpora, _) = self.ensure_corpora(&docs)?;
        let (bm25, embedding, rebuilt) = self.ensure_indices(&corpora)?;
        println!(
            "BM25 index: {} chunks (k1={}, b={})",
            bm25.num_chunks(),
            bm25.k1(),
            bm25.b()
        );
        println!(
            "embedding index: {} chunks, {} dimensions ({})",
            embedding.num_chunks(),
            embedding.dim(),
            if rebuilt { "rebuilt" } else { "cached" }
        );
        println!("cache: {}", self.cache_dir().display());
        Ok(())
    }

    pub fn retrieve(&self, question: &str) -> Result<()> {
        let docs = self.load_documents()?;
        let (corpora, _) = self.ensure_corpora(&docs)?;
        let (bm25_index, embedding_index, _) = self.ensure_indices(&corpora)?;
        let embedder = self
            .provider
            .build(&corpora.embedding_chunks)
            .context("cannot construct the embedder")?;
        let bm25 = bm25_index.retrieve(question, self.settings.pipeline.n);
        let embedding = embedding_index
            .retrieve(question, self.settings.pipeline.m, embedder.as_ref())
            .context("embedding retrieval failed")?;
        let merged = ensemble_merge(&bm25, &embedding);
        if merged.is_empty() {
            println!("no documents matched the question");
            return Ok(());
        }
        println!(
            "merged candidates (BM25 top-{}, embedding top-{}):",
            self.settings.pipeline.n, self.settings.pipeline.m
        );
        for (i, entry) in merged.entries().iter().enumerate() {
            let mut provenance = Vec::new();
            if let Some(rank) = bm25.rank_of(&entry.doc_id) {
                provenance.push(format!("bm25#{rank}"));
            }
            if let Some(rank) = embedding.rank_of(&entry.doc_id) {
                provenance.push(format!("embedding#{rank}"));
            }
            println!(
                "{:>3}. {:<30} score {:.4}  [{}]",
                i + 1,
                entry.doc_id,
                entry.score,
                provenance.join(", ")
            );
        }
        Ok(())
    }

    pub fn answer(&self, question: &str) -> Result<()> {
        let docs = self.load_documents()?;
        let (corpora, _) = self.ensure_corpora(&docs)?;
        let pipeline = self.pipeline(&corpora)?;
        let outcome = pipeline.answer(question);

        println!("question: {question}");
        print_ranking("bm25", &outcome.bm25);
        print_ranking("embedding", &outcome.embedding);
        print_ranking("merged", &outcome.merged);
        print_ranking("final", &outcome.ranking);
        if outcome.rerank_fallback {
            println!("rerank: fell back to the ensemble order");
        }
        match &outcome.chosen {
            Some(doc) => println!("chosen document: {doc}"),
            None => println!("chosen document: none"),
        }
        if let Some(trace) = &outcome.trace {
            println!(
                "reasoning trace:\n{}",
                serde_json::to_string_pretty(trace).expect("traces serialize infallibly")
            );
        }
        if let Some(failure) = outcome.failure {
            println!("failure: {}", failure_label(failure));
        }
        println!("generation tokens: {}", outcome.generation_tokens);
        match &outcome.answer {
            Some(answer) => println!("answer: {answer}"),
            None => println!("answer: none"),
        }
        Ok(())
    }

    pub fn eval(&self) -> Result<()> {
        let docs = self.load_documents()?;
        let qa = self.load_qa()?;
        store::validate_qa(&qa, &docs).context("QA validation failed")?;
        let (corpora, _) = self.ensure_corpora(&docs)?;
        let pipeline = self.pipeline(&corpora)?;
        let report = pipeline.run(&qa).context("evaluation failed")?;

        std::fs::create_dir_all(&self.settings.out_dir)
            .with_context(|| format!("cannot create {}", self.settings.out_dir.display()))?;
        let report_json = self.settings.out_dir.join("report.json");
        std::fs::write(
            &report_json,
            serde_json::to_vec_pretty(&report).expect("reports serialize infallibly"),
        )
        .with_context(|| format!("cannot write {}", report_json.display()))?;

        let traces_path = self.settings.out_dir.join("traces.jsonl");
        let mut traces = String::new();
        for record in &report.records {
            traces.push_str(&serde_json::to_string(record).expect("records serialize infallibly"));
            traces.push('\n');
        }
        std::fs::write(&traces_path, traces)
            .with_context(|| format!("cannot write {}", traces_path.display()))?;

        let text = render_report(&report);
        let report_txt = self.settings.out_dir.join("report.txt");
        std::fs::write(&report_txt, &text)
            .with_context(|| format!("cannot write {}", report_txt.display()))?;
        print!("{text}");
        println!(
            "wrote {}, {}, {}",
            report_json.display(),
            report_txt.display(),
            traces_path.display()
        );
        Ok(())
    }

    pub fn grid(&self) -> Result<()> {
        let docs = self.load_documents()?;
        let qa = self.load_qa()?;
        store::validate_qa(&qa, &docs).context("QA validation failed")?;
        let (corpora, _) = self.ensure_corpora(&docs)?;
        let pipeline = self.pipeline(&corpora)?;
        let rows = pipeline
            .grid_search(&qa, &self.settings.grid_combos)
            .context("grid search failed")?;

        std::fs::create_dir_all(&self.settings.out_dir)
            .with_context(|| format!("cannot create {}", self.settings.out_dir.display()))?;
        let grid_path = self.settings.out_dir.join("grid.json");
        std::fs::write(
            &grid_path,
            serde_json::to_vec_pretty(&rows).expect("grid rows serialize infallibly"),
        )
        .with_context(|| format!("cannot write {}", grid_path.display()))?;

        print!("{}", render_grid(&rows));
        println!("wrote {}", grid_path.display());
        Ok(())
    }
}

fn print_ranking(stage: &str, ranking: &RankedDocs) {
    let ids: Vec<&str> = ranking.doc_ids().collect();
    if ids.is_empty() {
        println!("{stage:>10}: (empty)");
    } else {
        println!("{stage:>10}: {}", ids.join(", "));
    }
}

pub fn failure_label(reason: FailureReason) -> &'static str {
    match reason {
        FailureReason::RetrievalEmpty => "retrieval_empty",
        FailureReason::RerankParse => "rerank_parse",
        FailureReason::ReasoningParse => "reasoning_parse",
        FailureReason::ClientError => "client_error",
    }
}

/// Human-readable report: aggregates first, then one line per question.
pub fn render_report(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let agg = &report.aggregates;
    let cfg = &report.config;
    writeln!(out, "evaluation report").unwrap();
    writeln!(out, "=================").unwrap();
    writeln!(
        out,
        "settings: n={} m={} k1={} b={} budget={} workers={}",
        cfg.n, cfg.m, cfg.k1, cfg.b, cfg.rerank_budget_tokens, cfg.workers
    )
    .unwrap();
    writeln!(out, "questions: {}", agg.questions).unwrap();
    for (k, rate) in &agg.hit_at_k {
        writeln!(out, "HiT@{k}: {rate:.4}").unwrap();
    }
    writeln!(out, "exact match: {:.4}", agg.exact_match).unwrap();
    writeln!(out, "rerank fallback rate: {:.4}", agg.fallback_rate).unwrap();
    if agg.failures.is_empty() {
        writeln!(out, "failures: none").unwrap();
    } else {
        let parts: Vec<String> = agg
            .failures
            .iter()
            .map(|(reason, count)| format!("{}={count}", failure_label(*reason)))
            .collect();
        writeln!(out, "failures: {}", parts.join(", ")).unwrap();
    }
    writeln!(
        out,
        "generation tokens: total {} (mean {:.1} per question)",
        agg.total_generation_tokens, agg.mean_generation_tokens
    )
    .unwrap();
    writeln!(
        out,
        "preprocessing tokens: total {} (mean {:.1} per question)",
        agg.preprocessing_tokens, agg.mean_preprocessing_tokens
    )
    .unwrap();
    writeln!(
        out,
        "wall seconds: mean {:.4}, p95 {:.4}",
        agg.mean_wall_seconds, agg.p95_wall_seconds
    )
    .unwrap();
    writeln!(out).unwrap();
    writeln!(
        out,
        "{:<10} {:>8} {:>6}  {:<16} answer",
        "question", "hit@rank", "match", "failure"
    )
    .unwrap();
    for record in &report.records {
        let rank = record
            .hit_rank
            .map(|r| r.to_string())
            .unwrap_or_else(|| "-".into());
        let failure = record.failure.map(failure_label).unwrap_or("-");
        writeln!(
            out,
            "{:<10} {:>8} {:>6}  {:<16} {}",
            record.question_id,
            rank,
            if record.exact_match { "yes" } else { "no" },
            failure,
            record.answer.as_deref().unwrap_or("-")
        )
        .unwrap();
    }
    out
}

/// Human-readable grid table.
pub fn render_grid(rows: &[GridRow]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:>5} {:>5} {:>16} {:>18}",
        "n", "m", "mean unique k", "gold containment"
    )
    .unwrap();
    for row in rows {
        writeln!(
            out,
            "{:>5} {:>5} {:>16.2} {:>18.4}",
            row.n, row.m, row.mean_unique_candidates, row.gold_containment
        )
        .unwrap();
    }
    out
}
