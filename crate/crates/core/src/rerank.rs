//! Second-stage reranking: squeeze the merged candidates under a prompt
//! token budget by keeping only the chunks most similar to the question,
//! then ask a completion model to order the candidate documents, falling
//! back to the ensemble order whenever the model's output is unusable.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{
    with_retries, ClientError, CompletionClient, CompletionRequest, Embedder, TokenBudget,
    TokenCounter, DEFAULT_MAX_RETRIES,
};
use crate::corpus::Chunk;
use crate::retrieval::{EmbeddingIndex, RankSource, RankedDoc, RankedDocs};

/// Errors raised by the reranking stage.
#[derive(Debug, Error)]
pub enum RerankError {
    #[error(
        "token budget {budget} admits no chunk (best-ranked chunk costs {first_chunk_tokens})"
    )]
    BudgetTooSmall {
        budget: usize,
        first_chunk_tokens: usize,
    },
    #[error("no candidate documents to rerank")]
    NoCandidates,
    #[error(transparent)]
    Client(#[from] ClientError),
}

/// One candidate document with all of its chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct DocChunks {
    pub doc_id: String,
    pub chunks: Vec<Chunk>,
}

/// The outcome of budgeted chunk selection over the candidate pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkSelection {
    /// Ids of the selected chunks, in descending similarity order.
    pub selected: Vec<String>,
    /// Number of chunks selected (the size of the kept prefix).
    pub theta: usize,
    /// Token cost of the selected chunks under the budget's counter.
    pub total_tokens: usize,
}

impl ChunkSelection {
    pub fn contains(&self, chunk_id: &str) -> bool {
        self.selected.iter().any(|id| id == chunk_id)
    }
}

/// A candidate document reduced to its selected chunks (possibly none).
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredDocument {
    pub doc_id: String,
    pub chunks: Vec<Chunk>,
}

/// Result of the model reranking step.
#[derive(Debug, Clone)]
pub struct RerankOutcome {
    /// Final candidate ordering (a permutation of the input candidates).
    pub ranking: RankedDocs,
    /// The top-ranked document id.
    pub chosen: String,
    /// Raw model output, kept for tracing.
    pub raw_model_text: String,
    /// True when the model output contributed nothing and the ensemble
    /// order was used as-is.
    pub fallback_used: bool,
    /// Prompt + response tokens spent on the rerank call.
    pub tokens: u64,
}

/// Scores chunks against a query for the budgeted selection.
pub trait ChunkScorer {
    /// Similarity of every chunk in `chunks` to `query`, in order.
    fn score_chunks(&self, query: &str, chunks: &[&Chunk]) -> Result<Vec<f64>, ClientError>;
}

/// Cosine similarity using the embedding index's stored vectors (chunks that
/// never made it into the index are embedded on the fly).
pub struct CosineScorer<'a> {
    index: &'a EmbeddingIndex,
    embedder: &'a dyn Embedder,
}

impl<'a> CosineScorer<'a> {
    pub fn new(index: &'a EmbeddingIndex, embedder: &'a dyn Embedder) -> Self {
        CosineScorer { index, embedder }
    }
}

impl ChunkScorer for CosineScorer<'_> {
    fn score_chunks(&self, query: &str, chunks: &[&Chunk]) -> Result<Vec<f64>, ClientError> {
        let query_vec = self.embedder.embed(query)?;
        let mut scores = Vec::with_capacity(chunks.len());
        for chunk in chunks {
            let score = match self.index.vector_for(&chunk.chunk_id) {
                Some(stored) => crate::clients::cosine_slices(query_vec.values(), stored),
                None => query_vec.cosine(&self.embedder.embed(&chunk.text)?),
            };
            scores.push(score);
        }
        Ok(scores)
    }
}

/// Select the globally best chunks across all candidate documents under a
/// token budget: pool every chunk, sort by similarity to the query
/// (descending; ties by ascending chunk id), and keep the longest prefix
/// whose token cost stays within `budget`. Errors when even the first chunk
/// does not fit.
pub fn select_top(
    query: &str,
    candidates: &[DocChunks],
    budget: TokenBudget,
    scorer: &dyn ChunkScorer,
    counter: &dyn TokenCounter,
) -> Result<ChunkSelection, RerankError> {
    let pool: Vec<&Chunk> = candidates.iter().flat_map(|d| d.chunks.iter()).collect();
    if pool.is_empty() {
        return Err(RerankError::NoCandidates);
    }
    let scores = scorer.score_chunks(query, &pool)?;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| pool[a].chunk_id.cmp(&pool[b].chunk_id))
    });
    let mut selected = Vec::new();
    let mut total_tokens = 0usize;
    for &i in &order {
        let cost = counter.count(&pool[i].text);
        if total_tokens + cost > budget.max_tokens {
            break;
        }
        total_tokens += cost;
        selected.push(pool[i].chunk_id.clone());
    }
    if selected.is_empty() {
        return Err(RerankError::BudgetTooSmall {
            budget: budget.max_tokens,
            first_chunk_tokens: counter.count(&pool[order[0]].text),
        });
    }
    let theta = selected.len();
    Ok(ChunkSelection {
        selected,
        theta,
        total_tokens,
    })
}

/// Reduce one candidate document to its selected chunks, preserving the
/// document's own chunk order.
pub fn recombine(selection: &ChunkSelection, doc: &DocChunks) -> FilteredDocument {
    FilteredDocument {
        doc_id: doc.doc_id.clone(),
        chunks: doc
            .chunks
            .iter()
            .filter(|c| selection.contains(&c.chunk_id))
            .cloned()
            .collect(),
    }
}

/// Ask the completion model to order the candidates and parse its reply.
///
/// The prompt presents each candidate with any selected chunks, labeled by
/// document id. The reply is scanned for candidate ids (first standalone
/// occurrence position defines the order); unknown ids are ignored. Parsed
/// ids lead the final ranking; candidates the model omitted follow in
/// ensemble order. If the model call fails (after retries) or no candidate
/// id can be found, the ensemble order is used unchanged and
/// `fallback_used` is set.
pub fn llm_rerank(
    query: &str,
    filtered: &[FilteredDocument],
    ensemble: &RankedDocs,
    client: &dyn CompletionClient,
    counter: &dyn TokenCounter,
    template: &str,
) -> Result<RerankOutcome, RerankError> {
    if ensemble.is_empty() {
        return Err(RerankError::NoCandidates);
    }
    let mut documents = String::new();
    for doc in filtered.iter().filter(|d| !d.chunks.is_empty()) {
        documents.push_str(&format!("Document {}:\n", doc.doc_id));
        for chunk in &doc.chunks {
            documents.push_str(&chunk.text);
            documents.push('\n');
        }
        documents.push('\n');
    }
    let prompt = template
        .replace("{query}", query)
        .replace("{documents}", &documents);
    let request = CompletionRequest::new(prompt);
    let (raw, call_failed) = match with_retries(DEFAULT_MAX_RETRIES, || client.complete(&request)) {
        Ok(text) => (text, false),
        Err(err) => {
            log::warn!("rerank completion failed; falling back to ensemble order: {err}");
            (String::new(), true)
        }
    };
    let tokens = (counter.count(&request.prompt) + counter.count(&raw)) as u64;

    let parsed = parse_ranked_ids(&raw, ensemble);
    let fallback_used = call_failed || parsed.is_empty();
    let mut final_ids = parsed;
    for doc in ensemble.doc_ids() {
        if !final_ids.iter().any(|id| id == doc) {
            final_ids.push(doc.to_string());
        }
    }
    let entries = final_ids
        .into_iter()
        .enumerate()
        .map(|(i, doc_id)| RankedDoc {
            doc_id,
            score: 1.0 / (i + 1) as f64,
        })
        .collect();
    let ranking =
        RankedDocs::new(RankSource::Reranked, entries).expect("constructed ranking is valid");
    let chosen = ranking
        .entries()
        .first()
        .map(|e| e.doc_id.clone())
        .expect("ensemble non-empty implies ranking non-empty");
    Ok(RerankOutcome {
        ranking,
        chosen,
        raw_model_text: raw,
        fallback_used,
        tokens,
    })
}

/// Find candidate ids in the model reply by first standalone occurrence.
/// "Standalone" means the match is not embedded in a longer id-like token,
/// so candidate `d1` does not fire inside `d10`.
fn parse_ranked_ids(raw: &str, ensemble: &RankedDocs) -> Vec<String> {
    fn id_char(c: char) -> bool {
        c.is_alphanumeric() || c == '_' || c == '-'
    }
    let mut found: Vec<(usize, &str)> = Vec::new();
    for doc_id in ensemble.doc_ids() {
        let mut from = 0usize;
        while let Some(pos) = raw[from..].find(doc_id) {
            let at = from + pos;
            let before_ok = raw[..at].chars().next_back().is_none_or(|c| !id_char(c));
            let end = at + doc_id.len();
            let after_ok = raw[end..].chars().next().is_none_or(|c| !id_char(c));
            if before_ok && after_ok {
                found.push((at, doc_id));
                break;
            }
            from = end;
        }
    }
    found.sort();
    found.into_iter().map(|(_, id)| id.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::{
        BowEmbedder, FailingCompletionClient, HeuristicTokenCounter, MockCompletionClient,
    };
    use crate::corpus::ChunkKind;
    use crate::retrieval::EmbeddingIndex;

    fn chunk(chunk_id: &str, doc_id: &str, text: &str) -> Chunk {
        Chunk {
            chunk_id: chunk_id.to_string(),
            doc_id: doc_id.to_string(),
            text: text.to_string(),
            kind: ChunkKind::Sentence,
            table_id: None,
            level: None,
            order: 0,
        }
    }

    /// Deterministic scorer for tests: score = number of shared tokens.
    struct OverlapScorer;
    impl ChunkScorer for OverlapScorer {
        fn score_chunks(&self, query: &str, chunks: &[&Chunk]) -> Result<Vec<f64>, ClientError> {
            let q: Vec<String> = crate::text::tokenize(query);
            Ok(chunks
                .iter()
                .map(|c| {
                    let t = crate::text::tokenize(&c.text);
                    q.iter().filter(|tok| t.contains(tok)).count() as f64
                })
                .collect())
        }
    }

    fn candidates() -> Vec<DocChunks> {
        vec![
            DocChunks {
                doc_id: "a".into(),
                chunks: vec![
                    chunk("a#c0", "a", "alpha beta gamma"),
                    chunk("a#c1", "a", "delta epsilon"),
                ],
            },
            DocChunks {
                doc_id: "b".into(),
                chunks: vec![chunk("b#c0", "b", "alpha beta")],
            },
        ]
    }

    #[test]
    fn select_top_keeps_best_prefix_within_budget() {
        let counter = HeuristicTokenCounter;
        // Costs: a#c0 "alpha beta gamma" = 16 bytes -> 4 tokens,
        // a#c1 "delta epsilon" = 13 -> 4, b#c0 "alpha beta" = 10 -> 3.
        let selection = select_top(
            "alpha beta",
            &candidates(),
            TokenBudget::new(7),
            &OverlapScorer,
            &counter,
        )
        .unwrap();
        // Scores: a#c0 = 2, b#c0 = 2, a#c1 = 0. Tie a#c0 < b#c0 by id.
        // Prefix: a#c0 (4), b#c0 (4+3=7 fits), a#c1 would be 11 > 7.
        assert_eq!(selection.selected, vec!["a#c0", "b#c0"]);
        assert_eq!(selection.theta, 2);
        assert_eq!(selection.total_tokens, 7);
    }

    #[test]
    fn select_top_theta_is_maximal_prefix() {
        let counter = HeuristicTokenCounter;
        let all = select_top(
            "alpha beta",
            &candidates(),
            TokenBudget::new(100),
            &OverlapScorer,
            &counter,
        )
        .unwrap();
        assert_eq!(all.theta, 3);
        // theta chunks fit, theta+1 chunks would not (for a tight budget).
        let tight = select_top(
            "alpha beta",
            &candidates(),
            TokenBudget::new(10),
            &OverlapScorer,
            &counter,
        )
        .unwrap();
        assert_eq!(tight.theta, 2);
        assert!(tight.total_tokens <= 10);
    }

    #[test]
    fn select_top_rejects_budget_below_first_chunk() {
        let err = select_top(
            "alpha beta",
            &candidates(),
            TokenBudget::new(3),
            &OverlapScorer,
            &HeuristicTokenCounter,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            RerankError::BudgetTooSmall {
                budget: 3,
                first_chunk_tokens: 4
            }
        ));
    }

    #[test]
    fn recombine_preserves_document_order_and_may_be_empty() {
        let selection = ChunkSelection {
            selected: vec!["a#c1".into(), "a#c0".into()],
            theta: 2,
            total_tokens: 8,
        };
        let docs = candidates();
        let filtered = recombine(&selection, &docs[0]);
        let ids: Vec<&str> = filtered
            .chunks
            .iter()
            .map(|c| c.chunk_id.as_str())
            .collect();
        assert_eq!(ids, vec!["a#c0", "a#c1"]); // document order, not score order
        let empty = recombine(&selection, &docs[1]);
        assert!(empty.chunks.is_empty());
    }

    #[test]
    fn cosine_scorer_uses_index_vectors() {
        let corpus = vec![
            chunk("a#c0", "a", "alpha beta"),
            chunk("b#c0", "b", "gamma delta"),
        ];
        let embedder = BowEmbedder::from_texts(corpus.iter().map(|c| c.text.as_str())).unwrap();
        let index = EmbeddingIndex::build(&corpus, &embedder).unwrap();
        let scorer = CosineScorer::new(&index, &embedder);
        let refs: Vec<&Chunk> = corpus.iter().collect();
        let scores = scorer.score_chunks("alpha beta", &refs).unwrap();
        assert!((scores[0] - 1.0).abs() < 1e-12);
        assert!(scores[1].abs() < 1e-12);
    }

    fn ensemble(ids: &[&str]) -> RankedDocs {
        RankedDocs::new(
            RankSource::Merged,
            ids.iter()
                .enumerate()
                .map(|(i, id)| RankedDoc {
                    doc_id: id.to_string(),
                    score: 1.0 / (i + 1) as f64,
                })
                .collect(),
        )
        .unwrap()
    }

    fn filtered(ids: &[&str]) -> Vec<FilteredDocument> {
        ids.iter()
            .map(|id| FilteredDocument {
                doc_id: id.to_string(),
                chunks: vec![chunk(&format!("{id}#c0"), id, "some text")],
            })
            .collect()
    }

    #[test]
    fn rerank_parses_model_order_and_appends_rest() {
        let client = MockCompletionClient::from_pairs(vec![("Query:", "b, then a")]);
        let outcome = llm_rerank(
            "q",
            &filtered(&["a", "b", "c"]),
            &ensemble(&["a", "b", "c"]),
            &client,
            &HeuristicTokenCounter,
            crate::templates::PromptSet::builtin().rerank(),
        )
        .unwrap();
        assert_eq!(
            outcome.ranking.doc_ids().collect::<Vec<_>>(),
            vec!["b", "a", "c"]
        );
        assert_eq!(outcome.chosen, "b");
        assert!(!outcome.fallback_used);
        assert!(outcome.tokens > 0);
    }

    #[test]
    fn rerank_id_matching_requires_word_boundaries() {
        // Candidate "d1" must not match inside "d10".
        let client = MockCompletionClient::from_pairs(vec![("Query:", "d10, d1")]);
        let outcome = llm_rerank(
            "q",
            &filtered(&["d1", "d10"]),
            &ensemble(&["d1", "d10"]),
            &client,
            &HeuristicTokenCounter,
            crate::templates::PromptSet::builtin().rerank(),
        )
        .unwrap();
        assert_eq!(
            outcome.ranking.doc_ids().collect::<Vec<_>>(),
            vec!["d10", "d1"]
        );
    }

    #[test]
    fn rerank_duplicate_and_unknown_ids_handled() {
        let client = MockCompletionClient::from_pairs(vec![("Query:", "zz, b, b, a, unknown_doc")]);
        let outcome = llm_rerank(
            "q",
            &filtered(&["a", "b"]),
            &ensemble(&["a", "b"]),
            &client,
            &HeuristicTokenCounter,
            crate::templates::PromptSet::builtin().rerank(),
        )
        .unwrap();
        assert_eq!(
            outcome.ranking.doc_ids().collect::<Vec<_>>(),
            vec!["b", "a"]
        );
        assert!(!outcome.fallback_used);
    }

    #[test]
    fn rerank_falls_back_on_unparseable_output() {
        let client = MockCompletionClient::from_pairs(vec![("Query:", "no ids here at all")]);
        let outcome = llm_rerank(
            "q",
            &filtered(&["a", "b"]),
            &ensemble(&["b", "a"]),
            &client,
            &HeuristicTokenCounter,
            crate::templates::PromptSet::builtin().rerank(),
        )
        .unwrap();
        assert!(outcome.fallback_used);
        assert_eq!(
            outcome.ranking.doc_ids().collect::<Vec<_>>(),
            vec!["b", "a"]
        );
        assert_eq!(outcome.chosen, "b");
    }

    #[test]
    fn rerank_falls_back_on_client_failure() {
        let client = FailingCompletionClient { retryable: false };
        let outcome = llm_rerank(
            "q",
            &filtered(&["a", "b"]),
            &ensemble(&["a", "b"]),
            &client,
            &HeuristicTokenCounter,
            crate::templates::PromptSet::builtin().rerank(),
        )
        .unwrap();
        assert!(outcome.fallback_used);
        assert_eq!(
            outcome.ranking.doc_ids().collect::<Vec<_>>(),
            vec!["a", "b"]
        );
    }

    #[test]
    fn rerank_output_is_permutation_of_candidates() {
        let client = MockCompletionClient::from_pairs(vec![("Query:", "c")]);
        let ens = ensemble(&["a", "b", "c"]);
        let outcome = llm_rerank(
            "q",
            &filtered(&["a", "b", "c"]),
            &ens,
            &client,
            &HeuristicTokenCounter,
            crate::templates::PromptSet::builtin().rerank(),
        )
        .unwrap();
        let mut got: Vec<&str> = outcome.ranking.doc_ids().collect();
        got.sort();
        assert_eq!(got, vec!["a", "b", "c"]);
        assert_eq!(outcome.ranking.doc_ids().next(), Some("c"));
    }

    #[test]
    fn rerank_requires_candidates() {
        let client = MockCompletionClient::from_pairs(Vec::<(String, String)>::new());
        let err = llm_rerank(
            "q",
            &[],
            &RankedDocs::empty(RankSource::Merged),
            &client,
            &HeuristicTokenCounter,
            crate::templates::PromptSet::builtin().rerank(),
        )
        .unwrap_err();
        assert!(matches!(err, RerankError::NoCandidates));
    }
}
