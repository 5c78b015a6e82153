//! First-stage retrieval: a lexical BM25 index and a dense embedding index
//! over chunk corpora, each rolled up to document granularity, plus the
//! rank-based ensemble merge that combines their outputs.
//!
//! Both indices score *chunks* and assign every document the score of its
//! best chunk, so a document is as findable as its most relevant piece.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{cosine_slices, ClientError, Embedder};
use crate::corpus::Chunk;
use crate::text::tokenize;

/// Default BM25 term-frequency saturation.
pub const DEFAULT_K1: f64 = 1.2;
/// Default BM25 length normalization.
pub const DEFAULT_B: f64 = 0.75;

/// Errors raised by index construction and queries.
#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error("BM25 parameter {name} = {value} out of range")]
    BadParameter { name: &'static str, value: f64 },
    #[error("query embedding dimension {got} does not match index dimension {want}")]
    DimensionMismatch { want: usize, got: usize },
    #[error("ranked list not sorted by non-increasing score at position {0}")]
    NotSorted(usize),
    #[error("duplicate document {0} in ranked list")]
    DuplicateDoc(String),
    #[error(transparent)]
    Client(#[from] ClientError),
}

/// Which stage produced a ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankSource {
    Bm25,
    Embedding,
    Merged,
    Reranked,
}

/// One document with its retrieval score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDoc {
    pub doc_id: String,
    pub score: f64,
}

/// A ranking over distinct documents, sorted by non-increasing score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDocs {
    source: RankSource,
    entries: Vec<RankedDoc>,
}

impl RankedDocs {
    /// Wrap entries, validating sortedness and document uniqueness.
    pub fn new(source: RankSource, entries: Vec<RankedDoc>) -> Result<Self, RetrievalError> {
        let mut seen = std::collections::BTreeSet::new();
        for (i, entry) in entries.iter().enumerate() {
            if i > 0 && entries[i - 1].score < entry.score {
                return Err(RetrievalError::NotSorted(i));
            }
            if !seen.insert(entry.doc_id.clone()) {
                return Err(RetrievalError::DuplicateDoc(entry.doc_id.clone()));
            }
        }
        Ok(RankedDocs { source, entries })
    }

    pub fn empty(source: RankSource) -> Self {
        RankedDocs {
            source,
            entries: Vec::new(),
        }
    }

    pub fn source(&self) -> RankSource {
        self.source
    }

    pub fn entries(&self) -> &[RankedDoc] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    /// 1-based rank of `doc_id`, if present.
    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.doc_id == doc_id)
            .map(|p| p + 1)
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.rank_of(doc_id).is_some()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Posting {
    chunk: u32,
    tf: u32,
}

/// Okapi BM25 index over chunks with document-level max rollup.
///
/// `IDF(t) = ln(1 + (N - df + 0.5) / (df + 0.5))` over chunk counts, and a
/// chunk scores `sum_t IDF(t) * tf / (tf + k1 * (1 - b + b * len/avglen))`
/// for the distinct query terms `t`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bm25Index {
    k1: f64,
    b: f64,
    postings: BTreeMap<String, Vec<Posting>>,
    chunk_ids: Vec<String>,
    chunk_docs: Vec<String>,
    chunk_lens: Vec<u32>,
    avg_len: f64,
}

impl Bm25Index {
    /// Index a chunk corpus. `k1` must be >= 0 and `b` within `[0, 1]`.
    pub fn build(chunks: &[Chunk], k1: f64, b: f64) -> Result<Self, RetrievalError> {
        if chunks.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        if !(k1 >= 0.0 && k1.is_finite()) {
            return Err(RetrievalError::BadParameter {
                name: "k1",
                value: k1,
            });
        }
        if !(0.0..=1.0).contains(&b) {
            return Err(RetrievalError::BadParameter {
                name: "b",
                value: b,
            });
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut chunk_ids = Vec::with_capacity(chunks.len());
        let mut chunk_docs = Vec::with_capacity(chunks.len());
        let mut chunk_lens = Vec::with_capacity(chunks.len());
        for (i, chunk) in chunks.iter().enumerate() {
            let tokens = tokenize(&chunk.text);
            chunk_ids.push(chunk.chunk_id.clone());
            chunk_docs.push(chunk.doc_id.clone());
            chunk_lens.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for token in tokens {
                *tf.entry(token).or_insert(0) += 1;
            }
            for (token, count) in tf {
                postings.entry(token).or_default().push(Posting {
                    chunk: i as u32,
                    tf: count,
                });
            }
        }
        let avg_len = chunk_lens.iter().map(|&l| l as f64).sum::<f64>() / chunks.len() as f64;
        Ok(Bm25Index {
            k1,
            b,
            postings,
            chunk_ids,
            chunk_docs,
            chunk_lens,
            avg_len,
        })
    }

    pub fn num_chunks(&self) -> usize {
        self.chunk_ids.len()
    }

    /// Number of chunks containing `term` (as produced by the tokenizer).
    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map(Vec::len).unwrap_or(0)
    }

    pub fn avg_chunk_len(&self) -> f64 {
        self.avg_len
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Score every chunk for `query` (distinct query terms) and return the
    /// top `n` documents by best-chunk score. Documents whose best score is
    /// zero are never returned; ties break by ascending `doc_id`.
    pub fn retrieve(&self, query: &str, n: usize) -> RankedDocs {
        let mut terms: Vec<String> = tokenize(query);
        terms.sort();
        terms.dedup();
        let total = self.chunk_ids.len() as f64;
        let mut chunk_scores = vec![0.0f64; self.chunk_ids.len()];
        for term in &terms {
            let Some(postings) = self.postings.get(term) else {
                continue;
            };
            let df = postings.len() as f64;
            let idf = (1.0 + (total - df + 0.5) / (df + 0.5)).ln();
            for posting in postings {
                let tf = posting.tf as f64;
                let len_norm = 1.0 - self.b
                    + self.b * self.chunk_lens[posting.chunk as usize] as f64 / self.avg_len;
                chunk_scores[posting.chunk as usize] += idf * tf / (tf + self.k1 * len_norm);
            }
        }
        let mut best: HashMap<&str, f64> = HashMap::new();
        for (i, &score) in chunk_scores.iter().enumerate() {
            if score > 0.0 {
                let doc = self.chunk_docs[i].as_str();
                let entry = best.entry(doc).or_insert(f64::NEG_INFINITY);
                if score > *entry {
                    *entry = score;
                }
            }
        }
        let mut entries: Vec<RankedDoc> = best
            .into_iter()
            .map(|(doc_id, score)| RankedDoc {
                doc_id: doc_id.to_string(),
                score,
            })
            .collect();
        entries.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        });
        entries.truncate(n);
        RankedDocs {
            source: RankSource::Bm25,
            entries,
        }
    }
}

/// Dense index: one embedding per chunk, scored by cosine similarity and
/// rolled up to documents by best chunk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingIndex {
    dim: usize,
    chunk_ids: Vec<String>,
    chunk_docs: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingIndex {
    /// Embed every chunk with `embedder`.
    pub fn build(chunks: &[Chunk], embedder: &dyn Embedder) -> Result<Self, RetrievalError> {
        if chunks.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let dim = embedder.dim();
        let mut chunk_ids = Vec::with_capacity(chunks.len());
        let mut chunk_docs = Vec::with_capacity(chunks.len());
        let mut vectors = Vec::with_capacity(chunks.len());
        for chunk in chunks {
            let vector = embedder.embed(&chunk.text)?;
            if vector.dim() != dim {
                return Err(RetrievalError::DimensionMismatch {
                    want: dim,
                    got: vector.dim(),
                });
            }
            chunk_ids.push(chunk.chunk_id.clone());
            chunk_docs.push(chunk.doc_id.clone());
            vectors.push(vector.values().to_vec());
        }
        Ok(EmbeddingIndex {
            dim,
            chunk_ids,
            chunk_docs,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_chunks(&self) -> usize {
        self.chunk_ids.len()
    }

    /// Stored vector for a chunk id, if the chunk was indexed.
    pub fn vector_for(&self, chunk_id: &str) -> Option<&[f64]> {
        self.chunk_ids
            .iter()
            .position(|id| id == chunk_id)
            .map(|i| self.vectors[i].as_slice())
    }

    /// Top `m` documents by best-chunk cosine similarity to the embedded
    /// query. Zero-similarity documents are never returned; ties break by
    /// ascending `doc_id`.
    pub fn retrieve(
        &self,
        query: &str,
        m: usize,
        embedder: &dyn Embedder,
    ) -> Result<RankedDocs, RetrievalError> {
        let query_vec = embedder_embed_checked(embedder, query, self.dim)?;
        let mut best: HashMap<&str, f64> = HashMap::new();
        for (i, vector) in self.vectors.iter().enumerate() {
            let score = cosine_slices(&query_vec, vector);
            if score > 0.0 {
                let doc = self.chunk_docs[i].as_str();
                let entry = best.entry(doc).or_insert(f64::NEG_INFINITY);
                if score > *entry {
                    *entry = score;
                }
            }
        }
        let mut entries: Vec<RankedDoc> = best
            .into_iter()
            .map(|(doc_id, score)| RankedDoc {
                doc_id: doc_id.to_string(),
                score,
            })
            .collect();
        entries.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        });
        entries.truncate(m);
        Ok(RankedDocs {
            source: RankSource::Embedding,
            entries,
        })
    }
}

fn embedder_embed_checked(
    embedder: &dyn Embedder,
    text: &str,
    want: usize,
) -> Result<Vec<f64>, RetrievalError> {
    let vector = embedder.embed(text)?;
    if vector.dim() != want {
        return Err(RetrievalError::DimensionMismatch {
            want,
            got: vector.dim(),
        });
    }
    Ok(vector.values().to_vec())
}

/// Merge two rankings into one deduplicated candidate list ordered by best
/// (lowest) 1-based rank across the lists. On equal best rank the document
/// from the embedding list comes first; remaining ties break by ascending
/// `doc_id`. Merged scores are `1 / best_rank`.
pub fn ensemble_merge(bm25: &RankedDocs, embedding: &RankedDocs) -> RankedDocs {
    #[derive(PartialEq, Eq, PartialOrd, Ord)]
    enum Provenance {
        // Embedding sorts before BM25 so it wins rank ties.
        Embedding,
        Bm25,
    }
    let mut best: BTreeMap<&str, (usize, Provenance)> = BTreeMap::new();
    for (i, doc) in embedding.doc_ids().enumerate() {
        best.insert(doc, (i + 1, Provenance::Embedding));
    }
    for (i, doc) in bm25.doc_ids().enumerate() {
        let rank = i + 1;
        match best.get(doc) {
            Some(&(existing, _)) if existing <= rank => {}
            _ => {
                best.insert(doc, (rank, Provenance::Bm25));
            }
        }
    }
    let mut order: Vec<(usize, Provenance, &str)> = best
        .into_iter()
        .map(|(doc, (rank, provenance))| (rank, provenance, doc))
        .collect();
    order.sort();
    let entries = order
        .into_iter()
        .map(|(rank, _, doc)| RankedDoc {
            doc_id: doc.to_string(),
            score: 1.0 / rank as f64,
        })
        .collect();
    RankedDocs {
        source: RankSource::Merged,
        entries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::BowEmbedder;
    use crate::corpus::ChunkKind;

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

    fn small_corpus() -> Vec<Chunk> {
        vec![
            chunk("a#c0", "a", "revenue rose in 2014"),
            chunk("a#c1", "a", "expenses fell slightly"),
            chunk("b#c0", "b", "revenue fell in 2013"),
            chunk("c#c0", "c", "the weather was pleasant"),
        ]
    }

    #[test]
    fn bm25_statistics_match_recount() {
        let index = Bm25Index::build(&small_corpus(), DEFAULT_K1, DEFAULT_B).unwrap();
        assert_eq!(index.num_chunks(), 4);
        assert_eq!(index.document_frequency("revenue"), 2);
        assert_eq!(index.document_frequency("weather"), 1);
        assert_eq!(index.document_frequency("absent"), 0);
        let expected_avg = (4 + 3 + 4 + 4) as f64 / 4.0;
        assert!((index.avg_chunk_len() - expected_avg).abs() < 1e-12);
    }

    #[test]
    fn bm25_scores_match_manual_okapi() {
        // One-term query against single-term-per-chunk counts is easy to
        // replicate by hand.
        let index = Bm25Index::build(&small_corpus(), DEFAULT_K1, DEFAULT_B).unwrap();
        let ranked = index.retrieve("revenue", 10);
        assert_eq!(ranked.len(), 2);
        let n = 4.0_f64;
        let df = 2.0_f64;
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        let avg = index.avg_chunk_len();
        let score =
            |len: f64| idf * 1.0 / (1.0 + DEFAULT_K1 * (1.0 - DEFAULT_B + DEFAULT_B * len / avg));
        // Both matching chunks have length 4; doc tie broken by id.
        assert_eq!(ranked.entries()[0].doc_id, "a");
        assert_eq!(ranked.entries()[1].doc_id, "b");
        assert!((ranked.entries()[0].score - score(4.0)).abs() < 1e-12);
        assert!((ranked.entries()[1].score - score(4.0)).abs() < 1e-12);
    }

    #[test]
    fn bm25_zero_score_docs_absent_and_truncation_applies() {
        let index = Bm25Index::build(&small_corpus(), DEFAULT_K1, DEFAULT_B).unwrap();
        let ranked = index.retrieve("revenue expenses weather", 2);
        assert_eq!(ranked.len(), 2);
        assert!(ranked.entries().iter().all(|e| e.score > 0.0));
        let nothing = index.retrieve("quasar", 5);
        assert!(nothing.is_empty());
        let empty_query = index.retrieve("", 5);
        assert!(empty_query.is_empty());
    }

    #[test]
    fn bm25_doc_score_is_best_chunk_score() {
        // Doc "a" has two chunks; query matches both but one much better.
        let index = Bm25Index::build(&small_corpus(), DEFAULT_K1, DEFAULT_B).unwrap();
        let both = index.retrieve("revenue expenses", 10);
        let single = index.retrieve("expenses", 10);
        // Max rollup: the multi-term score for doc a is at least its
        // single-term best.
        assert!(both.entries()[0].score >= single.entries()[0].score);
    }

    #[test]
    fn bm25_rejects_bad_parameters_and_empty_corpus() {
        assert!(matches!(
            Bm25Index::build(&[], DEFAULT_K1, DEFAULT_B),
            Err(RetrievalError::EmptyCorpus)
        ));
        assert!(matches!(
            Bm25Index::build(&small_corpus(), -0.5, DEFAULT_B),
            Err(RetrievalError::BadParameter { name: "k1", .. })
        ));
        assert!(matches!(
            Bm25Index::build(&small_corpus(), DEFAULT_K1, 1.5),
            Err(RetrievalError::BadParameter { name: "b", .. })
        ));
    }

    #[test]
    fn embedding_retrieval_ranks_by_cosine() {
        let corpus = small_corpus();
        let embedder = BowEmbedder::from_texts(corpus.iter().map(|c| c.text.as_str())).unwrap();
        let index = EmbeddingIndex::build(&corpus, &embedder).unwrap();
        let ranked = index
            .retrieve("revenue rose in 2014", 10, &embedder)
            .unwrap();
        assert_eq!(ranked.entries()[0].doc_id, "a");
        assert!((ranked.entries()[0].score - 1.0).abs() < 1e-12);
        // A query with no vocabulary overlap retrieves nothing.
        let nothing = index.retrieve("zzz xyzzy", 10, &embedder).unwrap();
        assert!(nothing.is_empty());
    }

    #[test]
    fn ranked_docs_validation() {
        let good = RankedDocs::new(
            RankSource::Bm25,
            vec![
                RankedDoc {
                    doc_id: "a".into(),
                    score: 2.0,
                },
                RankedDoc {
                    doc_id: "b".into(),
                    score: 1.0,
                },
            ],
        )
        .unwrap();
        assert_eq!(good.rank_of("b"), Some(2));
        assert!(RankedDocs::new(
            RankSource::Bm25,
            vec![
                RankedDoc {
                    doc_id: "a".into(),
                    score: 1.0
                },
                RankedDoc {
                    doc_id: "b".into(),
                    score: 2.0
                },
            ],
        )
        .is_err());
        assert!(RankedDocs::new(
            RankSource::Bm25,
            vec![
                RankedDoc {
                    doc_id: "a".into(),
                    score: 2.0
                },
                RankedDoc {
                    doc_id: "a".into(),
                    score: 1.0
                },
            ],
        )
        .is_err());
    }

    fn ranked(source: RankSource, ids: &[&str]) -> RankedDocs {
        let entries = ids
            .iter()
            .enumerate()
            .map(|(i, id)| RankedDoc {
                doc_id: id.to_string(),
                score: 1.0 / (i + 1) as f64,
            })
            .collect();
        RankedDocs::new(source, entries).unwrap()
    }

    #[test]
    fn merge_disjoint_and_identical_lists() {
        let bm25 = ranked(RankSource::Bm25, &["a", "b"]);
        let emb = ranked(RankSource::Embedding, &["c", "d", "e"]);
        let merged = ensemble_merge(&bm25, &emb);
        assert_eq!(merged.len(), 5);
        // Rank ties go to the embedding list first.
        assert_eq!(
            merged.doc_ids().collect::<Vec<_>>(),
            vec!["c", "a", "d", "b", "e"]
        );
        assert_eq!(merged.source(), RankSource::Merged);

        let same = ensemble_merge(
            &ranked(RankSource::Bm25, &["x", "y"]),
            &ranked(RankSource::Embedding, &["x", "y"]),
        );
        assert_eq!(same.len(), 2);
        assert_eq!(same.doc_ids().collect::<Vec<_>>(), vec!["x", "y"]);
    }

    #[test]
    fn merge_scores_are_reciprocal_best_rank() {
        let bm25 = ranked(RankSource::Bm25, &["a", "b", "c"]);
        let emb = ranked(RankSource::Embedding, &["b"]);
        let merged = ensemble_merge(&bm25, &emb);
        // b: best rank 1 (both lists); a: rank 1 (bm25); c: rank 3.
        assert_eq!(merged.doc_ids().collect::<Vec<_>>(), vec!["b", "a", "c"]);
        assert!((merged.entries()[0].score - 1.0).abs() < 1e-12);
        assert!((merged.entries()[1].score - 1.0).abs() < 1e-12);
        assert!((merged.entries()[2].score - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn merge_of_empty_lists_is_empty() {
        let merged = ensemble_merge(
            &RankedDocs::empty(RankSource::Bm25),
            &RankedDocs::empty(RankSource::Embedding),
        );
        assert!(merged.is_empty());
    }
}
