//! On-disk formats: document and QA ingestion, chunk-corpus cache files,
//! and versioned index caches keyed by a corpus hash so stale caches are
//! rebuilt automatically.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Chunk, Document};
use crate::eval::QAPair;
use crate::table::{Cell, HeaderNode, HeaderTree, HierarchicalTable, Orientation};

/// Bumped whenever a cached payload's layout changes; mismatched caches are
/// ignored and rebuilt.
pub const CACHE_VERSION: u32 = 1;

/// Errors raised while reading or validating on-disk data.
#[derive(Debug, Error)]
pub enum StoreError {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot parse {path}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid document in {path}: {message}")]
    InvalidDocument { path: PathBuf, message: String },
    #[error("invalid QA record on line {line} of {path}: {message}")]
    InvalidQa {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("question {question_id} names gold document {gold_doc_id}, which was not ingested")]
    UnknownGoldDoc {
        question_id: String,
        gold_doc_id: String,
    },
    #[error("duplicate question id: {0}")]
    DuplicateQuestion(String),
}

fn io_err(path: &Path, source: io::Error) -> StoreError {
    StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, source: serde_json::Error) -> StoreError {
    StoreError::Parse {
        path: path.to_path_buf(),
        source,
    }
}

/// One header node as stored in document JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeFile {
    pub label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<NodeFile>,
}

impl NodeFile {
    fn to_node(&self) -> HeaderNode {
        HeaderNode::branch(
            self.label.clone(),
            self.children.iter().map(NodeFile::to_node).collect(),
        )
    }
}

/// One table as stored in document JSON; cells are raw strings and are
/// parsed on load.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableFile {
    pub table_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub top: Vec<NodeFile>,
    pub left: Vec<NodeFile>,
    pub data: Vec<Vec<String>>,
}

impl TableFile {
    fn to_table(&self) -> Result<HierarchicalTable, String> {
        let top = HeaderTree::new(
            Orientation::Top,
            self.top.iter().map(NodeFile::to_node).collect(),
        )
        .map_err(|e| e.to_string())?;
        let left = HeaderTree::new(
            Orientation::Left,
            self.left.iter().map(NodeFile::to_node).collect(),
        )
        .map_err(|e| e.to_string())?;
        let data = self
            .data
            .iter()
            .map(|row| row.iter().map(|raw| Cell::parse(raw.clone())).collect())
            .collect();
        HierarchicalTable::new(self.table_id.clone(), self.title.clone(), left, top, data)
            .map_err(|e| e.to_string())
    }
}

/// One document as stored on disk: `{"doc_id": ..., "passages": [...],
/// "tables": [...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentFile {
    pub doc_id: String,
    #[serde(default)]
    pub passages: Vec<String>,
    #[serde(default)]
    pub tables: Vec<TableFile>,
}

impl DocumentFile {
    pub fn to_document(&self) -> Result<Document, String> {
        let tables = self
            .tables
            .iter()
            .map(TableFile::to_table)
            .collect::<Result<Vec<_>, _>>()?;
        Document::new(self.doc_id.clone(), self.passages.clone(), tables).map_err(|e| e.to_string())
    }
}

/// Load every `*.json` document in `dir`, ordered by file name.
pub fn load_documents_dir(dir: impl AsRef<Path>) -> Result<Vec<Document>, StoreError> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    let mut documents = Vec::with_capacity(paths.len());
    for path in &paths {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let file: DocumentFile = serde_json::from_str(&text).map_err(|e| parse_err(path, e))?;
        let document = file
            .to_document()
            .map_err(|message| StoreError::InvalidDocument {
                path: path.clone(),
                message,
            })?;
        documents.push(document);
    }
    Ok(documents)
}

/// Load QA pairs from a JSON-lines file (one record per line; blank lines
/// ignored).
pub fn load_qa_jsonl(path: impl AsRef<Path>) -> Result<Vec<QAPair>, StoreError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: QAPair = serde_json::from_str(line).map_err(|e| StoreError::InvalidQa {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Check QA pairs against the ingested corpus: every gold document must
/// exist and question ids must be unique.
pub fn validate_qa(qa: &[QAPair], docs: &[Document]) -> Result<(), StoreError> {
    let doc_ids: BTreeSet<&str> = docs.iter().map(|d| d.doc_id()).collect();
    let mut seen = BTreeSet::new();
    for pair in qa {
        if !seen.insert(pair.question_id.as_str()) {
            return Err(StoreError::DuplicateQuestion(pair.question_id.clone()));
        }
        if !doc_ids.contains(pair.gold_doc_id.as_str()) {
            return Err(StoreError::UnknownGoldDoc {
                question_id: pair.question_id.clone(),
                gold_doc_id: pair.gold_doc_id.clone(),
            });
        }
    }
    Ok(())
}

/// Write a chunk corpus as JSON lines (one chunk per line, UTF-8).
pub fn write_chunks_jsonl(path: impl AsRef<Path>, chunks: &[Chunk]) -> Result<(), StoreError> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut writer = BufWriter::new(file);
    for chunk in chunks {
        let line = serde_json::to_string(chunk).map_err(|e| parse_err(path, e))?;
        writeln!(writer, "{line}").map_err(|e| io_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

/// Read a chunk corpus written by [`write_chunks_jsonl`].
pub fn read_chunks_jsonl(path: impl AsRef<Path>) -> Result<Vec<Chunk>, StoreError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .filter(|line| !line.trim().is_empty())
        .map(|line| serde_json::from_str(line).map_err(|e| parse_err(path, e)))
        .collect()
}

/// Content hash of a chunk corpus: SHA-256 over its JSON-lines serialization.
/// Index caches carry this hash and are ignored when it no longer matches.
pub fn corpus_hash(chunks: &[Chunk]) -> String {
    let mut hasher = Sha256::new();
    for chunk in chunks {
        let line = serde_json::to_string(chunk).expect("chunks serialize infallibly");
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

/// Fingerprint of a document directory (file names + raw contents of every
/// `*.json`, sorted), used to detect when cached corpora are stale.
pub fn docs_fingerprint(dir: impl AsRef<Path>) -> Result<String, StoreError> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    let mut hasher = Sha256::new();
    for path in &paths {
        if let Some(name) = path.file_name() {
            hasher.update(name.to_string_lossy().as_bytes());
            hasher.update(b"\0");
        }
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        hasher.update(&bytes);
        hasher.update(b"\0");
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Versioned wrapper for cached payloads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEnvelope<T> {
    pub version: u32,
    pub corpus_hash: String,
    pub payload: T,
}

/// Persist an index (or any payload) under the current cache version,
/// keyed by the hash of the corpus it was built from.
pub fn write_index_cache<T: Serialize>(
    path: impl AsRef<Path>,
    corpus_hash: &str,
    payload: &T,
) -> Result<(), StoreError> {
    let path = path.as_ref();
    let envelope = CacheEnvelope {
        version: CACHE_VERSION,
        corpus_hash: corpus_hash.to_string(),
        payload,
    };
    let json = serde_json::to_string(&envelope).map_err(|e| parse_err(path, e))?;
    fs::write(path, json).map_err(|e| io_err(path, e))
}

/// Load a cached index if it exists, parses, and matches both the cache
/// version and the expected corpus hash; anything else returns `None` (the
/// caller rebuilds).
pub fn load_index_cache<T: DeserializeOwned>(
    path: impl AsRef<Path>,
    expected_hash: &str,
) -> Option<T> {
    let path = path.as_ref();
    let text = match fs::read_to_string(path) {
        Ok(text) => text,
        Err(err) => {
            if err.kind() != io::ErrorKind::NotFound {
                log::warn!("cannot read cache {}: {err}", path.display());
            }
            return None;
        }
    };
    let envelope: CacheEnvelope<T> = match serde_json::from_str(&text) {
        Ok(envelope) => envelope,
        Err(err) => {
            log::warn!("ignoring corrupt cache {}: {err}", path.display());
            return None;
        }
    };
    if envelope.version != CACHE_VERSION {
        log::info!(
            "ignoring cache {} (version {} != {})",
            path.display(),
            envelope.version,
            CACHE_VERSION
        );
        return None;
    }
    if envelope.corpus_hash != expected_hash {
        log::info!("ignoring stale cache {}", path.display());
        return None;
    }
    Some(envelope.payload)
}

/// Metadata describing a cached corpus build.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub version: u32,
    /// Fingerprint of the document directory the corpora were built from.
    pub docs_fingerprint: String,
    /// Hash of the BM25 corpus chunk file.
    pub bm25_hash: String,
    /// Hash of the embedding corpus chunk file.
    pub embedding_hash: String,
    /// Completion tokens spent building the corpora.
    pub preprocessing_tokens: u64,
}

/// Write corpus metadata as pretty JSON.
pub fn write_corpus_meta(path: impl AsRef<Path>, meta: &CorpusMeta) -> Result<(), StoreError> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(meta).map_err(|e| parse_err(path, e))?;
    fs::write(path, json).map_err(|e| io_err(path, e))
}

/// Load corpus metadata; `None` when missing, corrupt, or version-mismatched.
pub fn load_corpus_meta(path: impl AsRef<Path>) -> Option<CorpusMeta> {
    let text = fs::read_to_string(path.as_ref()).ok()?;
    let meta: CorpusMeta = match serde_json::from_str(&text) {
        Ok(meta) => meta,
        Err(err) => {
            log::warn!(
                "ignoring corrupt corpus metadata {}: {err}",
                path.as_ref().display()
            );
            return None;
        }
    };
    (meta.version == CACHE_VERSION).then_some(meta)
}
