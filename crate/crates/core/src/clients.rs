//! Model-facing seams: completion, embedding, and token-counting traits with
//! deterministic offline implementations (scripted completions, bag-of-words
//! embeddings, a byte-length token heuristic) plus thin HTTP adapters for
//! live endpoints.
//!
//! Everything the pipeline learns from a model goes through these traits, so
//! swapping the offline implementations for the HTTP ones changes no other
//! code.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::tokenize;

/// Default number of retries for retryable client failures (in addition to
/// the initial attempt).
pub const DEFAULT_MAX_RETRIES: u32 = 2;

/// Sentinel returned by [`MockCompletionClient`] when no script entry matches
/// the prompt.
pub const DEFAULT_SENTINEL: &str = "NO_SCRIPTED_RESPONSE";

/// A failure reported by a completion or embedding backend.
#[derive(Debug, Clone, Error)]
#[error("client error ({}): {message}", if *.retryable { "retryable" } else { "fatal" })]
pub struct ClientError {
    message: String,
    retryable: bool,
}

impl ClientError {
    /// A transient failure (timeouts, rate limits, 5xx) worth retrying.
    pub fn retryable(message: impl Into<String>) -> Self {
        ClientError {
            message: message.into(),
            retryable: true,
        }
    }

    /// A permanent failure (bad request, auth, malformed payload).
    pub fn fatal(message: impl Into<String>) -> Self {
        ClientError {
            message: message.into(),
            retryable: false,
        }
    }

    pub fn is_retryable(&self) -> bool {
        self.retryable
    }

    pub fn message(&self) -> &str {
        &self.message
    }
}

/// One completion call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionRequest {
    /// Full prompt text; never empty for requests built by the pipeline.
    pub prompt: String,
    /// Upper bound on generated tokens.
    pub max_output_tokens: u32,
    /// Ask the backend for reproducible decoding (temperature 0 or
    /// equivalent). Offline clients are deterministic regardless.
    pub deterministic: bool,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            max_output_tokens: 1024,
            deterministic: true,
        }
    }

    pub fn with_max_output_tokens(mut self, max_output_tokens: u32) -> Self {
        self.max_output_tokens = max_output_tokens;
        self
    }
}

/// A text completion backend.
pub trait CompletionClient: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ClientError>;
}

/// A text embedding backend producing fixed-dimension vectors.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ClientError>;
    /// Dimension of every vector this embedder produces.
    fn dim(&self) -> usize;
}

/// A token counter used for budget accounting.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Blanket impls so `Arc<dyn Trait>` satisfies the trait bounds directly.
impl<T: CompletionClient + ?Sized> CompletionClient for Arc<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ClientError> {
        (**self).complete(request)
    }
}

impl<T: Embedder + ?Sized> Embedder for Arc<T> {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ClientError> {
        (**self).embed(text)
    }

    fn dim(&self) -> usize {
        (**self).dim()
    }
}

impl<T: TokenCounter + ?Sized> TokenCounter for Arc<T> {
    fn count(&self, text: &str) -> usize {
        (**self).count(text)
    }
}

/// A dense embedding with finite components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Wrap raw components, rejecting empty or non-finite vectors.
    pub fn new(values: Vec<f64>) -> Result<Self, ClientError> {
        if values.is_empty() {
            return Err(ClientError::fatal("embedding vector is empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ClientError::fatal(
                "embedding vector contains non-finite components",
            ));
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine similarity; 0.0 whenever either vector has zero norm.
    /// Panics if the dimensions differ (an indexing bug, not an input error).
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        assert_eq!(self.dim(), other.dim(), "cosine over mismatched dimensions");
        cosine_slices(&self.values, &other.values)
    }
}

/// Cosine similarity over raw component slices (0.0 for zero-norm inputs).
pub(crate) fn cosine_slices(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// A token budget for prompt assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub max_tokens: usize,
}

impl TokenBudget {
    pub fn new(max_tokens: usize) -> Self {
        TokenBudget { max_tokens }
    }
}

/// Deterministic token estimate: one token per four bytes of UTF-8, rounded
/// up. The empty string counts zero tokens, and the count never decreases
/// when text is appended.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicTokenCounter;

impl TokenCounter for HeuristicTokenCounter {
    fn count(&self, text: &str) -> usize {
        text.len().div_ceil(4)
    }
}

/// One scripted stimulus/response pair for the mock completion client.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptEntry {
    /// Substring that must appear in the prompt for this entry to fire.
    pub contains: String,
    /// Response returned verbatim when the entry fires.
    pub response: String,
}

/// Scripted completion client: the first entry whose `contains` string is a
/// substring of the prompt wins; unmatched prompts get the sentinel. Pure,
/// so identical prompts always produce identical responses.
#[derive(Debug, Clone)]
pub struct MockCompletionClient {
    script: Vec<ScriptEntry>,
    sentinel: String,
}

impl MockCompletionClient {
    pub fn new(script: Vec<ScriptEntry>) -> Self {
        MockCompletionClient {
            script,
            sentinel: DEFAULT_SENTINEL.to_string(),
        }
    }

    /// Convenience constructor from `(contains, response)` pairs.
    pub fn from_pairs<S: Into<String>, R: Into<String>>(pairs: Vec<(S, R)>) -> Self {
        Self::new(
            pairs
                .into_iter()
                .map(|(contains, response)| ScriptEntry {
                    contains: contains.into(),
                    response: response.into(),
                })
                .collect(),
        )
    }

    /// Load a JSON array of [`ScriptEntry`] from disk.
    pub fn from_script_file(path: impl AsRef<Path>) -> Result<Self, ClientError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| ClientError::fatal(format!("read script {}: {e}", path.display())))?;
        let script: Vec<ScriptEntry> = serde_json::from_slice(&bytes)
            .map_err(|e| ClientError::fatal(format!("parse script {}: {e}", path.display())))?;
        Ok(Self::new(script))
    }

    pub fn with_sentinel(mut self, sentinel: impl Into<String>) -> Self {
        self.sentinel = sentinel.into();
        self
    }
}

impl CompletionClient for MockCompletionClient {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ClientError> {
        for entry in &self.script {
            if request.prompt.contains(&entry.contains) {
                return Ok(entry.response.clone());
            }
        }
        Ok(self.sentinel.clone())
    }
}

/// A completion client that always fails; useful for exercising fallbacks.
#[derive(Debug, Clone)]
pub struct FailingCompletionClient {
    pub retryable: bool,
}

impl CompletionClient for FailingCompletionClient {
    fn complete(&self, _request: &CompletionRequest) -> Result<String, ClientError> {
        if self.retryable {
            Err(ClientError::retryable("scripted failure"))
        } else {
            Err(ClientError::fatal("scripted failure"))
        }
    }
}

/// Deterministic bag-of-words embedder: term frequencies over a fixed sorted
/// vocabulary, L2-normalized. Out-of-vocabulary tokens are ignored, so a text
/// sharing no vocabulary with the corpus embeds to the zero vector (which
/// cosine treats as similarity 0 to everything).
#[derive(Debug, Clone)]
pub struct BowEmbedder {
    vocab: BTreeMap<String, usize>,
}

impl BowEmbedder {
    /// Build the vocabulary from corpus texts: all distinct tokens, sorted.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<Self, ClientError> {
        let mut vocab = BTreeMap::new();
        for text in texts {
            for token in tokenize(text) {
                let next = vocab.len();
                vocab.entry(token).or_insert(next);
            }
        }
        // BTreeMap orders keys, but insertion order above is discovery order;
        // re-index so vector positions follow sorted token order.
        let mut sorted = BTreeMap::new();
        for (i, token) in vocab.keys().cloned().enumerate() {
            sorted.insert(token, i);
        }
        if sorted.is_empty() {
            return Err(ClientError::fatal(
                "cannot build a bag-of-words vocabulary from empty corpus",
            ));
        }
        Ok(BowEmbedder { vocab: sorted })
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }
}

impl Embedder for BowEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ClientError> {
        let mut values = vec![0.0f64; self.vocab.len()];
        for token in tokenize(text) {
            if let Some(&i) = self.vocab.get(&token) {
                values[i] += 1.0;
            }
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        }
        EmbeddingVector::new(values)
    }

    fn dim(&self) -> usize {
        self.vocab.len()
    }
}

/// Run `op`, retrying retryable failures up to `max_retries` times. Fatal
/// errors are returned immediately.
pub fn with_retries<T>(
    max_retries: u32,
    mut op: impl FnMut() -> Result<T, ClientError>,
) -> Result<T, ClientError> {
    let mut attempt = 0u32;
    loop {
        match op() {
            Ok(value) => return Ok(value),
            Err(err) if err.is_retryable() && attempt < max_retries => {
                attempt += 1;
                log::warn!("retryable client error (attempt {attempt}/{max_retries}): {err}");
            }
            Err(err) => return Err(err),
        }
    }
}

/// Environment variable naming the base URL for HTTP client adapters.
pub const API_BASE_ENV: &str = "HETDOC_API_BASE";
/// Environment variable holding the bearer token for HTTP client adapters.
pub const API_KEY_ENV: &str = "HETDOC_API_KEY";

fn http_error(err: ureq::Error) -> ClientError {
    match err {
        ureq::Error::StatusCode(code) if code == 429 || code >= 500 => {
            ClientError::retryable(format!("http status {code}"))
        }
        ureq::Error::StatusCode(code) => ClientError::fatal(format!("http status {code}")),
        other => ClientError::retryable(format!("http transport: {other}")),
    }
}

fn base_url_from_env() -> Result<String, ClientError> {
    std::env::var(API_BASE_ENV)
        .map(|s| s.trim_end_matches('/').to_string())
        .map_err(|_| ClientError::fatal(format!("{API_BASE_ENV} is not set")))
}

/// Completion client speaking a minimal JSON protocol:
/// `POST {base}/complete {"prompt", "max_output_tokens", "deterministic"}`
/// returning `{"text": "..."}`.
pub struct HttpCompletionClient {
    base: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpCompletionClient {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        HttpCompletionClient {
            base: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            agent: ureq::Agent::new_with_defaults(),
        }
    }

    /// Configure from `HETDOC_API_BASE` / `HETDOC_API_KEY`.
    pub fn from_env() -> Result<Self, ClientError> {
        Ok(Self::new(
            base_url_from_env()?,
            std::env::var(API_KEY_ENV).ok(),
        ))
    }
}

#[derive(Serialize)]
struct CompleteBody<'a> {
    prompt: &'a str,
    max_output_tokens: u32,
    deterministic: bool,
}

#[derive(Deserialize)]
struct CompleteReply {
    text: String,
}

impl CompletionClient for HttpCompletionClient {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ClientError> {
        let url = format!("{}/complete", self.base);
        let mut call = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            call = call.header("authorization", &format!("Bearer {key}"));
        }
        let mut response = call
            .send_json(CompleteBody {
                prompt: &request.prompt,
                max_output_tokens: request.max_output_tokens,
                deterministic: request.deterministic,
            })
            .map_err(http_error)?;
        let reply: CompleteReply = response
            .body_mut()
            .read_json()
            .map_err(|e| ClientError::fatal(format!("malformed completion reply: {e}")))?;
        Ok(reply.text)
    }
}

/// Embedding client speaking `POST {base}/embed {"text"}` returning
/// `{"embedding": [..]}`. The expected dimension is fixed up front and every
/// reply is checked against it.
pub struct HttpEmbedder {
    base: String,
    api_key: Option<String>,
    dim: usize,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, dim: usize) -> Self {
        HttpEmbedder {
            base: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            dim,
            agent: ureq::Agent::new_with_defaults(),
        }
    }

    /// Configure from `HETDOC_API_BASE` / `HETDOC_API_KEY` with a declared
    /// vector dimension.
    pub fn from_env(dim: usize) -> Result<Self, ClientError> {
        Ok(Self::new(
            base_url_from_env()?,
            std::env::var(API_KEY_ENV).ok(),
            dim,
        ))
    }
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedReply {
    embedding: Vec<f64>,
}

impl Embedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ClientError> {
        let url = format!("{}/embed", self.base);
        let mut call = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            call = call.header("authorization", &format!("Bearer {key}"));
        }
        let mut response = call.send_json(EmbedBody { text }).map_err(http_error)?;
        let reply: EmbedReply = response
            .body_mut()
            .read_json()
            .map_err(|e| ClientError::fatal(format!("malformed embedding reply: {e}")))?;
        if reply.embedding.len() != self.dim {
            return Err(ClientError::fatal(format!(
                "embedding dimension {} != declared {}",
                reply.embedding.len(),
                self.dim
            )));
        }
        EmbeddingVector::new(reply.embedding)
    }

    fn dim(&self) -> usize {
        self.dim
    }
}
