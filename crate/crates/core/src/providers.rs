//! Model providers behind the router, the evaluation kit and the clustering
//! pipeline.
//!
//! Each capability is a small async trait. Two families ship here: remote
//! adapters speaking the common JSON APIs (OpenAI-style embeddings and chat,
//! Cohere/Voyage-style rerank) and a deterministic offline pair that needs no
//! network: a hashed bag-of-words embedder and a token-overlap reranker.

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("provider request failed: {0}")]
    Transport(String),
    #[error("provider returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("provider response malformed: {0}")]
    Malformed(String),
    #[error("injected fault: {0}")]
    Injected(String),
}

impl From<reqwest::Error> for ProviderError {
    fn from(e: reqwest::Error) -> Self {
        ProviderError::Transport(e.to_string())
    }
}

#[async_trait]
pub trait EmbeddingProvider: Send + Sync {
    /// Name recorded in reports (model and endpoint, or the offline scheme).
    fn identity(&self) -> String;
    /// One raw (not necessarily normalized) vector per input text.
    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError>;
}

#[async_trait]
pub trait RerankProvider: Send + Sync {
    fn identity(&self) -> String;
    /// One relevance score in `[0, 1]` per document, in input order.
    async fn rerank(&self, query: &str, documents: &[String]) -> Result<Vec<f64>, ProviderError>;
}

#[async_trait]
pub trait LlmProvider: Send + Sync {
    fn identity(&self) -> String;
    async fn complete(&self, prompt: &str) -> Result<String, ProviderError>;
}

const STOPWORDS: &[&str] = &[
    "a", "about", "an", "and", "are", "as", "at", "be", "by", "can", "do", "does", "for", "from",
    "how", "i", "in", "is", "it", "me", "my", "of", "on", "or", "that", "the", "this", "to", "was",
    "what", "when", "where", "which", "who", "why", "with", "you", "your",
];

/// Lowercased alphanumeric words, stopwords removed.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Feature-hashed term-frequency vectors with sublinear (1 + ln tf) weighting.
///
/// Slot 0 is reserved: text without any tokens maps to the unit vector on it,
/// so every output has a well-defined direction.
#[derive(Debug, Clone)]
pub struct HashedBowEmbedder {
    dim: usize,
}

impl HashedBowEmbedder {
    pub const DEFAULT_DIM: usize = 1024;

    pub fn new(dim: usize) -> Self {
        assert!(dim >= 2, "embedding dimension must be at least 2");
        Self { dim }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut counts = vec![0u32; self.dim];
        for token in tokenize(text) {
            let slot = 1 + (fnv1a(token.as_bytes()) % (self.dim as u64 - 1)) as usize;
            counts[slot] += 1;
        }
        let mut v: Vec<f64> = counts
            .into_iter()
            .map(|c| if c == 0 { 0.0 } else { 1.0 + f64::from(c).ln() })
            .collect();
        if v.iter().all(|x| *x == 0.0) {
            v[0] = 1.0;
        }
        v
    }
}

impl Default for HashedBowEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM)
    }
}

#[async_trait]
impl EmbeddingProvider for HashedBowEmbedder {
    fn identity(&self) -> String {
        format!("offline/hashed-bow-{}", self.dim)
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Fraction of the query's distinct tokens that also occur in the document.
#[derive(Debug, Clone, Default)]
pub struct TokenOverlapReranker;

impl TokenOverlapReranker {
    pub fn score(query: &str, document: &str) -> f64 {
        let q: HashSet<String> = tokenize(query).collect();
        if q.is_empty() {
            return 0.0;
        }
        let d: HashSet<String> = tokenize(document).collect();
        q.iter().filter(|t| d.contains(*t)).count() as f64 / q.len() as f64
    }
}

#[async_trait]
impl RerankProvider for TokenOverlapReranker {
    fn identity(&self) -> String {
        "offline/token-overlap".to_owned()
    }

    async fn rerank(&self, query: &str, documents: &[String]) -> Result<Vec<f64>, ProviderError> {
        Ok(documents.iter().map(|d| Self::score(query, d)).collect())
    }
}

/// Connection settings shared by the remote adapters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteEndpoint {
    /// Full endpoint URL, e.g. `https://api.example.com/v1/embeddings`.
    pub url: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    30_000
}

impl RemoteEndpoint {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: model.into(),
            api_key: None,
            timeout_ms: default_timeout_ms(),
        }
    }

    async fn post(&self, client: &reqwest::Client, body: Value) -> Result<Value, ProviderError> {
        let mut request = client
            .post(&self.url)
            .timeout(Duration::from_millis(self.timeout_ms))
            .json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().await?;
        let status = response.status();
        if !status.is_success() {
            let body = response.text().await.unwrap_or_default();
            return Err(ProviderError::Status {
                status: status.as_u16(),
                body,
            });
        }
        response
            .json()
            .await
            .map_err(|e| ProviderError::Malformed(e.to_string()))
    }
}

/// OpenAI-compatible `/embeddings` client.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    endpoint: RemoteEndpoint,
    client: reqwest::Client,
}

impl RemoteEmbedder {
    pub fn new(endpoint: RemoteEndpoint, client: reqwest::Client) -> Self {
        Self { endpoint, client }
    }
}

#[derive(Deserialize)]
struct EmbeddingData {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

#[async_trait]
impl EmbeddingProvider for RemoteEmbedder {
    fn identity(&self) -> String {
        format!("{}@{}", self.endpoint.model, self.endpoint.url)
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let body = json!({ "model": self.endpoint.model, "input": texts });
        let value = self.endpoint.post(&self.client, body).await?;
        let mut data: Vec<EmbeddingData> = serde_json::from_value(value["data"].clone())
            .map_err(|e| ProviderError::Malformed(format!("embeddings data: {e}")))?;
        if data.len() != texts.len() {
            return Err(ProviderError::Malformed(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                data.len()
            )));
        }
        if data.iter().all(|d| d.index.is_some()) {
            data.sort_by_key(|d| d.index);
        }
        Ok(data.into_iter().map(|d| d.embedding).collect())
    }
}

/// Cohere/Voyage-style `/rerank` client.
#[derive(Debug, Clone)]
pub struct RemoteReranker {
    endpoint: RemoteEndpoint,
    client: reqwest::Client,
}

impl RemoteReranker {
    pub fn new(endpoint: RemoteEndpoint, client: reqwest::Client) -> Self {
        Self { endpoint, client }
    }
}

#[derive(Deserialize)]
struct RerankItem {
    index: usize,
    relevance_score: f64,
}

#[async_trait]
impl RerankProvider for RemoteReranker {
    fn identity(&self) -> String {
        format!("{}@{}", self.endpoint.model, self.endpoint.url)
    }

    async fn rerank(&self, query: &str, documents: &[String]) -> Result<Vec<f64>, ProviderError> {
        if documents.is_empty() {
            return Ok(Vec::new());
        }
        let body = json!({ "model": self.endpoint.model, "query": query, "documents": documents });
        let value = self.endpoint.post(&self.client, body).await?;
        let items = value
            .get("results")
            .or_else(|| value.get("data"))
            .cloned()
            .ok_or_else(|| ProviderError::Malformed("rerank response has no results".into()))?;
        let items: Vec<RerankItem> = serde_json::from_value(items)
            .map_err(|e| ProviderError::Malformed(format!("rerank results: {e}")))?;
        let mut scores = vec![None; documents.len()];
        for item in items {
            let slot = scores.get_mut(item.index).ok_or_else(|| {
                ProviderError::Malformed(format!("rerank index {} out of range", item.index))
            })?;
            *slot = Some(item.relevance_score);
        }
        scores
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                s.ok_or_else(|| ProviderError::Malformed(format!("no score for document {i}")))
            })
            .collect()
    }
}

/// OpenAI-compatible `/chat/completions` client sending a single user message.
#[derive(Debug, Clone)]
pub struct RemoteLlm {
    endpoint: RemoteEndpoint,
    client: reqwest::Client,
}

impl RemoteLlm {
    pub fn new(endpoint: RemoteEndpoint, client: reqwest::Client) -> Self {
        Self { endpoint, client }
    }
}

#[async_trait]
impl LlmProvider for RemoteLlm {
    fn identity(&self) -> String {
        format!("{}@{}", self.endpoint.model, self.endpoint.url)
    }

    async fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.endpoint.model,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": 0,
        });
        let value = self.endpoint.post(&self.client, body).await?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| ProviderError::Malformed("chat response has no message content".into()))
    }
}

/// Counts calls and texts passed to an inner embedder.
pub struct CountingEmbedder<P> {
    inner: P,
    calls: AtomicUsize,
    texts: AtomicUsize,
}

impl<P> CountingEmbedder<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
            texts: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn texts_embedded(&self) -> usize {
        self.texts.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl<P: EmbeddingProvider> EmbeddingProvider for CountingEmbedder<P> {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.texts.fetch_add(texts.len(), Ordering::SeqCst);
        self.inner.embed(texts).await
    }
}

/// Fault injection: fails every `period`-th call (1-based) and forwards the rest.
pub struct FailEveryNth<P> {
    inner: P,
    period: usize,
    calls: AtomicUsize,
}

impl<P> FailEveryNth<P> {
    pub fn new(inner: P, period: usize) -> Self {
        assert!(period >= 1);
        Self {
            inner,
            period,
            calls: AtomicUsize::new(0),
        }
    }

    fn should_fail(&self) -> bool {
        (self.calls.fetch_add(1, Ordering::SeqCst) + 1).is_multiple_of(self.period)
    }
}

#[async_trait]
impl<P: RerankProvider> RerankProvider for FailEveryNth<P> {
    fn identity(&self) -> String {
        format!("faulty({})", self.inner.identity())
    }

    async fn rerank(&self, query: &str, documents: &[String]) -> Result<Vec<f64>, ProviderError> {
        if self.should_fail() {
            return Err(ProviderError::Injected("rerank".into()));
        }
        self.inner.rerank(query, documents).await
    }
}

#[async_trait]
impl<P: EmbeddingProvider> EmbeddingProvider for FailEveryNth<P> {
    fn identity(&self) -> String {
        format!("faulty({})", self.inner.identity())
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        if self.should_fail() {
            return Err(ProviderError::Injected("embed".into()));
        }
        self.inner.embed(texts).await
    }
}

/// LLM stand-in that answers every prompt with a closure.
pub struct FnLlm<F> {
    name: String,
    answer: F,
}

impl<F> FnLlm<F>
where
    F: Fn(&str) -> Result<String, ProviderError> + Send + Sync,
{
    pub fn new(name: impl Into<String>, answer: F) -> Self {
        Self {
            name: name.into(),
            answer,
        }
    }
}

#[async_trait]
impl<F> LlmProvider for FnLlm<F>
where
    F: Fn(&str) -> Result<String, ProviderError> + Send + Sync,
{
    fn identity(&self) -> String {
        self.name.clone()
    }

    async fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        (self.answer)(prompt)
    }
}

#[async_trait]
impl<T: EmbeddingProvider + ?Sized> EmbeddingProvider for Arc<T> {
    fn identity(&self) -> String {
        (**self).identity()
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        (**self).embed(texts).await
    }
}

#[async_trait]
impl<T: RerankProvider + ?Sized> RerankProvider for Arc<T> {
    fn identity(&self) -> String {
        (**self).identity()
    }

    async fn rerank(&self, query: &str, documents: &[String]) -> Result<Vec<f64>, ProviderError> {
        (**self).rerank(query, documents).await
    }
}

#[async_trait]
impl<T: LlmProvider + ?Sized> LlmProvider for Arc<T> {
    fn identity(&self) -> String {
        (**self).identity()
    }

    async fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        (**self).complete(prompt).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_drops_stopwords_and_case() {
        let tokens: Vec<_> = tokenize("What are the CHI-2025 papers?").collect();
        assert_eq!(tokens, ["chi", "2025", "papers"]);
    }

    #[test]
    fn offline_embedding_is_deterministic() {
        let e = HashedBowEmbedder::default();
        assert_eq!(e.embed_one("ramen in tokyo"), e.embed_one("ramen in tokyo"));
        let empty = e.embed_one("the of");
        assert_eq!(empty[0], 1.0);
        assert_eq!(empty.iter().filter(|x| **x != 0.0).count(), 1);
    }

    #[test]
    fn overlap_scores() {
        assert_eq!(
            TokenOverlapReranker::score("ramen tokyo", "best ramen shops in tokyo"),
            1.0
        );
        assert_eq!(
            TokenOverlapReranker::score("ramen tokyo", "ramen in osaka"),
            0.5
        );
        assert_eq!(TokenOverlapReranker::score("the", "anything"), 0.0);
    }

    #[tokio::test]
    async fn fail_every_nth_period_two() {
        let p = FailEveryNth::new(TokenOverlapReranker, 2);
        let docs = vec!["x".to_owned()];
        let outcomes: Vec<bool> = futures::future::join_all((0..4).map(|_| p.rerank("x", &docs)))
            .await
            .into_iter()
            .map(|r| r.is_ok())
            .collect();
        assert_eq!(outcomes.iter().filter(|ok| **ok).count(), 2);
    }
}
