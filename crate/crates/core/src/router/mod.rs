//! Two-stage retrieve-then-rerank routing over active modules and the
//! Personal Module.
//!
//! 1. Retrieval: the `k_retrieve` module documents closest to the query by
//!    cosine similarity, plus every clipping with no filtering at all.
//! 2. Rerank: the provider scores each retrieved document in `[0, 1]`.
//! 3. Selection: the top five documents scoring at least `filter_threshold`,
//!    plus every document scoring at least `include_threshold`.
//!
//! Finally each selected document's content hash is claimed in the
//! conversation state; only documents not sent before in that conversation are
//! injected.

mod cache;
mod conversation;

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::sync::Arc;

use dashmap::DashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::{self, Chunk, ChunkError, DEFAULT_CHUNK_BUDGET};
use crate::hash::ContentHash;
use crate::providers::{EmbeddingProvider, ProviderError, RerankProvider};
use crate::registry::{
    Clipping, KnowledgeModule, ModuleId, PersonalModule, Registry, PERSONAL_MODULE_NAME,
};

pub use cache::EmbeddingCache;
pub use conversation::{ConversationId, ConversationState, ConversationStore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RouterError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("embedding has no direction (zero or non-finite values)")]
    DegenerateEmbedding,
    #[error("reranker returned {got} scores for {expected} documents")]
    ScoreCount { expected: usize, got: usize },
    #[error("reranker score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("invalid router config: {0}")]
    Config(String),
    #[error(transparent)]
    Chunk(#[from] ChunkError),
}

pub type Result<T, E = RouterError> = std::result::Result<T, E>;

/// Unit-length embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn normalized(mut values: Vec<f64>) -> Result<Self> {
        let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(RouterError::DegenerateEmbedding);
        }
        for x in &mut values {
            *x /= norm;
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(RouterError::DimensionMismatch(a.dim(), b.dim()));
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RouterConfig {
    pub k_retrieve: usize,
    pub filter_threshold: f64,
    pub include_threshold: f64,
    pub chunk_budget: usize,
    /// How many documents the selection keeps before the high-relevance extras.
    pub select_top_n: usize,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            k_retrieve: 5,
            filter_threshold: 0.3,
            include_threshold: 0.7,
            chunk_budget: DEFAULT_CHUNK_BUDGET,
            select_top_n: 5,
        }
    }
}

impl RouterConfig {
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: &str| Err(RouterError::Config(msg.to_owned()));
        if self.k_retrieve < 1 {
            return invalid("k_retrieve must be at least 1");
        }
        if !(0.0 <= self.filter_threshold
            && self.filter_threshold <= self.include_threshold
            && self.include_threshold <= 1.0)
        {
            return invalid(
                "thresholds must satisfy 0 <= filter_threshold <= include_threshold <= 1",
            );
        }
        if self.chunk_budget < chunker::MIN_CHUNK_BUDGET {
            return invalid("chunk_budget is below the chunker minimum");
        }
        if self.select_top_n < 1 {
            return invalid("select_top_n must be at least 1");
        }
        Ok(())
    }
}

/// A unit the router can retrieve and inject: a module chunk or a clipping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    /// Module the document belongs to; clippings use the Personal Module's id.
    pub module_id: ModuleId,
    pub module_name: String,
    /// Chunk index within the module, or position in the Personal Module.
    pub index: usize,
    pub breadcrumb: String,
    pub body: String,
    pub content_hash: ContentHash,
    pub is_clipping: bool,
}

impl Document {
    pub fn from_chunk(chunk: Chunk, module_name: &str) -> Self {
        Self {
            module_id: chunk.module_id,
            module_name: module_name.to_owned(),
            index: chunk.index,
            breadcrumb: chunk.breadcrumb,
            body: chunk.body,
            content_hash: chunk.content_hash,
            is_clipping: false,
        }
    }

    pub fn from_clipping(index: usize, clipping: &Clipping) -> Self {
        let breadcrumb = match &clipping.source_url {
            Some(url) => format!("{PERSONAL_MODULE_NAME} > {url}"),
            None => PERSONAL_MODULE_NAME.to_owned(),
        };
        Self {
            module_id: ModuleId::personal(),
            module_name: PERSONAL_MODULE_NAME.to_owned(),
            index,
            content_hash: ContentHash::of_parts([breadcrumb.as_bytes(), clipping.text.as_bytes()]),
            breadcrumb,
            body: clipping.text.clone(),
            is_clipping: true,
        }
    }

    /// Text handed to the embedder and the reranker.
    pub fn text(&self) -> String {
        format!("{}\n{}", self.breadcrumb, self.body)
    }

    fn retrieval_key(&self) -> (&ModuleId, usize) {
        (&self.module_id, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDoc {
    pub doc: Arc<Document>,
    pub score: f64,
}

/// Score descending, then content hash ascending.
fn by_score_then_hash(a: &RankedDoc, b: &RankedDoc) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.doc.content_hash.cmp(&b.doc.content_hash))
}

/// Top `select_top_n` documents with score at least `filter_threshold`, plus
/// every document with score at least `include_threshold`, best first.
pub fn select(reranked: &[RankedDoc], cfg: &RouterConfig) -> Vec<RankedDoc> {
    let mut eligible: Vec<RankedDoc> = reranked
        .iter()
        .filter(|d| d.score >= cfg.filter_threshold)
        .cloned()
        .collect();
    eligible.sort_by(by_score_then_hash);
    let high = eligible
        .iter()
        .filter(|d| d.score >= cfg.include_threshold)
        .count();
    let keep = cfg.select_top_n.min(eligible.len()).max(high);
    eligible.truncate(keep);
    eligible
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryContext {
    pub conversation_id: Option<ConversationId>,
    pub current_query: String,
    pub previous_query: Option<String>,
}

impl QueryContext {
    pub fn new(current_query: impl Into<String>) -> Self {
        Self {
            conversation_id: None,
            current_query: current_query.into(),
            previous_query: None,
        }
    }

    pub fn in_conversation(mut self, id: impl Into<ConversationId>) -> Self {
        self.conversation_id = Some(id.into());
        self
    }

    pub fn with_previous(mut self, previous: Option<String>) -> Self {
        self.previous_query = previous;
        self
    }

    /// The previous query and the current one, newline-separated.
    pub fn retrieval_input(&self) -> String {
        match &self.previous_query {
            Some(prev) => format!("{prev}\n{}", self.current_query),
            None => self.current_query.clone(),
        }
    }
}

/// What the router sees of the registry for one request.
#[derive(Debug, Clone, Default)]
pub struct RegistryView {
    pub modules: Vec<Arc<KnowledgeModule>>,
    pub personal: PersonalModule,
}

impl RegistryView {
    pub fn of(registry: &Registry) -> Self {
        Self {
            modules: registry.active_modules(),
            personal: registry.personal_module(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Retrieval {
    /// Top-k module documents with their cosine similarity, best first.
    pub modules: Vec<(Arc<Document>, f64)>,
    pub clippings: Vec<Arc<Document>>,
}

impl Retrieval {
    pub fn pool(&self) -> Vec<Arc<Document>> {
        self.modules
            .iter()
            .map(|(d, _)| d.clone())
            .chain(self.clippings.iter().cloned())
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoutingResult {
    /// Every retrieved document with its rerank score, in retrieval order.
    pub pool: Vec<RankedDoc>,
    pub selected: Vec<RankedDoc>,
    /// The part of `selected` not yet sent in this conversation.
    pub injected: Vec<RankedDoc>,
    pub activated_module_ids: BTreeSet<ModuleId>,
}

impl RoutingResult {
    /// Best score per activated module, best first, with the module's name.
    pub fn module_scores(&self) -> Vec<(ModuleId, String, f64)> {
        let mut best: Vec<(ModuleId, String, f64)> = Vec::new();
        for d in &self.selected {
            match best.iter_mut().find(|(id, _, _)| *id == d.doc.module_id) {
                Some(entry) => entry.2 = entry.2.max(d.score),
                None => best.push((d.doc.module_id.clone(), d.doc.module_name.clone(), d.score)),
            }
        }
        best.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
        best
    }
}

type ChunkEntry = (ContentHash, usize, Arc<Vec<Arc<Document>>>);

pub struct Router {
    config: RouterConfig,
    embedder: Arc<dyn EmbeddingProvider>,
    reranker: Arc<dyn RerankProvider>,
    cache: EmbeddingCache,
    chunks: DashMap<ModuleId, ChunkEntry>,
    conversations: ConversationStore,
}

impl Router {
    pub fn new(
        config: RouterConfig,
        embedder: Arc<dyn EmbeddingProvider>,
        reranker: Arc<dyn RerankProvider>,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            embedder,
            reranker,
            cache: EmbeddingCache::default(),
            chunks: DashMap::new(),
            conversations: ConversationStore::default(),
        })
    }

    pub fn config(&self) -> &RouterConfig {
        &self.config
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }

    pub fn conversations(&self) -> &ConversationStore {
        &self.conversations
    }

    pub fn embedder(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.embedder
    }

    /// Drops cached chunks and embeddings derived from a module's old content.
    pub fn invalidate_module(&self, id: &ModuleId) {
        self.chunks.remove(id);
        self.cache.invalidate_module(id);
    }

    pub async fn embed_with_cache(
        &self,
        module_id: Option<&ModuleId>,
        content_hash: &ContentHash,
        text: &str,
    ) -> Result<Arc<EmbeddingVector>> {
        if let Some(hit) = self.cache.get(content_hash) {
            return Ok(hit);
        }
        let mut raw = self.embedder.embed(&[text.to_owned()]).await?;
        let vector = Arc::new(EmbeddingVector::normalized(raw.pop().ok_or(
            RouterError::Provider(ProviderError::Malformed("no embedding returned".into())),
        )?)?);
        Ok(self.cache.insert(module_id, content_hash.clone(), vector))
    }

    /// Embeddings for `docs` in order, calling the provider once for all misses.
    pub async fn embed_documents(
        &self,
        docs: &[Arc<Document>],
    ) -> Result<Vec<Arc<EmbeddingVector>>> {
        let mut missing: Vec<&Arc<Document>> = Vec::new();
        for d in docs {
            if !self.cache.contains(&d.content_hash)
                && !missing.iter().any(|m| m.content_hash == d.content_hash)
            {
                missing.push(d);
            }
        }
        if !missing.is_empty() {
            let texts: Vec<String> = missing.iter().map(|d| d.text()).collect();
            let raw = self.embedder.embed(&texts).await?;
            if raw.len() != missing.len() {
                return Err(ProviderError::Malformed(format!(
                    "expected {} embeddings, got {}",
                    missing.len(),
                    raw.len()
                ))
                .into());
            }
            for (d, values) in missing.iter().zip(raw) {
                let owner = (!d.is_clipping).then_some(&d.module_id);
                self.cache.insert(
                    owner,
                    d.content_hash.clone(),
                    Arc::new(EmbeddingVector::normalized(values)?),
                );
            }
        }
        docs.iter()
            .map(|d| {
                self.cache.get(&d.content_hash).ok_or_else(|| {
                    ProviderError::Malformed("embedding vanished from cache".into()).into()
                })
            })
            .collect()
    }

    async fn embed_query(&self, text: &str) -> Result<EmbeddingVector> {
        let mut raw = self.embedder.embed(&[text.to_owned()]).await?;
        let values = raw
            .pop()
            .ok_or_else(|| ProviderError::Malformed("no embedding returned".into()))?;
        EmbeddingVector::normalized(values)
    }

    /// Retrieval documents for a module: the whole module when it fits one
    /// chunk, otherwise one document per chunk.
    pub fn module_documents(&self, module: &KnowledgeModule) -> Result<Arc<Vec<Arc<Document>>>> {
        if let Some(entry) = self.chunks.get(&module.id) {
            let (hash, budget, docs) = entry.value();
            if *hash == module.content_hash && *budget == self.config.chunk_budget {
                return Ok(docs.clone());
            }
        }
        let docs: Arc<Vec<Arc<Document>>> = Arc::new(
            chunker::split_module(module, self.config.chunk_budget)?
                .into_iter()
                .map(|c| Arc::new(Document::from_chunk(c, &module.name)))
                .collect(),
        );
        self.chunks.insert(
            module.id.clone(),
            (
                module.content_hash.clone(),
                self.config.chunk_budget,
                docs.clone(),
            ),
        );
        Ok(docs)
    }

    /// Top-k module documents by cosine similarity, plus all clippings.
    pub async fn retrieve(
        &self,
        query: &str,
        modules: &[Arc<KnowledgeModule>],
        personal: &PersonalModule,
    ) -> Result<Retrieval> {
        let clippings: Vec<Arc<Document>> = personal
            .clippings
            .iter()
            .enumerate()
            .map(|(i, c)| Arc::new(Document::from_clipping(i, c)))
            .collect();

        let mut candidates: Vec<Arc<Document>> = Vec::new();
        for module in modules {
            candidates.extend(self.module_documents(module)?.iter().cloned());
        }
        if candidates.is_empty() {
            return Ok(Retrieval {
                modules: Vec::new(),
                clippings,
            });
        }

        let query_vec = self.embed_query(query).await?;
        let doc_vecs = self.embed_documents(&candidates).await?;
        let mut scored = Vec::with_capacity(candidates.len());
        for (doc, vec) in candidates.into_iter().zip(doc_vecs) {
            let sim = cosine_similarity(&query_vec, &vec)?;
            scored.push((doc, sim));
        }
        scored.sort_by(|(da, sa), (db, sb)| {
            sb.total_cmp(sa)
                .then_with(|| da.retrieval_key().cmp(&db.retrieval_key()))
        });
        scored.truncate(self.config.k_retrieve);
        Ok(Retrieval {
            modules: scored,
            clippings,
        })
    }

    /// Scores every document in `pool` against the query.
    pub async fn rerank(&self, query: &str, pool: Vec<Arc<Document>>) -> Result<Vec<RankedDoc>> {
        if pool.is_empty() {
            return Ok(Vec::new());
        }
        let texts: Vec<String> = pool.iter().map(|d| d.text()).collect();
        let scores = self.reranker.rerank(query, &texts).await?;
        if scores.len() != pool.len() {
            return Err(RouterError::ScoreCount {
                expected: pool.len(),
                got: scores.len(),
            });
        }
        pool.into_iter()
            .zip(scores)
            .map(|(doc, score)| {
                if (0.0..=1.0).contains(&score) {
                    Ok(RankedDoc { doc, score })
                } else {
                    Err(RouterError::ScoreOutOfRange(score))
                }
            })
            .collect()
    }

    /// Retrieve, rerank and select without touching conversation state.
    pub async fn rank(
        &self,
        query: &str,
        view: &RegistryView,
    ) -> Result<(Vec<RankedDoc>, Vec<RankedDoc>)> {
        let retrieval = self.retrieve(query, &view.modules, &view.personal).await?;
        let pool = self.rerank(query, retrieval.pool()).await?;
        let selected = select(&pool, &self.config);
        Ok((pool, selected))
    }

    pub async fn route(&self, qc: &QueryContext, view: &RegistryView) -> Result<RoutingResult> {
        let query = qc.retrieval_input();
        let (pool, selected) = self.rank(&query, view).await?;
        let injected = match &qc.conversation_id {
            Some(id) => {
                let hashes: Vec<ContentHash> = selected
                    .iter()
                    .map(|d| d.doc.content_hash.clone())
                    .collect();
                let fresh = self.conversations.claim(id, &hashes);
                selected
                    .iter()
                    .zip(fresh)
                    .filter(|(_, new)| *new)
                    .map(|(d, _)| d.clone())
                    .collect()
            }
            None => selected.clone(),
        };
        let activated_module_ids = selected.iter().map(|d| d.doc.module_id.clone()).collect();
        Ok(RoutingResult {
            pool,
            selected,
            injected,
            activated_module_ids,
        })
    }
}
