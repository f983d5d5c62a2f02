//! TOML configuration.
//!
//! ```toml
//! data_dir = "knoll-data"
//!
//! [router]
//! k_retrieve = 5
//! filter_threshold = 0.3
//! include_threshold = 0.7
//! chunk_budget = 4000
//!
//! [providers.embedding]
//! kind = "remote"
//! url = "https://api.example.com/v1/embeddings"
//! model = "embed-small"
//! api_key_env = "EMBEDDING_API_KEY"
//!
//! [providers.rerank]
//! kind = "offline"
//!
//! [upstream]
//! url = "https://api.example.com/v1"
//! api_key_env = "KNOLL_UPSTREAM_API_KEY"
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::{
    EmbeddingProvider, HashedBowEmbedder, LlmProvider, RemoteEmbedder, RemoteEndpoint, RemoteLlm,
    RemoteReranker, RerankProvider, TokenOverlapReranker,
};
use crate::proxy::Upstream;
use crate::router::RouterConfig;

pub const UPSTREAM_KEY_ENV: &str = "KNOLL_UPSTREAM_API_KEY";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("no {0} provider configured")]
    Missing(&'static str),
    #[error("the offline provider family has no {0}")]
    NoOfflineLlm(&'static str),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnollConfig {
    pub data_dir: Option<PathBuf>,
    pub router: RouterConfig,
    pub providers: ProvidersConfig,
    pub upstream: Option<UpstreamConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProvidersConfig {
    pub embedding: ProviderSpec,
    pub rerank: ProviderSpec,
    pub llm: Option<ProviderSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSpec {
    #[default]
    Offline,
    Remote {
        url: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default)]
        timeout_ms: Option<u64>,
    },
}

impl ProviderSpec {
    fn endpoint(&self) -> Option<RemoteEndpoint> {
        match self {
            ProviderSpec::Offline => None,
            ProviderSpec::Remote {
                url,
                model,
                api_key_env,
                timeout_ms,
            } => {
                let mut endpoint = RemoteEndpoint::new(url.clone(), model.clone());
                endpoint.api_key = api_key_env.as_ref().and_then(|var| std::env::var(var).ok());
                if let Some(ms) = timeout_ms {
                    endpoint.timeout_ms = *ms;
                }
                Some(endpoint)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpstreamConfig {
    /// Base URL of an OpenAI-compatible API; `/chat/completions` is appended.
    pub url: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
}

impl KnollConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        Ok(toml::from_str(&text)?)
    }

    pub fn embedder(&self) -> Arc<dyn EmbeddingProvider> {
        match self.providers.embedding.endpoint() {
            None => Arc::new(HashedBowEmbedder::default()),
            Some(endpoint) => Arc::new(RemoteEmbedder::new(endpoint, reqwest::Client::new())),
        }
    }

    pub fn reranker(&self) -> Arc<dyn RerankProvider> {
        match self.providers.rerank.endpoint() {
            None => Arc::new(TokenOverlapReranker),
            Some(endpoint) => Arc::new(RemoteReranker::new(endpoint, reqwest::Client::new())),
        }
    }

    pub fn llm(&self) -> Result<Arc<dyn LlmProvider>, ConfigError> {
        let spec = self
            .providers
            .llm
            .as_ref()
            .ok_or(ConfigError::Missing("llm"))?;
        let endpoint = spec
            .endpoint()
            .ok_or(ConfigError::NoOfflineLlm("language model"))?;
        Ok(Arc::new(RemoteLlm::new(endpoint, reqwest::Client::new())))
    }

    /// Upstream for the proxy. The key comes from the configured variable,
    /// falling back to [`UPSTREAM_KEY_ENV`].
    pub fn upstream(&self) -> Option<Upstream> {
        let cfg = self.upstream.as_ref()?;
        let var = cfg.api_key_env.as_deref().unwrap_or(UPSTREAM_KEY_ENV);
        Some(Upstream {
            base_url: cfg.url.clone(),
            api_key: std::env::var(var).ok().filter(|k| !k.is_empty()),
        })
    }
}
