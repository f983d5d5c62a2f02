use std::path::Path;
use std::sync::Arc;

use dashmap::DashMap;
use thiserror::Error;

use crate::config::KnollConfig;

use crate::registry::RegistryError;
use crate::registry::{KnowledgeModule, ModuleId, NewModule, Registry};
use crate::router::{QueryContext, RegistryView, Router, RouterError, RoutingResult};
use crate::sources::{
    self, DocumentConnector, RefreshOutcome, RefreshStatus, SourceError, SourceFetcher, SourceKind,
};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Router(#[from] RouterError),
}

/// Registry, router and document connector wired together.
pub struct Knoll {
    registry: Arc<Registry>,
    router: Arc<Router>,
    connector: Arc<dyn DocumentConnector>,
    refresh_locks: DashMap<ModuleId, Arc<tokio::sync::Mutex<()>>>,
}

impl Knoll {
    pub fn new(
        registry: Arc<Registry>,
        router: Arc<Router>,
        connector: Arc<dyn DocumentConnector>,
    ) -> Self {
        Self {
            registry,
            router,
            connector,
            refresh_locks: DashMap::new(),
        }
    }

    /// Opens the registry under `data_dir` with the configured providers.
    pub fn from_config(config: &KnollConfig, data_dir: &Path) -> Result<Self, ServiceError> {
        let registry = Arc::new(Registry::open(data_dir)?);
        let router = Arc::new(Router::new(
            config.router.clone(),
            config.embedder(),
            config.reranker(),
        )?);
        Ok(Self::new(
            registry,
            router,
            Arc::new(SourceFetcher::default()),
        ))
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn router(&self) -> &Arc<Router> {
        &self.router
    }

    pub fn connector(&self) -> &Arc<dyn DocumentConnector> {
        &self.connector
    }

    /// Creates a module, fetching its content first unless the source is inline.
    pub async fn create_module(&self, mut new: NewModule) -> Result<KnowledgeModule, SourceError> {
        new.source.validate()?;
        if new.source.kind != SourceKind::Inline {
            new.content = self.connector.fetch_document(&new.source).await?;
        }
        Ok(self.registry.create_module(new)?)
    }

    /// Re-fetches a module. Refreshes of one module are serialized; on change
    /// the router's cached chunks and embeddings for it are dropped.
    pub async fn refresh_module(&self, id: &ModuleId) -> Result<RefreshOutcome, SourceError> {
        let lock = self.refresh_locks.entry(id.clone()).or_default().clone();
        let _guard = lock.lock().await;
        let outcome = sources::refresh_module(&self.registry, self.connector.as_ref(), id).await?;
        if outcome.status == RefreshStatus::Updated {
            self.router.invalidate_module(id);
        }
        Ok(outcome)
    }

    pub async fn route(&self, qc: &QueryContext) -> Result<RoutingResult, RouterError> {
        self.router
            .route(qc, &RegistryView::of(&self.registry))
            .await
    }
}
