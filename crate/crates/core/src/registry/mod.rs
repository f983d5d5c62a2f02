//! Module registry: manifests, content, activation state, visibility, share
//! tokens and the Personal Module's clippings.
//!
//! All mutations go through one write lock, so the activation budget check and
//! the flag flip happen atomically. Readers get cheap `Arc` snapshots of
//! modules and never block each other.

mod store;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::ContentHash;
use crate::sources::SourceLocator;

pub use store::Store;

/// Upper bound (exclusive) on the summed size of all active modules.
pub const ACTIVE_BYTES_LIMIT: usize = 5_000_000;
/// Upper bound (exclusive) on a single clipping.
pub const CLIPPING_BYTES_LIMIT: usize = 500_000;

pub const DEFAULT_OWNER: &str = "local";
pub const PERSONAL_MODULE_ID: &str = "personal";
pub const PERSONAL_MODULE_NAME: &str = "Personal Module";

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("module name must not be empty")]
    EmptyName,
    #[error("a module named {name:?} already exists for owner {owner:?}")]
    NameConflict { owner: String, name: String },
    #[error("module {0} not found")]
    NotFound(ModuleId),
    #[error(
        "activating module {module_id} ({module_name:?}) would bring active content to {would_total} bytes; \
         the limit is {ACTIVE_BYTES_LIMIT}"
    )]
    BudgetExceeded {
        module_id: ModuleId,
        module_name: String,
        would_total: usize,
    },
    #[error("clipping must not be empty")]
    EmptyClipping,
    #[error("clipping is {bytes} bytes; clippings must be under {CLIPPING_BYTES_LIMIT} bytes")]
    ClippingTooLarge { bytes: usize },
    #[error("share token not found")]
    TokenNotFound,
    #[error("module {0} is not shared")]
    AccessDenied(ModuleId),
    #[error("only the owner of module {0} may do that")]
    NotOwner(ModuleId),
    #[error("registry storage: {0}")]
    Io(#[from] std::io::Error),
    #[error("registry manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("stored content for module {0} does not match its manifest")]
    CorruptContent(ModuleId),
}

pub type Result<T, E = RegistryError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModuleId(String);

impl ModuleId {
    pub fn generate() -> Self {
        Self(format!("m-{}", uuid::Uuid::new_v4().simple()))
    }

    pub fn personal() -> Self {
        Self(PERSONAL_MODULE_ID.to_owned())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for ModuleId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<String> for ModuleId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    Public,
    Link,
    Private,
}

impl Visibility {
    pub fn shareable(self) -> bool {
        matches!(self, Visibility::Public | Visibility::Link)
    }
}

impl std::str::FromStr for Visibility {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "public" => Ok(Self::Public),
            "link" => Ok(Self::Link),
            "private" => Ok(Self::Private),
            other => Err(format!(
                "unknown visibility {other:?} (expected public, link or private)"
            )),
        }
    }
}

/// 128-bit random capability token, URL-safe base64 without padding.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ShareToken(String);

impl ShareToken {
    pub fn generate() -> Self {
        let mut bytes = [0u8; 16];
        rand::rng().fill_bytes(&mut bytes);
        Self(URL_SAFE_NO_PAD.encode(bytes))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for ShareToken {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl fmt::Display for ShareToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeModule {
    pub id: ModuleId,
    pub owner: String,
    pub name: String,
    pub description: String,
    pub example_queries: Vec<String>,
    pub source: SourceLocator,
    pub visibility: Visibility,
    pub content: String,
    pub content_hash: ContentHash,
    pub byte_size: usize,
    pub version: u64,
    pub active: bool,
    /// Set on copies made through a share token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imported_from: Option<ModuleId>,
    #[serde(default)]
    pub share_tokens: BTreeSet<ShareToken>,
    pub updated_at: DateTime<Utc>,
}

impl KnowledgeModule {
    pub fn summary(&self) -> ModuleSummary {
        ModuleSummary {
            id: self.id.clone(),
            owner: self.owner.clone(),
            name: self.name.clone(),
            description: self.description.clone(),
            example_queries: self.example_queries.clone(),
            visibility: self.visibility,
            content_hash: self.content_hash.clone(),
            byte_size: self.byte_size,
            version: self.version,
            active: self.active,
        }
    }
}

/// A module without its content, as shown in listings and the gallery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleSummary {
    pub id: ModuleId,
    pub owner: String,
    pub name: String,
    pub description: String,
    pub example_queries: Vec<String>,
    pub visibility: Visibility,
    pub content_hash: ContentHash,
    pub byte_size: usize,
    pub version: u64,
    pub active: bool,
}

#[derive(Debug, Clone)]
pub struct NewModule {
    pub owner: String,
    pub name: String,
    pub description: String,
    pub example_queries: Vec<String>,
    pub source: SourceLocator,
    pub visibility: Visibility,
    pub content: String,
}

impl NewModule {
    pub fn inline(
        name: impl Into<String>,
        visibility: Visibility,
        content: impl Into<String>,
    ) -> Self {
        Self {
            owner: DEFAULT_OWNER.to_owned(),
            name: name.into(),
            description: String::new(),
            example_queries: Vec::new(),
            source: SourceLocator::inline(),
            visibility,
            content: content.into(),
        }
    }

    pub fn description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    pub fn owner(mut self, owner: impl Into<String>) -> Self {
        self.owner = owner.into();
        self
    }

    pub fn source(mut self, source: SourceLocator) -> Self {
        self.source = source;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clipping {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_url: Option<String>,
    pub captured_at: DateTime<Utc>,
    pub byte_size: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonalModule {
    pub clippings: Vec<Clipping>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationSet {
    pub active_module_ids: BTreeSet<ModuleId>,
    pub total_active_bytes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClippingFormat {
    PlainText,
    MarkdownGist,
}

impl std::str::FromStr for ClippingFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "plain_text" | "plain" => Ok(Self::PlainText),
            "markdown_gist" | "gist" => Ok(Self::MarkdownGist),
            other => Err(format!("unknown clipping format {other:?}")),
        }
    }
}

/// Result of replacing a module's content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentUpdate {
    pub changed: bool,
    pub version: u64,
    pub content_hash: ContentHash,
    /// The module was active and the new content no longer fits the budget.
    pub deactivated: bool,
}

#[derive(Default)]
struct Inner {
    modules: BTreeMap<ModuleId, Arc<KnowledgeModule>>,
    tokens: HashMap<ShareToken, ModuleId>,
    personal: PersonalModule,
}

impl Inner {
    fn module(&self, id: &ModuleId) -> Result<&Arc<KnowledgeModule>> {
        self.modules
            .get(id)
            .ok_or_else(|| RegistryError::NotFound(id.clone()))
    }

    fn name_taken(&self, owner: &str, name: &str) -> bool {
        self.modules
            .values()
            .any(|m| m.owner == owner && m.name == name)
    }

    fn activation_set(&self) -> ActivationSet {
        let mut set = ActivationSet::default();
        for m in self.modules.values().filter(|m| m.active) {
            set.active_module_ids.insert(m.id.clone());
            set.total_active_bytes += m.byte_size;
        }
        set
    }
}

pub struct Registry {
    inner: RwLock<Inner>,
    store: Option<Store>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl Registry {
    pub fn in_memory() -> Self {
        Self {
            inner: RwLock::new(Inner::default()),
            store: None,
        }
    }

    /// Opens (or initializes) a registry persisted under `dir`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let store = Store::open(dir.as_ref())?;
        let (modules, personal) = store.load()?;
        let mut inner = Inner {
            personal,
            ..Inner::default()
        };
        for module in modules {
            for token in &module.share_tokens {
                inner.tokens.insert(token.clone(), module.id.clone());
            }
            inner.modules.insert(module.id.clone(), Arc::new(module));
        }
        Ok(Self {
            inner: RwLock::new(inner),
            store: Some(store),
        })
    }

    fn persist_module(&self, module: &KnowledgeModule, content_changed: bool) -> Result<()> {
        match &self.store {
            Some(store) => store.save_module(module, content_changed),
            None => Ok(()),
        }
    }

    fn persist_personal(&self, personal: &PersonalModule) -> Result<()> {
        match &self.store {
            Some(store) => store.save_personal(personal),
            None => Ok(()),
        }
    }

    pub fn create_module(&self, new: NewModule) -> Result<KnowledgeModule> {
        self.insert_new(new, None)
    }

    fn insert_new(
        &self,
        new: NewModule,
        imported_from: Option<ModuleId>,
    ) -> Result<KnowledgeModule> {
        if new.name.trim().is_empty() {
            return Err(RegistryError::EmptyName);
        }
        let mut inner = self.inner.write();
        if inner.name_taken(&new.owner, &new.name) {
            return Err(RegistryError::NameConflict {
                owner: new.owner,
                name: new.name,
            });
        }
        let module = KnowledgeModule {
            id: ModuleId::generate(),
            owner: new.owner,
            name: new.name,
            description: new.description,
            example_queries: new.example_queries,
            source: new.source,
            visibility: new.visibility,
            content_hash: ContentHash::of(&new.content),
            byte_size: new.content.len(),
            content: new.content,
            version: 1,
            active: false,
            imported_from,
            share_tokens: BTreeSet::new(),
            updated_at: Utc::now(),
        };
        self.persist_module(&module, true)?;
        inner
            .modules
            .insert(module.id.clone(), Arc::new(module.clone()));
        Ok(module)
    }

    pub fn get(&self, id: &ModuleId) -> Result<Arc<KnowledgeModule>> {
        self.inner.read().module(id).cloned()
    }

    /// Every module owned by `owner`, ordered by name.
    pub fn list_modules(&self, owner: &str) -> Vec<ModuleSummary> {
        let inner = self.inner.read();
        let mut out: Vec<_> = inner
            .modules
            .values()
            .filter(|m| m.owner == owner)
            .map(|m| m.summary())
            .collect();
        out.sort_by(|a, b| a.name.cmp(&b.name).then_with(|| a.id.cmp(&b.id)));
        out
    }

    /// Case-insensitive substring search over public modules' names and descriptions.
    pub fn search_modules(&self, keyword: &str) -> Vec<ModuleSummary> {
        let needle = keyword.to_lowercase();
        let inner = self.inner.read();
        let mut out: Vec<_> = inner
            .modules
            .values()
            .filter(|m| m.visibility == Visibility::Public)
            .filter(|m| {
                needle.is_empty()
                    || m.name.to_lowercase().contains(&needle)
                    || m.description.to_lowercase().contains(&needle)
            })
            .map(|m| m.summary())
            .collect();
        out.sort_by(|a, b| a.name.cmp(&b.name).then_with(|| a.id.cmp(&b.id)));
        out
    }

    pub fn activation_set(&self) -> ActivationSet {
        self.inner.read().activation_set()
    }

    pub fn active_modules(&self) -> Vec<Arc<KnowledgeModule>> {
        self.inner
            .read()
            .modules
            .values()
            .filter(|m| m.active)
            .cloned()
            .collect()
    }

    pub fn toggle_module(&self, id: &ModuleId, active: bool) -> Result<ActivationSet> {
        let mut inner = self.inner.write();
        let module = inner.module(id)?.clone();
        if module.active == active {
            return Ok(inner.activation_set());
        }
        if active {
            let would_total = inner.activation_set().total_active_bytes + module.byte_size;
            if would_total >= ACTIVE_BYTES_LIMIT {
                return Err(RegistryError::BudgetExceeded {
                    module_id: module.id.clone(),
                    module_name: module.name.clone(),
                    would_total,
                });
            }
        }
        let mut updated = (*module).clone();
        updated.active = active;
        self.persist_module(&updated, false)?;
        inner.modules.insert(updated.id.clone(), Arc::new(updated));
        Ok(inner.activation_set())
    }

    pub fn set_visibility(&self, id: &ModuleId, visibility: Visibility) -> Result<KnowledgeModule> {
        let mut inner = self.inner.write();
        let mut updated = (**inner.module(id)?).clone();
        updated.visibility = visibility;
        self.persist_module(&updated, false)?;
        inner
            .modules
            .insert(updated.id.clone(), Arc::new(updated.clone()));
        Ok(updated)
    }

    /// Replaces a module's content, bumping its version when the bytes change.
    ///
    /// An active module whose new content would break the activation budget is
    /// stored but switched off.
    pub fn update_content(&self, id: &ModuleId, content: String) -> Result<ContentUpdate> {
        let mut inner = self.inner.write();
        let current = inner.module(id)?.clone();
        let content_hash = ContentHash::of(&content);
        if content_hash == current.content_hash {
            return Ok(ContentUpdate {
                changed: false,
                version: current.version,
                content_hash,
                deactivated: false,
            });
        }
        let mut updated = (*current).clone();
        updated.byte_size = content.len();
        updated.content = content;
        updated.content_hash = content_hash.clone();
        updated.version += 1;
        updated.updated_at = Utc::now();
        let mut deactivated = false;
        if current.active {
            let others = inner.activation_set().total_active_bytes - current.byte_size;
            if others + updated.byte_size >= ACTIVE_BYTES_LIMIT {
                updated.active = false;
                deactivated = true;
                tracing::warn!(module = %id, "refreshed content exceeds the activation budget; module deactivated");
            }
        }
        self.persist_module(&updated, true)?;
        let version = updated.version;
        inner.modules.insert(updated.id.clone(), Arc::new(updated));
        Ok(ContentUpdate {
            changed: true,
            version,
            content_hash,
            deactivated,
        })
    }

    /// Mints a new share token for a module owned by `caller`.
    pub fn share_module(&self, id: &ModuleId, caller: &str) -> Result<ShareToken> {
        let mut inner = self.inner.write();
        let module = inner.module(id)?.clone();
        if module.owner != caller {
            return Err(RegistryError::NotOwner(id.clone()));
        }
        let token = ShareToken::generate();
        let mut updated = (*module).clone();
        updated.share_tokens.insert(token.clone());
        self.persist_module(&updated, false)?;
        inner.modules.insert(updated.id.clone(), Arc::new(updated));
        inner.tokens.insert(token.clone(), id.clone());
        Ok(token)
    }

    /// Looks up the module behind a token. Visibility is checked on every call,
    /// so making a module private revokes all of its tokens.
    pub fn resolve_token(&self, token: &ShareToken) -> Result<Arc<KnowledgeModule>> {
        let inner = self.inner.read();
        let id = inner
            .tokens
            .get(token)
            .ok_or(RegistryError::TokenNotFound)?;
        let module = inner.module(id)?;
        if !module.visibility.shareable() {
            return Err(RegistryError::AccessDenied(id.clone()));
        }
        Ok(module.clone())
    }

    /// Imports a snapshot of a shared module into `owner`'s scope as a private copy.
    pub fn import_by_token(
        &self,
        token: &ShareToken,
        owner: &str,
        rename: Option<String>,
    ) -> Result<KnowledgeModule> {
        let original = self.resolve_token(token)?;
        let new = NewModule {
            owner: owner.to_owned(),
            name: rename.unwrap_or_else(|| original.name.clone()),
            description: original.description.clone(),
            example_queries: original.example_queries.clone(),
            source: original.source.clone(),
            visibility: Visibility::Private,
            content: original.content.clone(),
        };
        self.insert_new(new, Some(original.id.clone()))
    }

    pub fn add_clipping(&self, text: &str, source_url: Option<String>) -> Result<Clipping> {
        if text.is_empty() {
            return Err(RegistryError::EmptyClipping);
        }
        if text.len() >= CLIPPING_BYTES_LIMIT {
            return Err(RegistryError::ClippingTooLarge { bytes: text.len() });
        }
        let clipping = Clipping {
            id: format!("c-{}", uuid::Uuid::new_v4().simple()),
            text: text.to_owned(),
            source_url,
            captured_at: Utc::now(),
            byte_size: text.len(),
        };
        let mut inner = self.inner.write();
        let mut personal = inner.personal.clone();
        personal.clippings.push(clipping.clone());
        self.persist_personal(&personal)?;
        inner.personal = personal;
        Ok(clipping)
    }

    pub fn personal_module(&self) -> PersonalModule {
        self.inner.read().personal.clone()
    }

    pub fn export_clippings(&self, format: ClippingFormat) -> String {
        export_clippings(&self.inner.read().personal, format)
    }
}

pub fn export_clippings(personal: &PersonalModule, format: ClippingFormat) -> String {
    let blocks: Vec<String> = match format {
        ClippingFormat::PlainText => personal.clippings.iter().map(|c| c.text.clone()).collect(),
        ClippingFormat::MarkdownGist => personal
            .clippings
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut block = format!("## Clipping {}\n\n", i + 1);
                if let Some(url) = &c.source_url {
                    block.push_str(&format!("Source: {url}\n\n"));
                }
                block.push_str(&c.text);
                block
            })
            .collect(),
    };
    blocks.join("\n\n")
}
