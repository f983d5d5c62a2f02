//! Document sources: where module content comes from and how it is refreshed.

mod html;

use std::fmt;
use std::path::Path;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::ContentHash;
use crate::registry::{ModuleId, Registry, RegistryError};

pub use html::html_to_markdown;

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("invalid {kind} locator {locator:?}: {reason}")]
    InvalidLocator {
        kind: SourceKind,
        locator: String,
        reason: String,
    },
    #[error("fetching {kind} source {locator:?} failed: {reason}")]
    Fetch {
        kind: SourceKind,
        locator: String,
        reason: String,
    },
    #[error("unsupported media type {0:?}")]
    UnsupportedMedia(String),
    #[error("module {0} has inline content and cannot be refreshed")]
    NotRefreshable(ModuleId),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    LocalFile,
    HttpRaw,
    Inline,
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceKind::LocalFile => "local_file",
            SourceKind::HttpRaw => "http_raw",
            SourceKind::Inline => "inline",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceLocator {
    pub kind: SourceKind,
    #[serde(default)]
    pub locator: String,
}

impl SourceLocator {
    pub fn inline() -> Self {
        Self {
            kind: SourceKind::Inline,
            locator: String::new(),
        }
    }

    pub fn local_file(path: impl AsRef<Path>) -> Self {
        Self {
            kind: SourceKind::LocalFile,
            locator: path.as_ref().to_string_lossy().into_owned(),
        }
    }

    pub fn http_raw(url: &str) -> Result<Self, SourceError> {
        let locator = Self {
            kind: SourceKind::HttpRaw,
            locator: url.to_owned(),
        };
        locator.validate()?;
        Ok(locator)
    }

    pub fn validate(&self) -> Result<(), SourceError> {
        let invalid = |reason: &str| SourceError::InvalidLocator {
            kind: self.kind,
            locator: self.locator.clone(),
            reason: reason.to_owned(),
        };
        match self.kind {
            SourceKind::Inline if !self.locator.is_empty() => {
                Err(invalid("inline sources carry no locator"))
            }
            SourceKind::LocalFile if self.locator.is_empty() => Err(invalid("empty path")),
            SourceKind::HttpRaw => match url::Url::parse(&self.locator) {
                Ok(u) if matches!(u.scheme(), "http" | "https") => Ok(()),
                Ok(_) => Err(invalid("only http and https URLs are supported")),
                Err(e) => Err(invalid(&format!("not an absolute URL: {e}"))),
            },
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefreshStatus {
    Unchanged,
    Updated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefreshOutcome {
    pub status: RefreshStatus,
    pub new_version: u64,
    pub new_hash: ContentHash,
    /// The module was switched off because its new content broke the activation budget.
    #[serde(default)]
    pub deactivated: bool,
}

pub const MEDIA_MARKDOWN: &str = "text/markdown";
pub const MEDIA_PLAIN: &str = "text/plain";
pub const MEDIA_HTML: &str = "text/html";

/// Passes Markdown and plain text through and converts HTML.
pub fn normalize_to_markdown(raw: &str, media_type: &str) -> Result<String, SourceError> {
    match media_type {
        MEDIA_MARKDOWN | MEDIA_PLAIN => Ok(raw.to_owned()),
        MEDIA_HTML => Ok(html_to_markdown(raw)),
        other => Err(SourceError::UnsupportedMedia(other.to_owned())),
    }
}

/// Anything that can turn a locator into Markdown text. Authenticated
/// connectors (document editors, code hosts) plug in here.
#[async_trait]
pub trait DocumentConnector: Send + Sync {
    async fn fetch_document(&self, source: &SourceLocator) -> Result<String, SourceError>;
}

/// Connector for local files and unauthenticated HTTP(S) URLs.
#[derive(Debug, Clone, Default)]
pub struct SourceFetcher {
    http: reqwest::Client,
}

impl SourceFetcher {
    pub fn new(http: reqwest::Client) -> Self {
        Self { http }
    }

    async fn fetch_local(&self, source: &SourceLocator) -> Result<String, SourceError> {
        let path = Path::new(&source.locator);
        let bytes = tokio::fs::read(path)
            .await
            .map_err(|e| fetch_error(source, e))?;
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        let media = match ext.as_str() {
            "md" | "markdown" => MEDIA_MARKDOWN,
            "html" | "htm" => MEDIA_HTML,
            "" | "txt" | "text" => MEDIA_PLAIN,
            other => {
                return Err(SourceError::UnsupportedMedia(format!(
                    "file extension .{other}"
                )))
            }
        };
        let text = decode_text(bytes, media)?;
        normalize_to_markdown(&text, media)
    }

    async fn fetch_http(&self, source: &SourceLocator) -> Result<String, SourceError> {
        let response = self
            .http
            .get(&source.locator)
            .send()
            .await
            .map_err(|e| fetch_error(source, e))?;
        let status = response.status();
        if !status.is_success() {
            return Err(fetch_error(source, format!("HTTP {status}")));
        }
        let content_type = response
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .map(|v| {
                v.split(';')
                    .next()
                    .unwrap_or("")
                    .trim()
                    .to_ascii_lowercase()
            });
        let bytes = response.bytes().await.map_err(|e| fetch_error(source, e))?;
        let media = match content_type.as_deref() {
            Some("text/html" | "application/xhtml+xml") => MEDIA_HTML,
            Some("text/markdown" | "text/x-markdown") => MEDIA_MARKDOWN,
            Some("text/plain") | None => MEDIA_PLAIN,
            Some(other) => return Err(SourceError::UnsupportedMedia(other.to_owned())),
        };
        let text = decode_text(bytes.to_vec(), media)?;
        normalize_to_markdown(&text, media)
    }
}

#[async_trait]
impl DocumentConnector for SourceFetcher {
    async fn fetch_document(&self, source: &SourceLocator) -> Result<String, SourceError> {
        source.validate()?;
        match source.kind {
            SourceKind::LocalFile => self.fetch_local(source).await,
            SourceKind::HttpRaw => self.fetch_http(source).await,
            SourceKind::Inline => Err(fetch_error(source, "inline sources have nothing to fetch")),
        }
    }
}

fn fetch_error(source: &SourceLocator, reason: impl fmt::Display) -> SourceError {
    SourceError::Fetch {
        kind: source.kind,
        locator: source.locator.clone(),
        reason: reason.to_string(),
    }
}

fn decode_text(bytes: Vec<u8>, media: &str) -> Result<String, SourceError> {
    if bytes.contains(&0) {
        return Err(SourceError::UnsupportedMedia(format!(
            "binary payload declared as {media}"
        )));
    }
    String::from_utf8(bytes).map_err(|_| {
        SourceError::UnsupportedMedia(format!("non-UTF-8 payload declared as {media}"))
    })
}

/// Re-fetches a module's source and stores the result if it changed.
///
/// Callers holding derived state keyed by content (embeddings, chunks) must
/// drop it when the outcome is [`RefreshStatus::Updated`].
pub async fn refresh_module(
    registry: &Registry,
    connector: &dyn DocumentConnector,
    id: &ModuleId,
) -> Result<RefreshOutcome, SourceError> {
    let module = registry.get(id)?;
    if module.source.kind == SourceKind::Inline {
        return Err(SourceError::NotRefreshable(id.clone()));
    }
    let content = connector.fetch_document(&module.source).await?;
    let update = registry.update_content(id, content)?;
    Ok(RefreshOutcome {
        status: if update.changed {
            RefreshStatus::Updated
        } else {
            RefreshStatus::Unchanged
        },
        new_version: update.version,
        new_hash: update.content_hash,
        deactivated: update.deactivated,
    })
}
