//! On-disk layout:
//!
//! ```text
//! <root>/
//!   modules/<id>.json        manifest (pretty JSON, fixed field order)
//!   modules/<id>.md          raw content bytes
//!   personal/clippings.json  the Personal Module
//! ```
//!
//! Files are written to a temporary sibling and renamed into place.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{
    KnowledgeModule, ModuleId, PersonalModule, RegistryError, Result, ShareToken, Visibility,
};
use crate::hash::ContentHash;
use crate::sources::SourceLocator;

#[derive(Serialize, Deserialize)]
struct Manifest {
    id: ModuleId,
    owner: String,
    name: String,
    description: String,
    example_queries: Vec<String>,
    source: SourceLocator,
    visibility: Visibility,
    content_hash: ContentHash,
    byte_size: usize,
    version: u64,
    active: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    imported_from: Option<ModuleId>,
    #[serde(default)]
    share_tokens: BTreeSet<ShareToken>,
    updated_at: DateTime<Utc>,
}

impl Manifest {
    fn of(m: &KnowledgeModule) -> Self {
        Self {
            id: m.id.clone(),
            owner: m.owner.clone(),
            name: m.name.clone(),
            description: m.description.clone(),
            example_queries: m.example_queries.clone(),
            source: m.source.clone(),
            visibility: m.visibility,
            content_hash: m.content_hash.clone(),
            byte_size: m.byte_size,
            version: m.version,
            active: m.active,
            imported_from: m.imported_from.clone(),
            share_tokens: m.share_tokens.clone(),
            updated_at: m.updated_at,
        }
    }

    fn into_module(self, content: String) -> KnowledgeModule {
        KnowledgeModule {
            id: self.id,
            owner: self.owner,
            name: self.name,
            description: self.description,
            example_queries: self.example_queries,
            source: self.source,
            visibility: self.visibility,
            content,
            content_hash: self.content_hash,
            byte_size: self.byte_size,
            version: self.version,
            active: self.active,
            imported_from: self.imported_from,
            share_tokens: self.share_tokens,
            updated_at: self.updated_at,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root.join("modules"))?;
        fs::create_dir_all(root.join("personal"))?;
        Ok(Self {
            root: root.to_owned(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn manifest_path(&self, id: &ModuleId) -> PathBuf {
        self.root.join("modules").join(format!("{id}.json"))
    }

    fn content_path(&self, id: &ModuleId) -> PathBuf {
        self.root.join("modules").join(format!("{id}.md"))
    }

    fn personal_path(&self) -> PathBuf {
        self.root.join("personal").join("clippings.json")
    }

    pub fn save_module(&self, module: &KnowledgeModule, content_changed: bool) -> Result<()> {
        if content_changed {
            write_atomic(&self.content_path(&module.id), module.content.as_bytes())?;
        }
        let mut json = serde_json::to_vec_pretty(&Manifest::of(module))?;
        json.push(b'\n');
        write_atomic(&self.manifest_path(&module.id), &json)?;
        Ok(())
    }

    pub fn save_personal(&self, personal: &PersonalModule) -> Result<()> {
        let mut json = serde_json::to_vec_pretty(personal)?;
        json.push(b'\n');
        write_atomic(&self.personal_path(), &json)?;
        Ok(())
    }

    pub fn load(&self) -> Result<(Vec<KnowledgeModule>, PersonalModule)> {
        let mut modules = Vec::new();
        let mut entries: Vec<PathBuf> = fs::read_dir(self.root.join("modules"))?
            .map(|e| e.map(|e| e.path()))
            .collect::<io::Result<_>>()?;
        entries.sort();
        for path in entries
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
        {
            let manifest: Manifest = serde_json::from_slice(&fs::read(&path)?)?;
            let content = fs::read_to_string(self.content_path(&manifest.id))?;
            if ContentHash::of(&content) != manifest.content_hash
                || content.len() != manifest.byte_size
            {
                return Err(RegistryError::CorruptContent(manifest.id));
            }
            modules.push(manifest.into_module(content));
        }
        let personal = match fs::read(self.personal_path()) {
            Ok(bytes) => serde_json::from_slice(&bytes)?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => PersonalModule::default(),
            Err(e) => return Err(e.into()),
        };
        Ok((modules, personal))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}
