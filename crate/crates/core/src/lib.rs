//! Knowledge modules for LLM chat: a registry of user-curated text modules, a
//! retrieve-then-rerank router that picks the relevant ones for each query, and
//! an OpenAI-compatible proxy that injects them into prompts.

pub mod chunker;
pub mod clustering;
pub mod config;
pub mod evalkit;
pub mod hash;
pub mod prompts;
pub mod providers;
pub mod proxy;
pub mod registry;
pub mod router;
pub mod service;
pub mod sources;
