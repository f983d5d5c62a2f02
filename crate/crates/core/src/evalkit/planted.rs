//! A synthetic corpus with known ground truth, and a reranker that knows it.
//!
//! Each module is written in its own made-up vocabulary mixed with shared
//! filler words. Each query borrows a few words from one to three relevant
//! modules, some filler, and sometimes a word from an unrelated module, so
//! embedding similarity ranks the right modules high but not perfectly.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use async_trait::async_trait;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LabeledQuery;
use crate::providers::{ProviderError, RerankProvider};
use crate::registry::{KnowledgeModule, NewModule, Registry, Visibility};

pub const PLANTED_MODULES: usize = 16;
pub const PLANTED_QUERIES: usize = 50;
pub const PLANTED_SEED: u64 = 7;

const VOCAB_PER_MODULE: usize = 10;
const FILLER_WORDS: usize = 20;
const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "ze", "pa", "qu", "fi", "do", "gu", "he", "ja",
    "be", "cy", "wo", "xu",
];

pub struct PlantedCorpus {
    pub registry: Registry,
    pub modules: Vec<Arc<KnowledgeModule>>,
    pub queries: Vec<LabeledQuery>,
    pub oracle: OracleReranker,
}

/// Scores 1.0 for documents from a module relevant to the query, else 0.0.
/// Queries it has no ground truth for score 0.0 everywhere.
#[derive(Debug, Clone, Default)]
pub struct OracleReranker {
    /// Query text to the names of its relevant modules.
    truth: HashMap<String, BTreeSet<String>>,
}

impl OracleReranker {
    pub fn new(truth: HashMap<String, BTreeSet<String>>) -> Self {
        Self { truth }
    }

    fn score(&self, query: &str, document: &str) -> f64 {
        let Some(names) = self.truth.get(query) else {
            return 0.0;
        };
        let breadcrumb = document.lines().next().unwrap_or("");
        let from_relevant = names.iter().any(|n| {
            breadcrumb == n
                || breadcrumb
                    .strip_prefix(n.as_str())
                    .is_some_and(|r| r.starts_with(" > "))
        });
        if from_relevant {
            1.0
        } else {
            0.0
        }
    }
}

#[async_trait]
impl RerankProvider for OracleReranker {
    fn identity(&self) -> String {
        "oracle".to_owned()
    }

    async fn rerank(&self, query: &str, documents: &[String]) -> Result<Vec<f64>, ProviderError> {
        Ok(documents.iter().map(|d| self.score(query, d)).collect())
    }
}

fn word(rng: &mut ChaCha8Rng, taken: &mut BTreeSet<String>) -> String {
    loop {
        let n = rng.random_range(3..=4);
        let w: String = (0..n)
            .map(|_| *SYLLABLES.choose(rng).expect("non-empty"))
            .collect();
        if taken.insert(w.clone()) {
            return w;
        }
    }
}

fn sentence(rng: &mut ChaCha8Rng, own: &[String], filler: &[String], len: usize) -> String {
    let words: Vec<&str> = (0..len)
        .map(|_| {
            let pool = if rng.random_bool(0.8) { own } else { filler };
            pool.choose(rng).expect("non-empty").as_str()
        })
        .collect();
    words.join(" ")
}

pub fn module_name(i: usize) -> String {
    format!("Planted {i:02}")
}

/// Builds the 16-module, 50-query corpus for `seed`.
pub fn planted_corpus(seed: u64) -> PlantedCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = BTreeSet::new();
    let filler: Vec<String> = (0..FILLER_WORDS)
        .map(|_| word(&mut rng, &mut taken))
        .collect();
    let vocab: Vec<Vec<String>> = (0..PLANTED_MODULES)
        .map(|_| {
            (0..VOCAB_PER_MODULE)
                .map(|_| word(&mut rng, &mut taken))
                .collect()
        })
        .collect();

    let registry = Registry::in_memory();
    let mut modules = Vec::with_capacity(PLANTED_MODULES);
    for (i, own) in vocab.iter().enumerate() {
        let paragraphs: Vec<String> = (0..2)
            .map(|_| sentence(&mut rng, own, &filler, 20))
            .collect();
        let content = format!("{}\n", paragraphs.join("\n\n"));
        let created = registry
            .create_module(NewModule::inline(
                module_name(i),
                Visibility::Private,
                content,
            ))
            .expect("fresh registry accepts planted modules");
        modules.push(registry.get(&created.id).expect("just created"));
    }

    let mut queries = Vec::with_capacity(PLANTED_QUERIES);
    let mut truth = HashMap::new();
    let all: Vec<usize> = (0..PLANTED_MODULES).collect();
    while queries.len() < PLANTED_QUERIES {
        let n_relevant = rng.random_range(1..=3);
        let relevant: Vec<usize> = all.choose_multiple(&mut rng, n_relevant).copied().collect();
        let mut words: Vec<&str> = Vec::new();
        for &m in &relevant {
            let n = rng.random_range(2..=4);
            words.extend(vocab[m].choose_multiple(&mut rng, n).map(String::as_str));
        }
        let n_filler = rng.random_range(1..=3);
        words.extend(
            filler
                .choose_multiple(&mut rng, n_filler)
                .map(String::as_str),
        );
        if rng.random_bool(0.5) {
            let other = *all.choose(&mut rng).expect("non-empty");
            if !relevant.contains(&other) {
                words.push(vocab[other].choose(&mut rng).expect("non-empty"));
            }
        }
        words.shuffle(&mut rng);
        let query = words.join(" ");
        if truth.contains_key(&query) {
            continue;
        }
        truth.insert(
            query.clone(),
            relevant.iter().map(|&m| module_name(m)).collect(),
        );
        queries.push(LabeledQuery {
            query,
            relevant_module_ids: relevant
                .iter()
                .map(|&m| modules[m].id.to_string())
                .collect(),
        });
    }

    PlantedCorpus {
        registry,
        modules,
        queries,
        oracle: OracleReranker::new(truth),
    }
}
