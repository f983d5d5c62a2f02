#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use knoll_core::hash::ContentHash;
use knoll_core::providers::{
    EmbeddingProvider, HashedBowEmbedder, RerankProvider, TokenOverlapReranker,
};
use knoll_core::proxy::{ProxyState, Upstream};
use knoll_core::registry::{ModuleId, Registry};
use knoll_core::router::{Document, RankedDoc, Router, RouterConfig};
use knoll_core::service::Knoll;
use knoll_core::sources::SourceFetcher;
use rand::seq::IndexedRandom;
use rand::Rng;

pub fn golden(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

pub fn offline_knoll() -> Arc<Knoll> {
    knoll_with(
        Arc::new(Registry::in_memory()),
        Arc::new(HashedBowEmbedder::default()),
        Arc::new(TokenOverlapReranker),
    )
}

pub fn knoll_with(
    registry: Arc<Registry>,
    embedder: Arc<dyn EmbeddingProvider>,
    reranker: Arc<dyn RerankProvider>,
) -> Arc<Knoll> {
    let router = Router::new(RouterConfig::default(), embedder, reranker).unwrap();
    Arc::new(Knoll::new(
        registry,
        Arc::new(router),
        Arc::new(SourceFetcher::default()),
    ))
}

/// Serves `app` on an ephemeral localhost port and returns `http://addr`.
pub async fn spawn_app(app: axum::Router) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    format!("http://{addr}")
}

pub async fn spawn_proxy(knoll: Arc<Knoll>, upstream_base: &str) -> (String, ProxyState) {
    let state = ProxyState::new(knoll, Upstream::new(upstream_base));
    let base = spawn_app(knoll_core::proxy::app(state.clone())).await;
    (base, state)
}

// ---- selection oracle ----

pub fn ranked_docs(scores: &[f64]) -> Vec<RankedDoc> {
    scores
        .iter()
        .enumerate()
        .map(|(i, &score)| RankedDoc {
            doc: Arc::new(Document {
                module_id: ModuleId::from("m"),
                module_name: "M".into(),
                index: i,
                breadcrumb: "M".into(),
                body: format!("d{i}"),
                content_hash: ContentHash::of(format!("d{i}")),
                is_clipping: false,
            }),
            score,
        })
        .collect()
}

/// Enumerates every subset and keeps the one that holds only scores >= 0.3,
/// holds every score >= 0.7, is closed under "ranks above" among eligible
/// documents, and has size max(#>=0.7, min(5, #>=0.3)).
pub fn brute_force_select(docs: &[RankedDoc]) -> Vec<ContentHash> {
    let n = docs.len();
    let above = |i: usize, j: usize| {
        docs[i].score > docs[j].score
            || (docs[i].score == docs[j].score
                && docs[i].doc.content_hash < docs[j].doc.content_hash)
    };
    let eligible = (0..n).filter(|&i| docs[i].score >= 0.3).count();
    let high = (0..n).filter(|&i| docs[i].score >= 0.7).count();
    let want = high.max(eligible.min(5));
    let mut survivors = Vec::new();
    for mask in 0u32..(1 << n) {
        let has = |i: usize| mask & (1 << i) != 0;
        let members: Vec<usize> = (0..n).filter(|&i| has(i)).collect();
        let ok = members.len() == want
            && members.iter().all(|&i| docs[i].score >= 0.3)
            && (0..n).filter(|&i| docs[i].score >= 0.7).all(has)
            && members
                .iter()
                .all(|&i| (0..n).all(|j| !(docs[j].score >= 0.3 && above(j, i)) || has(j)));
        if ok {
            survivors.push(members);
        }
    }
    assert_eq!(survivors.len(), 1, "exactly one subset satisfies the rule");
    let mut chosen = survivors.pop().unwrap();
    chosen.sort_by(|&a, &b| {
        if above(a, b) {
            Ordering::Less
        } else {
            Ordering::Greater
        }
    });
    chosen
        .into_iter()
        .map(|i| docs[i].doc.content_hash.clone())
        .collect()
}

pub fn random_scores(rng: &mut impl Rng) -> Vec<f64> {
    let n = rng.random_range(0..=10);
    (0..n)
        .map(|_| match rng.random_range(0..4) {
            0 => 0.3,
            1 => 0.7,
            2 => f64::from(rng.random_range(0u8..=10)) / 10.0,
            _ => rng.random_range(0.0..=1.0),
        })
        .collect()
}

// ---- recall oracle ----

/// Recall by explicit loops over a fixed module universe.
pub fn brute_force_recall(
    dataset: &[(BTreeSet<usize>, BTreeSet<usize>)],
    universe: usize,
) -> Option<f64> {
    let mut num = 0usize;
    let mut den = 0usize;
    for (retrieved, relevant) in dataset {
        let mut both = 0;
        let mut rel = 0;
        for m in 0..universe {
            if relevant.contains(&m) {
                rel += 1;
                if retrieved.contains(&m) {
                    both += 1;
                }
            }
        }
        num += if both > 5 { 5 } else { both };
        den += if rel > 5 { 5 } else { rel };
    }
    (den > 0).then(|| num as f64 / den as f64)
}

// ---- markdown generation and outline oracle ----

const WORDS: &[&str] = &[
    "alpha",
    "beta",
    "gamma",
    "delta",
    "notes",
    "exam",
    "sleep",
    "rust",
    "ünïcödé",
    "日本語",
    "x",
    "longerwordhere",
    "#hashtag",
    "a#b",
];

fn words(rng: &mut impl Rng, n: usize) -> String {
    (0..n)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Random Markdown with headings of mixed levels, paragraphs of varied size,
/// fenced code holding heading-like lines, and irregular blank lines.
pub fn random_markdown(rng: &mut impl Rng) -> String {
    let mut out = String::new();
    let blocks = rng.random_range(0..40);
    for _ in 0..blocks {
        match rng.random_range(0..10) {
            0..=2 => {
                let level = rng.random_range(1..=6);
                out.push_str(&"#".repeat(level));
                out.push(' ');
                let n = rng.random_range(1..4);
                out.push_str(&words(rng, n));
                out.push('\n');
            }
            3 => {
                out.push_str("```\n# not a heading\n");
                let n = rng.random_range(0..20);
                out.push_str(&words(rng, n));
                out.push_str("\n```\n");
            }
            4 => out.push('\n'),
            5 => {
                let n = rng.random_range(200..1500);
                out.push_str(&words(rng, n));
                out.push_str("\n\n");
            }
            _ => {
                let n = rng.random_range(1..80);
                out.push_str(&words(rng, n));
                out.push('\n');
                if rng.random_bool(0.6) {
                    out.push('\n');
                }
            }
        }
    }
    if rng.random_bool(0.2) {
        out.pop();
    }
    out
}

/// `(start, level, title)` for ATX headings outside ``` fences.
pub fn outline_headings(text: &str) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    let mut in_fence = false;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let body = line.trim_end_matches(['\n', '\r']);
        if body.starts_with("```") {
            in_fence = !in_fence;
            continue;
        }
        if in_fence {
            continue;
        }
        let hashes = body.len() - body.trim_start_matches('#').len();
        if (1..=6).contains(&hashes) && body[hashes..].starts_with(' ') {
            out.push((start, hashes, body[hashes..].trim().to_owned()));
        }
    }
    out
}

/// Titles of the headings enclosing byte `pos`, outermost first.
pub fn outline_stack(headings: &[(usize, usize, String)], pos: usize) -> Vec<String> {
    let mut stack: Vec<(usize, String)> = Vec::new();
    for (start, level, title) in headings {
        if *start > pos {
            break;
        }
        while stack.last().is_some_and(|(l, _)| l >= level) {
            stack.pop();
        }
        stack.push((*level, title.clone()));
    }
    stack.into_iter().map(|(_, t)| t).collect()
}

pub fn is_subsequence(needle: &[String], hay: &[String]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}
