//! Query-log analysis: restate each query as a task, embed the tasks, group
//! them with k-means, and have a model name and describe each group.

use std::collections::BTreeMap;

use futures::{StreamExt, TryStreamExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompts::{CLUSTER_SUMMARY_PROMPT, TASK_EXTRACTION_PROMPT, TASK_FRAME_PREFIX};
use crate::providers::{EmbeddingProvider, LlmProvider, ProviderError};

pub const QUERIES_PER_CLUSTER: usize = 40;
pub const MAX_ITERATIONS: usize = 300;
pub const MAX_NAME_WORDS: usize = 10;
const EXTRACTION_WORKERS: usize = 8;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("need at least one item to cluster")]
    Empty,
    #[error("k = {k} is out of range for {n} vectors")]
    BadK { k: usize, n: usize },
    #[error("vector {index} has dimension {got}, expected {expected}")]
    Dimension {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("cluster summary is not valid JSON: {reason}; raw response: {raw:?}")]
    Summary { reason: String, raw: String },
    #[error("invalid merge map: {0}")]
    MergeMap(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Number of clusters for `n` items: `n / 40` rounded half up, at least one.
pub fn choose_k(n: usize) -> Result<usize, ClusterError> {
    if n == 0 {
        return Err(ClusterError::Empty);
    }
    Ok(((n + QUERIES_PER_CLUSTER / 2) / QUERIES_PER_CLUSTER).max(1))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub query: String,
    /// The task, or the model's raw answer when it did not use the frame.
    pub extracted_task: String,
    pub parsed: bool,
}

pub fn task_extraction_prompt(query: &str) -> String {
    format!("{TASK_EXTRACTION_PROMPT}\n\nMessage: {query}")
}

/// Pulls TASK out of "The task the model is being asked to perform is TASK."
pub fn parse_task(answer: &str) -> Option<String> {
    let flat = answer.split_whitespace().collect::<Vec<_>>().join(" ");
    let start = flat.find(TASK_FRAME_PREFIX)? + TASK_FRAME_PREFIX.len();
    let rest = flat[start..].trim().trim_end_matches('.').trim_end();
    let rest = rest
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .unwrap_or(rest);
    let task = rest.trim().trim_end_matches('.').trim_end();
    (!task.is_empty()).then(|| task.to_owned())
}

pub async fn extract_task(query: &str, llm: &dyn LlmProvider) -> Result<TaskRecord, ProviderError> {
    let answer = llm.complete(&task_extraction_prompt(query)).await?;
    Ok(match parse_task(&answer) {
        Some(task) => TaskRecord {
            query: query.to_owned(),
            extracted_task: task,
            parsed: true,
        },
        None => TaskRecord {
            query: query.to_owned(),
            extracted_task: answer.trim().to_owned(),
            parsed: false,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squared distances after each Lloyd iteration.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

pub fn inertia(vectors: &[Vec<f64>], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    vectors
        .iter()
        .zip(assignments)
        .map(|(v, &a)| sq_dist(v, &centroids[a]))
        .sum()
}

fn kmeans_pp(vectors: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![vectors[rng.random_range(0..vectors.len())].clone()];
    let mut d2: Vec<f64> = vectors.iter().map(|v| sq_dist(v, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = vectors.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..vectors.len())
        };
        centroids.push(vectors[pick].clone());
        for (i, v) in vectors.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(v, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding. Stops when assignments stop
/// changing or after [`MAX_ITERATIONS`]. A point stays in its cluster on a
/// distance tie. A cluster left empty is re-seeded with the point farthest
/// from its centroid among clusters that have points to spare.
pub fn kmeans(vectors: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult, ClusterError> {
    let n = vectors.len();
    if n == 0 {
        return Err(ClusterError::Empty);
    }
    if k == 0 || k > n {
        return Err(ClusterError::BadK { k, n });
    }
    let dim = vectors[0].len();
    if let Some((index, v)) = vectors.iter().enumerate().find(|(_, v)| v.len() != dim) {
        return Err(ClusterError::Dimension {
            index,
            expected: dim,
            got: v.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(vectors, k, &mut rng);
    let mut assignments: Vec<usize> = vectors.iter().map(|v| nearest(v, &centroids).0).collect();
    let mut history = Vec::new();
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (v, &a) in vectors.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(v) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[assignments[i]] > 1)
                    .max_by(|&a, &b| {
                        sq_dist(&vectors[a], &centroids[assignments[a]])
                            .total_cmp(&sq_dist(&vectors[b], &centroids[assignments[b]]))
                            .then(b.cmp(&a))
                    })
                    .expect("an empty cluster implies a cluster with several points");
                counts[assignments[far]] -= 1;
                assignments[far] = j;
                counts[j] = 1;
                centroids[j] = vectors[far].clone();
            }
        }
        history.push(inertia(vectors, &assignments, &centroids));

        let next: Vec<usize> = vectors
            .iter()
            .zip(&assignments)
            .map(|(v, &current)| {
                let (j, d) = nearest(v, &centroids);
                if sq_dist(v, &centroids[current]) <= d {
                    current
                } else {
                    j
                }
            })
            .collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    history.push(inertia(vectors, &assignments, &centroids));

    Ok(KMeansResult {
        assignments,
        centroids,
        inertia_history: history,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub name: String,
    pub summary: String,
    /// The name is longer than [`MAX_NAME_WORDS`] words.
    #[serde(default)]
    pub name_too_long: bool,
}

pub fn cluster_summary_prompt(tasks: &[String]) -> String {
    let mut prompt = format!("{CLUSTER_SUMMARY_PROMPT}\n\nStatements:");
    for t in tasks {
        prompt.push_str("\n- ");
        prompt.push_str(t);
    }
    prompt
}

/// Reads the first JSON object in `raw` with string fields `summary` and `name`.
pub fn parse_summary(raw: &str) -> Result<ClusterSummary, ClusterError> {
    let bad = |reason: &str| ClusterError::Summary {
        reason: reason.to_owned(),
        raw: raw.to_owned(),
    };
    let start = raw.find('{').ok_or_else(|| bad("no JSON object"))?;
    let end = raw.rfind('}').ok_or_else(|| bad("no JSON object"))?;
    if end < start {
        return Err(bad("no JSON object"));
    }
    let value: serde_json::Value =
        serde_json::from_str(&raw[start..=end]).map_err(|e| bad(&e.to_string()))?;
    let field = |key: &str| {
        value[key]
            .as_str()
            .map(|s| s.trim().to_owned())
            .ok_or_else(|| bad(&format!("missing string field {key:?}")))
    };
    let name = field("name")?;
    let summary = field("summary")?;
    Ok(ClusterSummary {
        name_too_long: name.split_whitespace().count() > MAX_NAME_WORDS,
        name,
        summary,
    })
}

pub async fn summarize_cluster(
    tasks: &[String],
    llm: &dyn LlmProvider,
) -> Result<ClusterSummary, ClusterError> {
    if tasks.is_empty() {
        return Err(ClusterError::Empty);
    }
    let raw = llm.complete(&cluster_summary_prompt(tasks)).await?;
    parse_summary(&raw)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub name: String,
    pub summary: String,
    #[serde(default)]
    pub name_too_long: bool,
    pub query_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub k: usize,
    pub seed: u64,
    pub embedding_provider: String,
    pub unparsed_tasks: usize,
    pub tasks: Vec<TaskRecord>,
    pub clusters: Vec<Cluster>,
}

/// Hand-made de-duplication: target group name to the k-means cluster indices
/// folded into it. Clusters not mentioned are kept as they are.
pub type MergeMap = BTreeMap<String, Vec<usize>>;

/// Extracts tasks, clusters them, summarizes each cluster, then applies `merge`.
/// Merged groups are summarized again from their pooled tasks.
pub async fn cluster_queries(
    queries: &[String],
    llm: &dyn LlmProvider,
    embedder: &dyn EmbeddingProvider,
    seed: u64,
    merge: Option<&MergeMap>,
) -> Result<ClusterReport, ClusterError> {
    let k = choose_k(queries.len())?;
    let tasks: Vec<TaskRecord> = futures::stream::iter(queries)
        .map(|q| extract_task(q, llm))
        .buffered(EXTRACTION_WORKERS)
        .try_collect()
        .await?;
    let texts: Vec<String> = tasks.iter().map(|t| t.extracted_task.clone()).collect();
    let vectors = embedder.embed(&texts).await?;
    let result = kmeans(&vectors, k, seed)?;

    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &a) in result.assignments.iter().enumerate() {
        groups[a].push(i);
    }

    let mut named: Vec<(Option<String>, Vec<usize>)> = Vec::new();
    let mut merged = vec![false; k];
    if let Some(map) = merge {
        for (name, members) in map {
            let mut indices = Vec::new();
            for &c in members {
                if c >= k {
                    return Err(ClusterError::MergeMap(format!(
                        "cluster {c} does not exist (k = {k})"
                    )));
                }
                if std::mem::replace(&mut merged[c], true) {
                    return Err(ClusterError::MergeMap(format!(
                        "cluster {c} is merged twice"
                    )));
                }
                indices.extend(&groups[c]);
            }
            indices.sort_unstable();
            named.push((Some(name.clone()), indices));
        }
    }
    for (c, g) in groups.into_iter().enumerate() {
        if !merged[c] {
            named.push((None, g));
        }
    }

    let mut clusters = Vec::with_capacity(named.len());
    for (name, query_indices) in named {
        let member_tasks: Vec<String> = query_indices.iter().map(|&i| texts[i].clone()).collect();
        let s = summarize_cluster(&member_tasks, llm).await?;
        clusters.push(Cluster {
            name_too_long: name.is_none() && s.name_too_long,
            name: name.unwrap_or(s.name),
            summary: s.summary,
            query_indices,
        });
    }

    Ok(ClusterReport {
        k,
        seed,
        embedding_provider: embedder.identity(),
        unparsed_tasks: tasks.iter().filter(|t| !t.parsed).count(),
        tasks,
        clusters,
    })
}
