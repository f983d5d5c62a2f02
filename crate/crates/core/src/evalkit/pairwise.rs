use std::collections::BTreeMap;
use std::sync::Arc;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::providers::LlmProvider;
use crate::proxy::build_injection_prompt;
use crate::router::QueryContext;
use crate::service::Knoll;

/// Something that answers a query, for side-by-side comparison.
#[async_trait]
pub trait Pipeline: Send + Sync {
    fn name(&self) -> String;
    async fn respond(&self, query: &str) -> Result<String, EvalError>;
}

/// Routes the query, injects the selected knowledge, and asks the model.
pub struct KnollPipeline {
    pub knoll: Arc<Knoll>,
    pub llm: Arc<dyn LlmProvider>,
}

#[async_trait]
impl Pipeline for KnollPipeline {
    fn name(&self) -> String {
        "knoll".to_owned()
    }

    async fn respond(&self, query: &str) -> Result<String, EvalError> {
        let prompt = match self.knoll.route(&QueryContext::new(query)).await {
            Ok(result) => build_injection_prompt(&result.injected, query),
            Err(e) => {
                tracing::warn!(error = %e, "routing failed; answering without knowledge");
                query.to_owned()
            }
        };
        Ok(self.llm.complete(&prompt).await?)
    }
}

/// Asks the model directly.
pub struct BarePipeline {
    pub llm: Arc<dyn LlmProvider>,
}

#[async_trait]
impl Pipeline for BarePipeline {
    fn name(&self) -> String {
        "baseline".to_owned()
    }

    async fn respond(&self, query: &str) -> Result<String, EvalError> {
        Ok(self.llm.complete(query).await?)
    }
}

/// One line of the annotation file.
///
/// Raters see `query`, `response_a` and `response_b`, and fill in `choice`
/// with `"a"`, `"b"` or `"tie"`. `mapping` names the pipeline behind each
/// side and should be hidden from them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseRecord {
    pub id: usize,
    pub query: String,
    pub response_a: String,
    pub response_b: String,
    pub mapping: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choice: Option<String>,
}

/// Answers every query with both pipelines. Which one is shown as `a` is a
/// fair coin per query, drawn from a ChaCha8 generator seeded with `seed`.
pub async fn export_pairwise(
    queries: &[String],
    first: &dyn Pipeline,
    second: &dyn Pipeline,
    seed: u64,
) -> Result<Vec<PairwiseRecord>, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(queries.len());
    for (id, query) in queries.iter().enumerate() {
        let swap = rng.random_bool(0.5);
        let (left, right) = if swap {
            (second, first)
        } else {
            (first, second)
        };
        let response_a = left.respond(query).await?;
        let response_b = right.respond(query).await?;
        records.push(PairwiseRecord {
            id,
            query: query.clone(),
            response_a,
            response_b,
            mapping: BTreeMap::from([
                ("a".to_owned(), left.name()),
                ("b".to_owned(), right.name()),
            ]),
            choice: None,
        });
    }
    Ok(records)
}

pub fn to_jsonl(records: &[PairwiseRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

pub const Z_95: f64 = 1.96;

/// Half-width of the 95% Wald interval for a proportion.
pub fn wald_half_width(p: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    Z_95 * (p * (1.0 - p) / n as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WinRate {
    pub pipeline: String,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// Wins over decided judgments; ties are left out.
    pub rate: f64,
    pub half_width: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Win rate of `pipeline` over rated records. Records without a choice are skipped.
pub fn score_choices(records: &[PairwiseRecord], pipeline: &str) -> Result<WinRate, EvalError> {
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    for r in records {
        let Some(choice) = r.choice.as_deref() else {
            continue;
        };
        match choice.trim().to_ascii_lowercase().as_str() {
            "tie" => ties += 1,
            side @ ("a" | "b") => {
                let chosen = r.mapping.get(side).ok_or_else(|| EvalError::Invalid {
                    what: "annotation record",
                    reason: format!("record {} has no mapping for side {side}", r.id),
                })?;
                if chosen == pipeline {
                    wins += 1;
                } else {
                    losses += 1;
                }
            }
            other => {
                return Err(EvalError::Invalid {
                    what: "choice",
                    reason: format!("record {} has choice {other:?}; expected a, b or tie", r.id),
                })
            }
        }
    }
    let n = wins + losses;
    let rate = if n == 0 { 0.0 } else { wins as f64 / n as f64 };
    let half_width = wald_half_width(rate, n);
    Ok(WinRate {
        pipeline: pipeline.to_owned(),
        wins,
        losses,
        ties,
        rate,
        half_width,
        lower: (rate - half_width).max(0.0),
        upper: (rate + half_width).min(1.0),
    })
}

/// Fleiss's kappa for a subjects × categories table of rating counts. Every
/// subject must be rated by the same number of raters, at least two.
pub fn fleiss_kappa(counts: &[Vec<usize>]) -> Result<f64, EvalError> {
    let invalid = |reason: String| EvalError::Invalid {
        what: "rating table",
        reason,
    };
    let first = counts
        .first()
        .ok_or_else(|| invalid("no subjects".into()))?;
    let categories = first.len();
    let raters: usize = first.iter().sum();
    if raters < 2 {
        return Err(invalid("each subject needs at least two ratings".into()));
    }
    for (i, row) in counts.iter().enumerate() {
        if row.len() != categories {
            return Err(invalid(format!(
                "row {i} has {} categories, expected {categories}",
                row.len()
            )));
        }
        if row.iter().sum::<usize>() != raters {
            return Err(invalid(format!("row {i} does not have {raters} ratings")));
        }
    }
    let subjects = counts.len() as f64;
    let n = raters as f64;
    let p_bar = counts
        .iter()
        .map(|row| {
            let agree: f64 = row.iter().map(|&c| (c * c) as f64).sum::<f64>() - n;
            agree / (n * (n - 1.0))
        })
        .sum::<f64>()
        / subjects;
    let p_e: f64 = (0..categories)
        .map(|j| {
            let share = counts.iter().map(|row| row[j] as f64).sum::<f64>() / (subjects * n);
            share * share
        })
        .sum();
    if p_e == 1.0 {
        return Err(invalid(
            "every rating falls in one category; kappa is undefined".into(),
        ));
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rated(id: usize, a: &str, b: &str, choice: &str) -> PairwiseRecord {
        PairwiseRecord {
            id,
            query: "q".into(),
            response_a: "x".into(),
            response_b: "y".into(),
            mapping: BTreeMap::from([("a".into(), a.into()), ("b".into(), b.into())]),
            choice: Some(choice.into()),
        }
    }

    #[test]
    fn unanimous() {
        let records = [
            rated(0, "knoll", "baseline", "a"),
            rated(1, "knoll", "baseline", "a"),
        ];
        let w = score_choices(&records, "knoll").unwrap();
        assert_eq!(w.rate, 1.0);
        assert_eq!(w.half_width, 0.0);
    }

    #[test]
    fn mapping_resolves_sides() {
        let records = [
            rated(0, "baseline", "knoll", "b"),
            rated(1, "knoll", "baseline", "b"),
            rated(2, "knoll", "baseline", "tie"),
        ];
        let w = score_choices(&records, "knoll").unwrap();
        assert_eq!((w.wins, w.losses, w.ties), (1, 1, 1));
        assert_eq!(w.rate, 0.5);
        assert!(score_choices(&[rated(0, "k", "b", "left")], "k").is_err());
    }

    #[test]
    fn wald_by_hand() {
        let hw = wald_half_width(0.815, 100);
        assert!((hw - 0.076_104).abs() < 1e-5, "{hw}");
    }

    #[test]
    fn kappa_rejects_bad_tables() {
        assert!(fleiss_kappa(&[]).is_err());
        assert!(fleiss_kappa(&[vec![2, 0], vec![1, 0]]).is_err());
        assert!(fleiss_kappa(&[vec![2, 0], vec![2, 0]]).is_err());
    }

    #[test]
    fn kappa_perfect_agreement() {
        let k = fleiss_kappa(&[vec![3, 0], vec![0, 3]]).unwrap();
        assert!((k - 1.0).abs() < 1e-12);
    }
}
