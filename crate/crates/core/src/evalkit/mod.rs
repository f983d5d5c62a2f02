//! Router evaluation: capped recall, context relevance, ablation baselines,
//! and side-by-side preference export for human raters.

mod ablation;
mod pairwise;
pub mod planted;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::ProviderError;
use crate::router::RouterError;

pub use ablation::{
    classifier_prompt, classify_relevance, run_ablation, AblationRun, ClassifierVerdict, Variant,
};
pub use pairwise::{
    export_pairwise, fleiss_kappa, score_choices, to_jsonl, wald_half_width, BarePipeline,
    KnollPipeline, PairwiseRecord, Pipeline, WinRate,
};

/// Both sides of the recall ratio are capped at this many modules per query.
pub const RECALL_CAP: usize = 5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("recall is undefined: no query has a non-empty relevant set")]
    UndefinedRecall,
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("the {0} variant needs a language model provider")]
    MissingLlm(&'static str),
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQuery {
    pub query: String,
    pub relevant_module_ids: BTreeSet<String>,
    /// Best first.
    pub retrieved_module_ids: Vec<String>,
}

/// A dataset line before any pipeline has run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledQuery {
    pub query: String,
    pub relevant_module_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub recall: f64,
    /// `(min(5, |retrieved ∩ relevant|), min(5, |relevant|))` for every query.
    pub per_query: Vec<(usize, usize)>,
    /// Queries that contribute to the ratio (non-empty relevant set).
    pub n_queries: usize,
}

/// Σ min(5, |R ∩ G|) / Σ min(5, |G|) over queries with a non-empty gold set G.
pub fn compute_recall(dataset: &[EvalQuery]) -> Result<RecallReport, EvalError> {
    let per_query: Vec<(usize, usize)> = dataset
        .iter()
        .map(|q| {
            let retrieved: BTreeSet<&String> = q.retrieved_module_ids.iter().collect();
            let hits = q
                .relevant_module_ids
                .iter()
                .filter(|id| retrieved.contains(id))
                .count();
            (
                hits.min(RECALL_CAP),
                q.relevant_module_ids.len().min(RECALL_CAP),
            )
        })
        .collect();
    let (hits, relevant) = per_query
        .iter()
        .fold((0usize, 0usize), |(h, r), &(qh, qr)| (h + qh, r + qr));
    if relevant == 0 {
        return Err(EvalError::UndefinedRecall);
    }
    Ok(RecallReport {
        recall: hits as f64 / relevant as f64,
        n_queries: per_query.iter().filter(|(_, r)| *r > 0).count(),
        per_query,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Pool every returned document across queries.
    #[default]
    Micro,
    /// Average the per-query fractions over queries that returned something.
    Macro,
}

/// Fraction of queries whose first returned module is relevant. Every query
/// counts in the denominator, including ones that returned nothing.
pub fn relevance_at_1(dataset: &[EvalQuery]) -> f64 {
    if dataset.is_empty() {
        return 0.0;
    }
    let hits = dataset
        .iter()
        .filter(|q| {
            q.retrieved_module_ids
                .first()
                .is_some_and(|m| q.relevant_module_ids.contains(m))
        })
        .count();
    hits as f64 / dataset.len() as f64
}

/// Share of relevant modules among the first `k` returned per query.
pub fn relevance_at_k(dataset: &[EvalQuery], k: usize, averaging: Averaging) -> f64 {
    let tallies: Vec<(usize, usize)> = dataset
        .iter()
        .map(|q| {
            let returned = &q.retrieved_module_ids[..q.retrieved_module_ids.len().min(k)];
            let relevant = returned
                .iter()
                .filter(|m| q.relevant_module_ids.contains(*m))
                .count();
            (relevant, returned.len())
        })
        .collect();
    match averaging {
        Averaging::Micro => {
            let (num, den) = tallies
                .iter()
                .fold((0, 0), |(n, d), &(a, b)| (n + a, d + b));
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        }
        Averaging::Macro => {
            let fractions: Vec<f64> = tallies
                .iter()
                .filter(|(_, d)| *d > 0)
                .map(|&(n, d)| n as f64 / d as f64)
                .collect();
            if fractions.is_empty() {
                0.0
            } else {
                fractions.iter().sum::<f64>() / fractions.len() as f64
            }
        }
    }
}

/// `k == 1` is [`relevance_at_1`]; larger `k` is the micro-averaged [`relevance_at_k`].
pub fn context_relevance_at_k(dataset: &[EvalQuery], k: usize) -> f64 {
    if k == 1 {
        relevance_at_1(dataset)
    } else {
        relevance_at_k(dataset, k, Averaging::Micro)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(retrieved: &[&str], relevant: &[&str]) -> EvalQuery {
        EvalQuery {
            query: "q".into(),
            relevant_module_ids: relevant.iter().map(|s| s.to_string()).collect(),
            retrieved_module_ids: retrieved.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn recall_examples() {
        assert_eq!(compute_recall(&[q(&["A"], &["A"])]).unwrap().recall, 1.0);
        assert_eq!(
            compute_recall(&[q(&["A", "B"], &["A", "C"])])
                .unwrap()
                .recall,
            0.5
        );
        let seven = ["a", "b", "c", "d", "e", "f", "g"];
        let r = compute_recall(&[q(&seven[..5], &seven)]).unwrap();
        assert_eq!(r.recall, 1.0);
        assert_eq!(r.per_query, vec![(5, 5)]);
    }

    #[test]
    fn empty_gold_sets() {
        assert!(matches!(
            compute_recall(&[q(&["A"], &[])]),
            Err(EvalError::UndefinedRecall)
        ));
        assert!(matches!(
            compute_recall(&[]),
            Err(EvalError::UndefinedRecall)
        ));
        let r = compute_recall(&[q(&["A"], &[]), q(&["A"], &["A", "B"])]).unwrap();
        assert_eq!(r.recall, 0.5);
        assert_eq!(r.n_queries, 1);
    }

    #[test]
    fn duplicate_retrievals_count_once() {
        assert_eq!(
            compute_recall(&[q(&["A", "A"], &["A", "B"])])
                .unwrap()
                .recall,
            0.5
        );
    }

    #[test]
    fn relevance_examples() {
        assert_eq!(relevance_at_1(&[q(&["A"], &["A"]), q(&["B"], &["B"])]), 1.0);
        assert_eq!(relevance_at_1(&[q(&["A"], &["A"]), q(&["B"], &["C"])]), 0.5);
        assert_eq!(relevance_at_1(&[q(&[], &["A"]), q(&["A"], &["A"])]), 0.5);
        let half = [q(&["A", "X"], &["A"])];
        assert_eq!(context_relevance_at_k(&half, 5), 0.5);
        let mixed = [
            q(&["A", "X"], &["A"]),
            q(&["B", "C", "D", "E"], &["B", "C", "D", "E"]),
        ];
        assert_eq!(relevance_at_k(&mixed, 5, Averaging::Micro), 5.0 / 6.0);
        assert_eq!(relevance_at_k(&mixed, 5, Averaging::Macro), 0.75);
        assert_eq!(relevance_at_k(&[q(&[], &["A"])], 5, Averaging::Micro), 0.0);
    }

    #[test]
    fn relevance_at_5_truncates() {
        let long = [q(&["A", "B", "C", "D", "E", "F"], &["F"])];
        assert_eq!(relevance_at_k(&long, 5, Averaging::Micro), 0.0);
    }
}
