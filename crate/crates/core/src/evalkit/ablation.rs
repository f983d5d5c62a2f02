use std::sync::Arc;

use futures::{StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};

use super::{compute_recall, EvalError, EvalQuery, LabeledQuery, RecallReport};
use crate::prompts::CLASSIFIER_PROMPT;
use crate::providers::{LlmProvider, ProviderError};
use crate::registry::{KnowledgeModule, PersonalModule};
use crate::router::{RegistryView, Router};

const QUERY_WORKERS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// The full router: cosine retrieval, rerank, selection.
    RetrieveRerank,
    /// Cosine retrieval only; modules above the filter threshold.
    RetrieveOnly,
    /// A language model judges every (query, module) pair.
    LlmClassifier,
    /// Retrieves nothing; the floor every router must beat.
    AlwaysEmpty,
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "retrieve_rerank" => Ok(Self::RetrieveRerank),
            "retrieve_only" => Ok(Self::RetrieveOnly),
            "llm_classifier" => Ok(Self::LlmClassifier),
            "always_empty" => Ok(Self::AlwaysEmpty),
            other => Err(format!(
                "unknown variant {other:?} (expected retrieve_rerank, retrieve_only, llm_classifier or always_empty)"
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRun {
    pub variant: Variant,
    pub dataset: Vec<EvalQuery>,
    pub report: RecallReport,
    /// Classifier answers that were not exactly `0` or `1`.
    pub parse_failures: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassifierVerdict {
    pub relevant: bool,
    pub parse_failure: bool,
}

pub fn classifier_prompt(query: &str, document: &str) -> String {
    format!("{CLASSIFIER_PROMPT}\n\nQuery: {query}\n\nDocument: {document}")
}

/// Asks the model whether `document` helps answer `query`. Only a bare `0` or
/// `1` (surrounding whitespace allowed) is accepted; anything else is a no.
pub async fn classify_relevance(
    llm: &dyn LlmProvider,
    query: &str,
    document: &str,
) -> Result<ClassifierVerdict, ProviderError> {
    let answer = llm.complete(&classifier_prompt(query, document)).await?;
    Ok(match answer.trim() {
        "1" => ClassifierVerdict {
            relevant: true,
            parse_failure: false,
        },
        "0" => ClassifierVerdict {
            relevant: false,
            parse_failure: false,
        },
        _ => ClassifierVerdict {
            relevant: false,
            parse_failure: true,
        },
    })
}

fn push_unique(out: &mut Vec<String>, id: String) {
    if !out.contains(&id) {
        out.push(id);
    }
}

/// Runs one pipeline over every query and scores it with capped recall.
pub async fn run_ablation(
    variant: Variant,
    router: &Router,
    corpus: &[Arc<KnowledgeModule>],
    queries: &[LabeledQuery],
    llm: Option<&dyn LlmProvider>,
) -> Result<AblationRun, EvalError> {
    if variant == Variant::LlmClassifier && llm.is_none() {
        return Err(EvalError::MissingLlm("llm_classifier"));
    }
    let view = RegistryView {
        modules: corpus.to_vec(),
        personal: PersonalModule::default(),
    };
    let view = &view;

    let results: Vec<(Vec<String>, usize)> = futures::stream::iter(queries)
        .map(|q| async move { retrieve_for(variant, router, view, &q.query, llm).await })
        .buffered(QUERY_WORKERS)
        .try_collect()
        .await?;

    let mut parse_failures = 0;
    let dataset: Vec<EvalQuery> = queries
        .iter()
        .zip(results)
        .map(|(q, (retrieved, failures))| {
            parse_failures += failures;
            EvalQuery {
                query: q.query.clone(),
                relevant_module_ids: q.relevant_module_ids.clone(),
                retrieved_module_ids: retrieved,
            }
        })
        .collect();
    let report = compute_recall(&dataset)?;
    Ok(AblationRun {
        variant,
        dataset,
        report,
        parse_failures,
    })
}

async fn retrieve_for(
    variant: Variant,
    router: &Router,
    view: &RegistryView,
    query: &str,
    llm: Option<&dyn LlmProvider>,
) -> Result<(Vec<String>, usize), EvalError> {
    let mut retrieved = Vec::new();
    let mut failures = 0;
    match variant {
        Variant::RetrieveRerank => {
            let (_, selected) = router.rank(query, view).await?;
            for d in selected {
                push_unique(&mut retrieved, d.doc.module_id.to_string());
            }
        }
        Variant::RetrieveOnly => {
            let tau = router.config().filter_threshold;
            let retrieval = router
                .retrieve(query, &view.modules, &view.personal)
                .await?;
            for (doc, cosine) in retrieval.modules {
                if cosine > tau {
                    push_unique(&mut retrieved, doc.module_id.to_string());
                }
            }
        }
        Variant::LlmClassifier => {
            let llm = llm.ok_or(EvalError::MissingLlm("llm_classifier"))?;
            for module in &view.modules {
                let verdict = classify_relevance(llm, query, &module.content).await?;
                failures += usize::from(verdict.parse_failure);
                if verdict.relevant {
                    retrieved.push(module.id.to_string());
                }
            }
        }
        Variant::AlwaysEmpty => {}
    }
    Ok((retrieved, failures))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::FnLlm;

    #[tokio::test]
    async fn strict_parse() {
        let one = FnLlm::new("one", |_: &str| Ok("1".to_owned()));
        let v = classify_relevance(&one, "q", "d").await.unwrap();
        assert!(v.relevant && !v.parse_failure);

        let chatty = FnLlm::new("chatty", |_: &str| Ok("The answer is 1.".to_owned()));
        let v = classify_relevance(&chatty, "q", "d").await.unwrap();
        assert!(!v.relevant && v.parse_failure);

        let padded = FnLlm::new("padded", |_: &str| Ok(" 0\n".to_owned()));
        let v = classify_relevance(&padded, "q", "d").await.unwrap();
        assert!(!v.relevant && !v.parse_failure);
    }

    #[test]
    fn prompt_layout() {
        let p = classifier_prompt("why?", "because");
        assert!(p.starts_with(CLASSIFIER_PROMPT));
        assert!(p.ends_with("\n\nQuery: why?\n\nDocument: because"));
    }
}
