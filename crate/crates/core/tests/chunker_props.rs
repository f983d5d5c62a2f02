mod common;

use knoll_core::chunker::{estimate_tokens_for_len, split_text};
use knoll_core::registry::ModuleId;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{is_subsequence, outline_headings, outline_stack, random_markdown};

const NAME: &str = "Doc";

fn doc_and_budget() -> impl Strategy<Value = (String, usize)> {
    (any::<u64>(), 64usize..=600).prop_map(|(seed, budget)| {
        (
            random_markdown(&mut ChaCha8Rng::seed_from_u64(seed)),
            budget,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bodies_reassemble_source((text, budget) in doc_and_budget()) {
        let chunks = split_text(&ModuleId::from("m"), NAME, &text, budget).unwrap();
        let joined: String = chunks.iter().map(|c| c.body.as_str()).collect();
        prop_assert_eq!(joined, text);
    }

    #[test]
    fn chunks_fit_unless_flagged((text, budget) in doc_and_budget()) {
        for c in split_text(&ModuleId::from("m"), NAME, &text, budget).unwrap() {
            prop_assert_eq!(c.token_estimate, estimate_tokens_for_len(c.breadcrumb.len() + c.body.len()));
            prop_assert!(c.oversized || c.token_estimate <= budget, "{} > {}", c.token_estimate, budget);
            if c.oversized {
                let after_headings: String = c.body
                    .lines()
                    .skip_while(|l| l.trim().is_empty() || l.starts_with('#'))
                    .collect::<Vec<_>>()
                    .join("\n");
                prop_assert!(!after_headings.trim_end().contains("\n\n"), "oversized chunk spans paragraphs");
            }
        }
    }

    #[test]
    fn breadcrumbs_follow_outline((text, budget) in doc_and_budget()) {
        let headings = outline_headings(&text);
        let mut offset = 0;
        for c in split_text(&ModuleId::from("m"), NAME, &text, budget).unwrap() {
            let end = offset + c.body.len();
            let trail: Vec<String> = c.breadcrumb.split(" > ").skip(1).map(str::to_owned).collect();
            prop_assert!(c.breadcrumb == NAME || c.breadcrumb.starts_with("Doc > "));
            let stack = outline_stack(&headings, end.saturating_sub(1));
            prop_assert!(is_subsequence(&trail, &stack), "trail {:?} not within outline {:?}", trail, stack);
            offset = end;
        }
    }

    #[test]
    fn larger_budget_never_more_chunks((text, budget) in doc_and_budget(), extra in 1usize..400) {
        let small = split_text(&ModuleId::from("m"), NAME, &text, budget).unwrap().len();
        let large = split_text(&ModuleId::from("m"), NAME, &text, budget + extra).unwrap().len();
        prop_assert!(large <= small, "{large} chunks at {} vs {small} at {budget}", budget + extra);
    }
}

#[test]
fn chunks_are_indexed_in_order() {
    let text = random_markdown(&mut ChaCha8Rng::seed_from_u64(3));
    let chunks = split_text(&ModuleId::from("m"), NAME, &text, 64).unwrap();
    for (i, c) in chunks.iter().enumerate() {
        assert_eq!(c.index, i);
    }
}
