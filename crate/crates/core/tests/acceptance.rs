//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use knoll_core::chunker::{estimate_tokens_for_len, split_module, split_text};
use knoll_core::clustering::{
    choose_k, cluster_summary_prompt, kmeans, task_extraction_prompt, ClusterError,
};
use knoll_core::evalkit::planted::{
    planted_corpus, PLANTED_MODULES, PLANTED_QUERIES, PLANTED_SEED,
};
use knoll_core::evalkit::{classifier_prompt, compute_recall, run_ablation, EvalQuery, Variant};
use knoll_core::prompts::{
    CLASSIFIER_PROMPT, CLUSTER_SUMMARY_PROMPT, INJECTION_TEMPLATE, TASK_EXTRACTION_PROMPT,
};
use knoll_core::providers::{FnLlm, HashedBowEmbedder, TokenOverlapReranker};
use knoll_core::proxy::mock::MockUpstream;
use knoll_core::proxy::stress::stress_test;
use knoll_core::proxy::{build_injection_prompt, CONVERSATION_HEADER};
use knoll_core::registry::{ModuleId, NewModule, Registry, RegistryError, Visibility};
use knoll_core::router::{select, Document, QueryContext, RegistryView, Router, RouterConfig};
use parking_lot::Mutex;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use common::{
    brute_force_recall, brute_force_select, golden, knoll_with, offline_knoll, random_markdown,
    random_scores, ranked_docs, spawn_proxy,
};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1
fn selection_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = RouterConfig::default();
    let mut mismatches = 0;
    for _ in 0..1000 {
        let docs = ranked_docs(&random_scores(&mut rng));
        let got: Vec<_> = select(&docs, &cfg)
            .into_iter()
            .map(|d| d.doc.content_hash.clone())
            .collect();
        if got != brute_force_select(&docs) {
            mismatches += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(mismatches == 0, || format!("{mismatches} mismatches"))?;
    ensure(secs < 5.0, || format!("took {secs:.2} s"))?;
    Ok(format!("1000 score vectors, 0 mismatches, {secs:.2} s"))
}

// 2
const WORDS: &[&str] = &[
    "sleep", "exam", "rust", "memory", "notes", "lecture", "borrow", "trait", "poem", "autumn",
    "budget", "token", "cache", "vector", "router", "module", "clip", "query", "cluster", "week",
];

fn random_text(rng: &mut ChaCha8Rng, paragraphs: usize) -> String {
    let mut out = String::new();
    for p in 0..paragraphs {
        if rng.random_bool(0.3) {
            out.push_str(&format!("## Part {p}\n\n"));
        }
        let n = rng.random_range(3..60);
        let words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
        out.push_str(&words.join(" "));
        out.push_str("\n\n");
    }
    out
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

async fn retrieval_set_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let embedder = HashedBowEmbedder::default();
    let mut pooled = 0usize;
    for case in 0..500 {
        let cfg = RouterConfig {
            chunk_budget: rng.random_range(64..400),
            ..RouterConfig::default()
        };
        let router = Router::new(
            cfg.clone(),
            Arc::new(embedder.clone()),
            Arc::new(TokenOverlapReranker),
        )
        .unwrap();
        let registry = Registry::in_memory();
        for m in 0..rng.random_range(0..8) {
            let paragraphs = rng.random_range(1..6);
            let content = random_text(&mut rng, paragraphs);
            let created = registry
                .create_module(NewModule::inline(
                    format!("M{m}"),
                    Visibility::Private,
                    content,
                ))
                .unwrap();
            if rng.random_bool(0.7) {
                registry.toggle_module(&created.id, true).unwrap();
            }
        }
        for _ in 0..rng.random_range(0..4) {
            let text = random_text(&mut rng, 1);
            registry.add_clipping(text.trim(), None).unwrap();
        }
        let n = rng.random_range(1..6);
        let query: Vec<&str> = (0..n).map(|_| *WORDS.choose(&mut rng).unwrap()).collect();
        let query = query.join(" ");

        let result = router
            .route(
                &QueryContext::new(query.clone()),
                &RegistryView::of(&registry),
            )
            .await
            .map_err(|e| format!("case {case}: {e}"))?;
        pooled += result.pool.len();

        // Independent expectation: cosine of every active chunk, top five, plus every clipping.
        let qv = embedder.embed_one(&query);
        let mut scored: Vec<((ModuleId, usize), f64)> = Vec::new();
        for module in registry.active_modules() {
            for chunk in split_module(&module, cfg.chunk_budget).unwrap() {
                let doc = Document::from_chunk(chunk, &module.name);
                scored.push((
                    (doc.module_id.clone(), doc.index),
                    cosine(&qv, &embedder.embed_one(&doc.text())),
                ));
            }
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        let k = scored.len().min(5);
        let got: BTreeSet<(ModuleId, usize)> = result
            .pool
            .iter()
            .filter(|d| !d.doc.is_clipping)
            .map(|d| (d.doc.module_id.clone(), d.doc.index))
            .collect();
        ensure(got.len() == k, || {
            format!(
                "case {case}: {} module docs in pool, expected {k}",
                got.len()
            )
        })?;
        if k > 0 {
            let cutoff = scored[k - 1].1;
            for (key, s) in &scored {
                if *s > cutoff + 1e-9 {
                    ensure(got.contains(key), || {
                        format!("case {case}: missing doc with cosine {s}")
                    })?;
                }
                if *s < cutoff - 1e-9 {
                    ensure(!got.contains(key), || {
                        format!("case {case}: pool has doc below top five ({s})")
                    })?;
                }
            }
        }
        let clips_in_pool: Vec<String> = result
            .pool
            .iter()
            .filter(|d| d.doc.is_clipping)
            .map(|d| d.doc.body.clone())
            .collect();
        let clips: Vec<String> = registry
            .personal_module()
            .clippings
            .iter()
            .map(|c| c.text.clone())
            .collect();
        ensure(clips_in_pool == clips, || {
            format!("case {case}: clippings differ")
        })?;
    }
    Ok(format!(
        "500 random corpora, {pooled} pooled documents, pool = top-5 by cosine + all clippings"
    ))
}

// 3
fn eval_query(retrieved: &BTreeSet<usize>, relevant: &BTreeSet<usize>) -> EvalQuery {
    EvalQuery {
        query: String::new(),
        relevant_module_ids: relevant.iter().map(|m| format!("m{m}")).collect(),
        retrieved_module_ids: retrieved.iter().map(|m| format!("m{m}")).collect(),
    }
}

fn random_set(rng: &mut ChaCha8Rng) -> BTreeSet<usize> {
    (0..16).filter(|_| rng.random_bool(0.3)).collect()
}

fn recall_formula() -> Outcome {
    let set = |xs: &[usize]| xs.iter().copied().collect::<BTreeSet<_>>();
    let examples = [
        (set(&[0]), set(&[0]), 1.0),
        (set(&[0, 1]), set(&[0, 2]), 0.5),
        (set(&[0, 1, 2, 3, 4]), set(&[0, 1, 2, 3, 4, 5, 6]), 1.0),
    ];
    for (r, g, want) in &examples {
        let got = compute_recall(&[eval_query(r, g)])
            .map_err(|e| e.to_string())?
            .recall;
        ensure(got == *want, || {
            format!("example {r:?}/{g:?}: {got} != {want}")
        })?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut oracle_checked = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..20);
        let data: Vec<_> = (0..n)
            .map(|_| (random_set(&mut rng), random_set(&mut rng)))
            .collect();
        let dataset: Vec<EvalQuery> = data.iter().map(|(r, g)| eval_query(r, g)).collect();
        match (compute_recall(&dataset), brute_force_recall(&data, 16)) {
            (Ok(rep), Some(want)) => {
                ensure(rep.recall == want, || {
                    format!("oracle mismatch {} vs {want}", rep.recall)
                })?;
                oracle_checked += 1;
            }
            (Err(_), None) => {}
            _ => return Err("definedness differs from oracle".into()),
        }
    }

    let mut perturbations = 0;
    while perturbations < 1000 {
        let n = rng.random_range(1..20);
        let mut data: Vec<_> = (0..n)
            .map(|_| (random_set(&mut rng), random_set(&mut rng)))
            .collect();
        let before: Vec<EvalQuery> = data.iter().map(|(r, g)| eval_query(r, g)).collect();
        let Ok(base) = compute_recall(&before) else {
            continue;
        };
        let i = rng.random_range(0..n);
        let missing: Vec<usize> = data[i].1.difference(&data[i].0).copied().collect();
        let Some(&add) = missing.choose(&mut rng) else {
            continue;
        };
        data[i].0.insert(add);
        let after: Vec<EvalQuery> = data.iter().map(|(r, g)| eval_query(r, g)).collect();
        let next = compute_recall(&after).unwrap().recall;
        ensure(next >= base.recall, || {
            format!("recall fell from {} to {next}", base.recall)
        })?;
        perturbations += 1;
    }
    Ok(format!(
        "3 worked examples exact, {oracle_checked} datasets match the set oracle, 1000 monotone perturbations"
    ))
}

// 4
async fn ablation_ordering() -> Outcome {
    let corpus = planted_corpus(PLANTED_SEED);
    ensure(
        corpus.modules.len() == PLANTED_MODULES && corpus.queries.len() == PLANTED_QUERIES,
        || "corpus shape".into(),
    )?;
    let router = Router::new(
        RouterConfig::default(),
        Arc::new(HashedBowEmbedder::default()),
        Arc::new(corpus.oracle.clone()),
    )
    .unwrap();
    let mut recalls = Vec::new();
    for v in [
        Variant::RetrieveRerank,
        Variant::RetrieveOnly,
        Variant::AlwaysEmpty,
    ] {
        let run = run_ablation(v, &router, &corpus.modules, &corpus.queries, None)
            .await
            .map_err(|e| e.to_string())?;
        recalls.push(run.report.recall);
    }
    let (rr, ro, empty) = (recalls[0], recalls[1], recalls[2]);
    ensure(rr >= ro && ro >= empty, || {
        format!("ordering broken: {rr:.3} / {ro:.3} / {empty:.3}")
    })?;
    Ok(format!(
        "16 modules / 50 queries: retrieve_rerank {rr:.3} >= retrieve_only {ro:.3} >= always_empty {empty:.3}"
    ))
}

// 5
fn chunker_coverage() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut chunks_seen = 0;
    let mut oversized = 0;
    for doc in 0..1000 {
        let text = random_markdown(&mut rng);
        let budget = rng.random_range(64..=600);
        let chunks =
            split_text(&ModuleId::from("m"), "Doc", &text, budget).map_err(|e| e.to_string())?;
        let joined: String = chunks.iter().map(|c| c.body.as_str()).collect();
        ensure(joined == text, || {
            format!("document {doc}: bodies do not reassemble the source")
        })?;
        for c in &chunks {
            if c.oversized {
                oversized += 1;
            } else {
                ensure(c.token_estimate <= budget, || {
                    format!(
                        "document {doc}: chunk of {} tokens over budget {budget}",
                        c.token_estimate
                    )
                })?;
            }
        }
        chunks_seen += chunks.len();
    }
    let tokens = estimate_tokens_for_len(5_000_000);
    ensure(tokens == 1_250_000, || {
        format!("5,000,000 bytes -> {tokens} tokens")
    })?;
    Ok(format!(
        "1000 documents, {chunks_seen} chunks, {oversized} flagged leaves, 5,000,000 bytes -> 1,250,000 tokens"
    ))
}

// 6
fn limits() -> Outcome {
    for (size, accept) in [
        (4_999_999usize, true),
        (5_000_000, false),
        (5_000_001, false),
    ] {
        let registry = Registry::in_memory();
        let m = registry
            .create_module(NewModule::inline(
                "Big",
                Visibility::Private,
                "a".repeat(size),
            ))
            .unwrap();
        let result = registry.toggle_module(&m.id, true);
        match (accept, result) {
            (true, Ok(set)) => ensure(set.total_active_bytes == size, || "total mismatch".into())?,
            (false, Err(RegistryError::BudgetExceeded { .. })) => {}
            (_, other) => return Err(format!("activation at {size} bytes: {other:?}")),
        }
    }
    for (second, accept) in [(999_999usize, true), (1_000_000, false)] {
        let registry = Registry::in_memory();
        let a = registry
            .create_module(NewModule::inline(
                "A",
                Visibility::Private,
                "a".repeat(4_000_000),
            ))
            .unwrap();
        let b = registry
            .create_module(NewModule::inline(
                "B",
                Visibility::Private,
                "b".repeat(second),
            ))
            .unwrap();
        registry.toggle_module(&a.id, true).unwrap();
        ensure(
            registry.toggle_module(&b.id, true).is_ok() == accept,
            || format!("second module of {second} bytes on top of 4,000,000"),
        )?;
    }
    for (size, accept) in [(499_999usize, true), (500_000, false), (500_001, false)] {
        let registry = Registry::in_memory();
        match (accept, registry.add_clipping(&"c".repeat(size), None)) {
            (true, Ok(c)) => ensure(c.byte_size == size, || "clip size".into())?,
            (false, Err(RegistryError::ClippingTooLarge { .. })) => {}
            (_, other) => {
                return Err(format!(
                    "clipping of {size} bytes: {:?}",
                    other.map(|c| c.byte_size)
                ))
            }
        }
    }
    Ok("activation ok at 4,999,999, rejected at 5,000,000 and 5,000,001; clipping ok at 499,999, rejected at 500,000 and 500,001".into())
}

// 7
async fn once_per_conversation() -> Outcome {
    const BODY: &str = "Students need seven to nine hours of sleep each night before an exam.\n";
    const QUESTION: &str = "How many hours of sleep do students need before an exam?";
    let knoll = offline_knoll();
    let m = knoll
        .registry()
        .create_module(NewModule::inline("Sleep", Visibility::Private, BODY))
        .unwrap();
    knoll.registry().toggle_module(&m.id, true).unwrap();
    let mock = MockUpstream::default();
    let (upstream, _) = mock.spawn().await.map_err(|e| e.to_string())?;
    let (base, _) = spawn_proxy(knoll, &upstream).await;
    let http = reqwest::Client::new();

    let template = golden("injection_prompt.txt");
    let prefix = template
        .strip_suffix("${MODULE CONTENTS}$")
        .ok_or("template placeholder")?;
    let injected = format!("{prefix}[Sleep]\n{}\n\n{QUESTION}", BODY.trim_end());

    let mut seen = Vec::new();
    for conv in ["first", "first", "second"] {
        http.post(format!("{base}/v1/chat/completions"))
            .header(CONVERSATION_HEADER, conv)
            .json(&json!({ "model": "m", "messages": [{ "role": "user", "content": QUESTION }] }))
            .send()
            .await
            .map_err(|e| e.to_string())?;
        seen.push(mock.last_user_content().ok_or("upstream saw nothing")?);
    }
    ensure(seen[0].as_bytes() == injected.as_bytes(), || {
        "first request not injected as expected".into()
    })?;
    ensure(seen[1].as_bytes() == QUESTION.as_bytes(), || {
        "repeat in same conversation was injected again".into()
    })?;
    ensure(seen[2].as_bytes() == injected.as_bytes(), || {
        "new conversation not re-injected".into()
    })?;
    Ok(format!(
        "upstream prompts: {} bytes, {} bytes (bare), {} bytes in a new conversation",
        seen[0].len(),
        seen[1].len(),
        seen[2].len()
    ))
}

// 8
fn prompt_fidelity() -> Outcome {
    let pairs = [
        ("injection_prompt.txt", INJECTION_TEMPLATE),
        ("classifier_prompt.txt", CLASSIFIER_PROMPT),
        ("task_extraction_prompt.txt", TASK_EXTRACTION_PROMPT),
        ("cluster_summary_prompt.txt", CLUSTER_SUMMARY_PROMPT),
    ];
    for (file, constant) in pairs {
        ensure(golden(file) == constant, || {
            format!("{file} differs from the shipped template")
        })?;
    }
    ensure(
        golden("injection_prompt.txt").contains("Let's think step by step."),
        || "injection prompt lacks the step-by-step line".into(),
    )?;
    ensure(
        golden("classifier_prompt.txt").contains("Return 1 if the document is RELEVANT"),
        || "classifier prompt lacks the RELEVANT line".into(),
    )?;

    // What actually leaves the process starts with the template bytes.
    let outbound = [
        (classifier_prompt("q", "d"), "classifier_prompt.txt"),
        (task_extraction_prompt("q"), "task_extraction_prompt.txt"),
        (
            cluster_summary_prompt(&["t".into()]),
            "cluster_summary_prompt.txt",
        ),
    ];
    for (prompt, file) in &outbound {
        ensure(prompt.starts_with(&golden(file)), || {
            format!("outbound prompt does not start with {file}")
        })?;
    }
    let docs = ranked_docs(&[0.9]);
    let injected = build_injection_prompt(&docs, "hi");
    let prefix = golden("injection_prompt.txt").replace("${MODULE CONTENTS}$", "");
    ensure(
        injected.starts_with(&prefix) && injected.ends_with("\n\nhi"),
        || "injection layout".into(),
    )?;
    Ok("4 templates byte-identical to golden files; outbound prompts carry them verbatim".into())
}

// 9
async fn stress() -> Outcome {
    let corpus = planted_corpus(PLANTED_SEED);
    let registry = Arc::new(Registry::in_memory());
    for m in &corpus.modules {
        let created = registry
            .create_module(NewModule::inline(
                m.name.clone(),
                Visibility::Private,
                m.content.clone(),
            ))
            .unwrap();
        registry.toggle_module(&created.id, true).unwrap();
    }
    registry
        .add_clipping("remember to sleep before the exam", None)
        .unwrap();
    let knoll = knoll_with(
        registry,
        Arc::new(HashedBowEmbedder::default()),
        Arc::new(TokenOverlapReranker),
    );
    let queries: Vec<String> = corpus.queries.iter().map(|q| q.query.clone()).collect();
    let started = Instant::now();
    let report = stress_test(knoll, 100, 10, &queries)
        .await
        .map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    ensure(report.samples == 1000, || {
        format!("{} samples", report.samples)
    })?;
    ensure(report.errors() == 0, || {
        format!(
            "{} router errors, {} request errors",
            report.router_errors, report.request_errors
        )
    })?;
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "100 users x 10 requests, 0 errors, router p50 {:.2} ms, p95 {:.2} ms, mean {:.2} ms, wall {secs:.2} s",
        report.p50_ms, report.p95_ms, report.mean_ms
    ))
}

// 10
fn clustering() -> Outcome {
    let boundaries = [
        (1, 1),
        (20, 1),
        (40, 1),
        (59, 1),
        (60, 2),
        (99, 2),
        (100, 3),
        (1560, 39),
    ];
    for (n, k) in boundaries {
        let got = choose_k(n).map_err(|e| e.to_string())?;
        ensure(got == k, || format!("choose_k({n}) = {got}, expected {k}"))?;
    }
    ensure(matches!(choose_k(0), Err(ClusterError::Empty)), || {
        "choose_k(0) accepted".into()
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut steps = 0;
    for d in 0..100 {
        let n = rng.random_range(2..150);
        let dim = rng.random_range(1..6);
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect())
            .collect();
        let k = rng.random_range(1..=n.min(10));
        let r = kmeans(&points, k, d).map_err(|e| e.to_string())?;
        for w in r.inertia_history.windows(2) {
            ensure(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, || {
                format!("dataset {d}: inertia rose {} -> {}", w[0], w[1])
            })?;
        }
        steps += r.inertia_history.len();
    }

    let mut points = Vec::new();
    let mut sums = [[0.0f64; 2]; 2];
    for (sum, centre) in sums.iter_mut().zip([[0.0, 0.0], [8.0, -3.0]]) {
        for _ in 0..60 {
            let p = [
                centre[0] + rng.random_range(-1.0..1.0),
                centre[1] + rng.random_range(-1.0..1.0),
            ];
            sum[0] += p[0];
            sum[1] += p[1];
            points.push(p.to_vec());
        }
    }
    let r = kmeans(&points, 2, 0).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (blob, sum) in sums.iter().enumerate() {
        let c = r.assignments[blob * 60];
        let means = [sum[0] / 60.0, sum[1] / 60.0];
        for (m, got) in means.iter().zip(&r.centroids[c]) {
            worst = worst.max((m - got).abs());
        }
    }
    ensure(worst < 1e-6, || format!("centroid off by {worst}"))?;
    Ok(format!(
        "choose_k on 8 boundaries, inertia monotone over 100 datasets ({steps} steps), two blobs within {worst:.1e}"
    ))
}

// Outbound classifier prompts are also checked through a capturing provider.
async fn classifier_capture() -> Result<(), String> {
    let corpus = planted_corpus(1);
    let router = Router::new(
        RouterConfig::default(),
        Arc::new(HashedBowEmbedder::default()),
        Arc::new(TokenOverlapReranker),
    )
    .unwrap();
    let log = Arc::new(Mutex::new(Vec::<String>::new()));
    let sink = log.clone();
    let llm = FnLlm::new("capture", move |p: &str| {
        sink.lock().push(p.to_owned());
        Ok("0".into())
    });
    run_ablation(
        Variant::LlmClassifier,
        &router,
        &corpus.modules,
        &corpus.queries[..1],
        Some(&llm),
    )
    .await
    .map_err(|e| e.to_string())?;
    let golden = golden("classifier_prompt.txt");
    let all_match = log.lock().iter().all(|p| p.starts_with(&golden));
    ensure(all_match, || "captured classifier prompt differs".into())
}

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .unwrap();
    let mut results: BTreeMap<usize, (&str, Outcome)> = BTreeMap::new();
    results.insert(1, ("selection-rule oracle", selection_oracle()));
    results.insert(2, ("retrieval-set law", rt.block_on(retrieval_set_law())));
    results.insert(3, ("recall formula", recall_formula()));
    results.insert(4, ("ablation ordering", rt.block_on(ablation_ordering())));
    results.insert(5, ("chunker coverage", chunker_coverage()));
    results.insert(6, ("limits bit-exact", limits()));
    results.insert(
        7,
        (
            "once per conversation",
            rt.block_on(once_per_conversation()),
        ),
    );
    let fidelity = prompt_fidelity().and_then(|msg| rt.block_on(classifier_capture()).map(|_| msg));
    results.insert(8, ("prompt fidelity", fidelity));
    results.insert(9, ("stress", rt.block_on(stress())));
    results.insert(10, ("clustering", clustering()));

    let mut failed = 0;
    for (n, (name, outcome)) in &results {
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {why}");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
