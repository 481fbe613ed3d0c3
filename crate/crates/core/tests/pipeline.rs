//! Whole-pipeline runs against the scripted mock.

mod common;

use std::collections::HashMap;
use std::sync::Arc;

use common::{decisions_jsonl, oracle_mock, run, synthetic};
use conlink::concepts::{ConceptSet, Side};
use conlink::decision::Prediction;
use conlink::embedding::EmbeddingStore;
use conlink::eval::{accuracy, gold_aware_script, make_nil_extension, GoldLinks};
use conlink::llm::{
    ledger_report, LedgerEntry, LlmClient, LlmClientConfig, MockProvider, PriceTable, PromptTemplates, ResponseCache,
    UsageModel,
};
use conlink::orchestrator::{Linker, Mode, PipelineConfig};
use conlink::retry::RetryPolicy;

fn tiny_templates() -> PromptTemplates {
    PromptTemplates {
        system: "sys".into(),
        stage1: "Q: {query}\nC: {candidate}\nyes or no?".into(),
        stage2: "Q: {query}\n{candidate_list}\npick one".into(),
        reask_suffix: "\nstrict".into(),
    }
}

fn cached_client(mock: MockProvider, path: &std::path::Path) -> LlmClient {
    LlmClient::new(
        mock,
        Arc::new(ResponseCache::open(path).unwrap()),
        LlmClientConfig {
            retry: RetryPolicy::immediate(3),
            ..Default::default()
        },
    )
}

fn stage_tokens(entries: &[LedgerEntry], stage: &str) -> (u64, u64, u64) {
    entries
        .iter()
        .filter(|e| e.stage == stage)
        .fold((0, 0, 0), |(c, p, q), e| {
            (c + e.calls, p + e.prompt_tokens, q + e.completion_tokens)
        })
}

/// One query, four candidates, one of them gold. Every number below is
/// counted by hand from the tiny templates: a stage-1 prompt is 1 system
/// line + 3 user lines; a stage-2 prompt is 1 + 2 + (listed candidates).
#[test]
fn ledger_matches_hand_count() {
    let targets = ConceptSet::from_pairs(
        Side::Target,
        [("t1", "alpha"), ("t2", "beta"), ("t3", "gamma"), ("t4", "delta")],
    )
    .unwrap();
    let queries = ConceptSet::from_pairs(Side::Query, [("q1", "bet")]).unwrap();
    let tv = EmbeddingStore::from_rows(
        Side::Target,
        2,
        [
            ("t1", vec![1.0, 0.0]),
            ("t2", vec![0.9, 0.1]),
            ("t3", vec![0.5, 0.5]),
            ("t4", vec![0.0, 1.0]),
        ],
    )
    .unwrap();
    let qv = EmbeddingStore::from_rows(Side::Query, 2, [("q1", vec![1.0, 0.05])]).unwrap();
    let gold = GoldLinks::from_pairs([("q1", "t2")]).unwrap();
    let usage = UsageModel {
        prompt_base: 7,
        prompt_per_line: 3,
        completion: 2,
    };
    let script = gold_aware_script(&queries, &targets, &gold, &tiny_templates(), Some(usage));

    let mut by_mode = HashMap::new();
    for mode in [Mode::TwoStage, Mode::Stage1Only, Mode::Stage2Only] {
        let client = LlmClient::uncached(MockProvider::new(script.clone()).unwrap());
        let config = PipelineConfig {
            k: 4,
            n: 5,
            mode,
            ..Default::default()
        };
        let out = Linker::new(config, &targets, &qv, &tv)
            .unwrap()
            .with_client(&client)
            .with_templates(tiny_templates())
            .link_batch(&queries, 1);
        assert_eq!(
            out.decisions[0].prediction,
            Some(Prediction::Concept("t2".into())),
            "{mode}"
        );
        by_mode.insert(mode, out);
    }

    let two = &by_mode[&Mode::TwoStage];
    assert_eq!(two.decisions[0].retained, vec!["t2"]);
    // 4 candidates x 5 samples, each 7 + 3*4 = 19 prompt tokens and 2 completion.
    assert_eq!(stage_tokens(&two.ledger, "stage1"), (20, 380, 40));
    // 5 samples listing one candidate: 7 + 3*(1+2+1) = 19.
    assert_eq!(stage_tokens(&two.ledger, "stage2"), (5, 95, 10));
    let s2 = &by_mode[&Mode::Stage2Only];
    // 5 samples listing four candidates: 7 + 3*(1+2+4) = 28.
    assert_eq!(stage_tokens(&s2.ledger, "stage2"), (5, 140, 10));
    assert_eq!(stage_tokens(&s2.ledger, "stage1"), (0, 0, 0));
    let s1 = &by_mode[&Mode::Stage1Only];
    assert_eq!(stage_tokens(&s1.ledger, "stage1"), (20, 380, 40));
    assert_eq!(stage_tokens(&s1.ledger, "stage2"), (0, 0, 0));

    let report = ledger_report(&two.manifest.usage, &PriceTable::default()).unwrap();
    assert_eq!(report.total.total_tokens, 380 + 40 + 95 + 10);
    assert_eq!(report.stage("stage2").unwrap().calls, 5);
    assert!((report.total.cost - (475.0 * 0.03 + 50.0 * 0.06) / 1000.0).abs() < 1e-12);
}

#[test]
fn gold_aware_mock_links_everything() {
    let data = synthetic(60, 600, 11);
    let gold = make_nil_extension(&data.queries, &data.gold, 0.25, 3).unwrap();
    let t = PromptTemplates::default();
    let client = LlmClient::uncached(oracle_mock(&data, &gold, &t, None));
    let out = run(&data, PipelineConfig::default(), &client, 4);
    let s = accuracy(&out.decisions, &gold).unwrap();
    assert_eq!(s.overall, 1.0);
    assert_eq!(s.nil.total, 15);
    assert_eq!(s.nil.accuracy, Some(1.0));
    assert_eq!(s.linkable.accuracy, Some(1.0));
    assert!(out.manifest.failures.is_empty());
}

#[test]
fn runs_are_byte_identical_and_cache_warm_rerun_is_free() {
    let data = synthetic(40, 400, 5);
    let t = PromptTemplates::default();
    let dir = tempfile::tempdir().unwrap();
    let (a_path, b_path) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));

    let a = run(
        &data,
        PipelineConfig::default(),
        &cached_client(oracle_mock(&data, &data.gold, &t, None), &a_path),
        8,
    );
    let b = run(
        &data,
        PipelineConfig::default(),
        &cached_client(oracle_mock(&data, &data.gold, &t, None), &b_path),
        1,
    );
    assert_eq!(decisions_jsonl(&a), decisions_jsonl(&b));
    assert_eq!(
        serde_json::to_string(&a.manifest).unwrap(),
        serde_json::to_string(&b.manifest).unwrap()
    );
    assert!(a.manifest.provider_calls > 0);

    let warm = run(
        &data,
        PipelineConfig::default(),
        &cached_client(oracle_mock(&data, &data.gold, &t, None), &a_path),
        4,
    );
    assert_eq!(warm.manifest.provider_calls, 0);
    assert_eq!(warm.manifest.cache_hits, a.manifest.provider_calls);
    assert!(warm.ledger.is_empty());
    assert_eq!(decisions_jsonl(&warm), decisions_jsonl(&a));
}

#[test]
fn interrupted_run_resumes_from_cache() {
    let data = synthetic(50, 500, 8);
    let t = PromptTemplates::default();
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.jsonl");
    let linker_for = |client| {
        Linker::new(
            PipelineConfig::default(),
            &data.targets,
            &data.query_vectors,
            &data.target_vectors,
        )
        .unwrap()
        .with_client(client)
    };

    let first10 = data.queries.filtered(|q| data.queries.position(&q.id).unwrap() < 10);
    let last40 = data.queries.filtered(|q| data.queries.position(&q.id).unwrap() >= 10);
    let c1 = cached_client(oracle_mock(&data, &data.gold, &t, None), &cache);
    let partial = linker_for(&c1).link_batch(&first10, 4);
    assert_eq!(partial.decisions.len(), 10);

    let c2 = cached_client(oracle_mock(&data, &data.gold, &t, None), &cache);
    let resumed = linker_for(&c2).link_batch(&data.queries, 4);
    let c3 = LlmClient::uncached(oracle_mock(&data, &data.gold, &t, None));
    let fresh40 = linker_for(&c3).link_batch(&last40, 4);
    assert_eq!(resumed.manifest.cache_hits, partial.manifest.provider_calls);
    assert_eq!(resumed.manifest.provider_calls, fresh40.manifest.provider_calls);
    let ran: std::collections::BTreeSet<&str> = resumed.ledger.iter().filter_map(|e| e.query_id.as_deref()).collect();
    assert_eq!(ran.len(), 40);
    assert!(first10.iter().all(|q| !ran.contains(q.id.as_str())));

    let full = run(
        &data,
        PipelineConfig::default(),
        &LlmClient::uncached(oracle_mock(&data, &data.gold, &t, None)),
        4,
    );
    assert_eq!(decisions_jsonl(&resumed), decisions_jsonl(&full));
}

#[test]
fn filtering_saves_stage2_tokens_per_query() {
    let data = synthetic(40, 400, 21);
    let gold = make_nil_extension(&data.queries, &data.gold, 0.25, 9).unwrap();
    let t = PromptTemplates::default();
    let usage = Some(UsageModel {
        prompt_base: 50,
        prompt_per_line: 4,
        completion: 3,
    });
    let per_query = |mode| {
        let client = LlmClient::uncached(oracle_mock(&data, &gold, &t, usage));
        let out = run(
            &data,
            PipelineConfig {
                mode,
                ..Default::default()
            },
            &client,
            4,
        );
        let mut m: HashMap<String, u64> = HashMap::new();
        for e in out.ledger.iter().filter(|e| e.stage == "stage2") {
            *m.entry(e.query_id.clone().unwrap()).or_default() += e.total_tokens();
        }
        (out, m)
    };
    let (two, two_tok) = per_query(Mode::TwoStage);
    let (_, s2_tok) = per_query(Mode::Stage2Only);
    let mut filtered = 0;
    for d in &two.decisions {
        let (a, b) = (two_tok[&d.query_id], s2_tok[&d.query_id]);
        if d.retained.len() < d.candidates.len() {
            filtered += 1;
            assert!(a < b, "{}: {a} !< {b}", d.query_id);
        } else {
            assert_eq!(a, b);
        }
    }
    assert_eq!(filtered, 30);
    assert!(two_tok.values().sum::<u64>() < s2_tok.values().sum::<u64>());
}

#[test]
fn stage1_only_never_predicts_nil() {
    let data = synthetic(30, 300, 2);
    let gold = make_nil_extension(&data.queries, &data.gold, 0.25, 1).unwrap();
    let t = PromptTemplates::default();
    let client = LlmClient::uncached(oracle_mock(&data, &gold, &t, None));
    let out = run(
        &data,
        PipelineConfig {
            mode: Mode::Stage1Only,
            ..Default::default()
        },
        &client,
        2,
    );
    assert!(out
        .decisions
        .iter()
        .all(|d| matches!(d.prediction, Some(Prediction::Concept(_)))));
    let s = accuracy(&out.decisions, &gold).unwrap();
    assert_eq!(s.linkable.accuracy, Some(1.0));
    assert_eq!(s.nil.accuracy, Some(0.0));
    // All-zero beliefs tie everywhere; the most similar candidate wins.
    for d in out.decisions.iter().filter(|d| gold.get(&d.query_id).unwrap().is_nil()) {
        assert_eq!(d.prediction.as_ref().unwrap().as_str(), d.candidates.top().unwrap().id);
        assert!(d.tie_break);
    }
}

#[test]
fn no_llm_mode_is_embedding_top1() {
    let data = synthetic(30, 300, 4);
    let config = PipelineConfig {
        mode: Mode::NoLlm,
        ..Default::default()
    };
    let out = Linker::new(config, &data.targets, &data.query_vectors, &data.target_vectors)
        .unwrap()
        .link_batch(&data.queries, 2);
    assert_eq!(accuracy(&out.decisions, &data.gold).unwrap().overall, 1.0);
    assert_eq!(out.manifest.provider_calls, 0);
    assert_eq!(out.decisions[0].method, "Before Prompting");
}
