use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use conlink::baselines::{rank_all, BaselineContext, ScorerKind};
use conlink::concepts::{load_concepts, Side};
use conlink::dataset::{self, Dataset};
use conlink::decision::LinkDecision;
use conlink::embedding::{retrieve_all, write_embeddings, CandidateSet, EmbeddingClient, EmbeddingStore};
use conlink::eval::{
    accuracy, cost_table, gen_synthetic, gold_aware_script, make_nil_extension, threshold_sweep, EvalReport,
    SyntheticSpec,
};
use conlink::llm::{
    ledger_report, read_ledger, write_ledger, ChatProvider, LedgerEntry, LlmClient, MockProvider, OpenAiChatProvider,
    OpenAiConfig, PromptTemplates, ResponseCache,
};
use conlink::orchestrator::{read_decisions, write_decisions, Linker, Mode, RunManifest};

use crate::config::{ProviderKind, RunConfig};
use crate::{Command, SideArg};

pub const CANDIDATES: &str = "candidates.jsonl";
pub const DECISIONS: &str = "decisions.jsonl";
pub const LEDGER: &str = "ledger.jsonl";
pub const MANIFEST: &str = "manifest.json";
pub const CACHE: &str = "cache.jsonl";

pub enum Status {
    Done,
    /// Finished, but this many queries failed.
    Partial(usize),
}

pub fn run(command: &Command, cfg: &RunConfig) -> Result<Status> {
    match command {
        Command::Retrieve { scorer } => retrieve(cfg, scorer),
        Command::Link => link(cfg),
        Command::Eval {
            decisions,
            baselines,
            sweep,
            ledger,
            name,
        } => eval(cfg, decisions, *baselines, sweep, ledger.as_deref(), name),
        Command::Cost { inputs, json } => cost(cfg, inputs, *json),
        Command::Gen {
            queries,
            targets,
            dim,
            margin,
            noise,
            hard_fraction,
            nil_proportion,
        } => {
            let spec = SyntheticSpec {
                queries: *queries,
                targets: *targets,
                dim: *dim,
                margin: *margin,
                noise: *noise,
                hard_fraction: *hard_fraction,
                seed: cfg.seed,
            };
            gen(cfg, &spec, *nil_proportion)
        }
        Command::Embed { side } => embed(cfg, *side),
    }
    .map(|s| s.unwrap_or(Status::Done))
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let data = Dataset::load(cfg.dataset()?)?;
    for w in &data.warnings {
        log::warn!("line {}: {}: {}", w.line, w.id, w.message);
    }
    Ok(data)
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).with_context(|| path.display().to_string())?);
    for r in rows {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

fn retrieve(cfg: &RunConfig, scorer: &str) -> Result<Option<Status>> {
    let kind = ScorerKind::parse(scorer).with_context(|| format!("unknown scorer {scorer:?}"))?;
    cfg.pipeline.validate()?;
    let data = load_dataset(cfg)?;
    let k = cfg.pipeline.k;
    let sets = match kind {
        ScorerKind::Embedding => retrieve_all(&data.queries, &data.query_vectors, &data.target_vectors, k)?,
        _ => rank_all(kind, &data.queries, &BaselineContext::new(&data.targets)?, k)?,
    };
    let path = cfg.out()?.join(CANDIDATES);
    write_jsonl(&path, &sets)?;
    println!("{} queries, top {k} by {kind} -> {}", sets.len(), path.display());
    Ok(None)
}

fn provider(cfg: &RunConfig) -> Result<Arc<dyn ChatProvider>> {
    Ok(match cfg.provider.kind {
        ProviderKind::Mock => {
            let path = match &cfg.provider.mock_script {
                Some(p) => p.clone(),
                None => cfg.dataset()?.join(dataset::MOCK_SCRIPT),
            };
            ensure!(path.is_file(), "{}: mock script not found", path.display());
            Arc::new(MockProvider::load(&path)?)
        }
        ProviderKind::Remote => Arc::new(OpenAiChatProvider::new(OpenAiConfig {
            endpoint: cfg.provider.endpoint.clone(),
            api_key: cfg.provider.resolve_api_key()?,
            timeout_secs: cfg.provider.timeout_secs,
        })),
    })
}

fn templates(cfg: &RunConfig) -> Result<PromptTemplates> {
    let t = match &cfg.templates {
        Some(dir) => PromptTemplates::load_dir(dir)?,
        None => PromptTemplates::default(),
    };
    t.validate()?;
    Ok(t)
}

fn link(cfg: &RunConfig) -> Result<Option<Status>> {
    cfg.pipeline.validate()?;
    let data = load_dataset(cfg)?;
    let out = cfg.out()?;
    let client = if cfg.pipeline.mode == Mode::NoLlm {
        None
    } else {
        let cache = ResponseCache::open(out.join(CACHE))?;
        Some(LlmClient::new(
            provider(cfg)?,
            Arc::new(cache),
            cfg.provider.client_config(),
        ))
    };
    let mut linker = Linker::new(
        cfg.pipeline.clone(),
        &data.targets,
        &data.query_vectors,
        &data.target_vectors,
    )?
    .with_templates(templates(cfg)?);
    if let Some(c) = &client {
        linker = linker.with_client(c);
    }
    let batch = linker.link_batch(&data.queries, cfg.jobs.max(1));

    write_decisions(out.join(DECISIONS), &batch.decisions)?;
    // The ledger accumulates across invocations so that resumed runs keep
    // the spend of earlier attempts.
    let ledger_path = out.join(LEDGER);
    let mut ledger = if ledger_path.is_file() {
        read_ledger(&ledger_path)?
    } else {
        Vec::new()
    };
    ledger.extend(batch.ledger);
    write_ledger(&ledger_path, &ledger)?;
    batch.manifest.write(out.join(MANIFEST))?;

    let m = &batch.manifest;
    println!(
        "{}: {} queries, {} failed; {} provider calls, {} cache hits, {} retries -> {}",
        cfg.pipeline.mode.label(),
        m.queries,
        m.failures.len(),
        m.provider_calls,
        m.cache_hits,
        m.retries,
        out.display()
    );
    Ok((!m.failures.is_empty()).then_some(Status::Partial(m.failures.len())))
}

fn eval(
    cfg: &RunConfig,
    decision_files: &[PathBuf],
    baselines: bool,
    thetas: &[f64],
    ledger: Option<&Path>,
    name: &str,
) -> Result<Option<Status>> {
    let data = load_dataset(cfg)?;
    let gold_path = cfg.dataset()?.join(dataset::GOLD);
    let gold = data
        .gold
        .as_ref()
        .with_context(|| format!("{}: no gold links to evaluate against", gold_path.display()))?;
    let out = cfg.out()?;

    let mut files = decision_files.to_vec();
    if files.is_empty() && out.join(DECISIONS).is_file() {
        files.push(out.join(DECISIONS));
    }
    ensure!(
        !files.is_empty() || baselines || !thetas.is_empty(),
        "nothing to evaluate: no decisions.jsonl in {} and no --baselines or --sweep",
        out.display()
    );

    let mut rows = Vec::new();
    let mut failed = 0;
    for f in &files {
        let decisions = read_decisions(f).with_context(|| f.display().to_string())?;
        failed += decisions.iter().filter(|d| d.is_failed()).count();
        rows.push(accuracy(&decisions, gold).with_context(|| f.display().to_string())?);
    }
    let k = cfg.pipeline.k;
    if baselines {
        let ctx = BaselineContext::new(&data.targets)?.with_embeddings(&data.query_vectors, &data.target_vectors);
        for kind in ScorerKind::ALL {
            let sets = rank_all(kind, &data.queries, &ctx, k)?;
            let decisions: Vec<LinkDecision> = sets.into_iter().map(|s| LinkDecision::top1(kind.label(), s)).collect();
            rows.push(accuracy(&decisions, gold)?);
        }
    }
    let mut report = EvalReport::new(name, rows);
    if !thetas.is_empty() {
        let sets: Vec<CandidateSet> = retrieve_all(&data.queries, &data.query_vectors, &data.target_vectors, k)?;
        report.sweep = threshold_sweep(&sets, gold, thetas)?;
    }
    let ledger = match ledger {
        Some(p) => Some(p.to_path_buf()),
        None => Some(out.join(LEDGER)).filter(|p| p.is_file() && !files.is_empty()),
    };
    if let Some(p) = ledger {
        report.cost = Some(ledger_report(&read_ledger(&p)?, &cfg.price_table())?);
    }
    report.write(out)?;
    print!("{}", report.to_text());
    Ok((failed > 0).then_some(Status::Partial(failed)))
}

/// Usage entries from a ledger (JSON lines) or a run manifest (one JSON object).
fn usage_of(path: &Path) -> Result<Vec<LedgerEntry>> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    if text.trim_start().starts_with('{') && serde_json::from_str::<serde_json::Value>(&text).is_ok() {
        if let Ok(m) = serde_json::from_str::<RunManifest>(&text) {
            return Ok(m.usage);
        }
        if let Ok(e) = serde_json::from_str::<LedgerEntry>(&text) {
            return Ok(vec![e]);
        }
        bail!("{}: neither a run manifest nor a usage ledger", path.display());
    }
    Ok(read_ledger(path)?)
}

fn cost(cfg: &RunConfig, inputs: &[PathBuf], json: bool) -> Result<Option<Status>> {
    let mut entries = Vec::new();
    for p in inputs {
        entries.extend(usage_of(p)?);
    }
    let report = ledger_report(&entries, &cfg.price_table())?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", cost_table(&report));
    }
    Ok(None)
}

fn gen(cfg: &RunConfig, spec: &SyntheticSpec, nil_proportion: f64) -> Result<Option<Status>> {
    ensure!(
        spec.queries >= 1 && spec.dim >= 1,
        "--queries and --dim must be at least 1"
    );
    ensure!(
        spec.targets >= spec.queries,
        "--targets ({}) must be at least --queries ({})",
        spec.targets,
        spec.queries
    );
    ensure!(
        (0.0..=1.0).contains(&spec.hard_fraction),
        "--hard-fraction must be in [0, 1]"
    );
    let dir = cfg
        .dataset
        .as_deref()
        .context("gen needs --dataset (the directory to create)")?;
    let mut data = gen_synthetic(spec);
    if nil_proportion > 0.0 {
        data.gold = make_nil_extension(&data.queries, &data.gold, nil_proportion, cfg.seed)?;
    }
    let script = gold_aware_script(&data.queries, &data.targets, &data.gold, &templates(cfg)?, None);
    let (nq, nt, nil) = (data.queries.len(), data.targets.len(), data.gold.nil_count());
    Dataset::from(data).write(dir)?;
    script.save(dir.join(dataset::MOCK_SCRIPT))?;
    println!(
        "{nq} queries ({nil} NIL), {nt} targets, dim {} -> {}",
        spec.dim,
        dir.display()
    );
    Ok(None)
}

fn embed(cfg: &RunConfig, side: SideArg) -> Result<Option<Status>> {
    let dir = cfg.dataset()?;
    let client = EmbeddingClient::new(cfg.embedding.clone());
    let todo: &[(Side, &str, &str)] = match side {
        SideArg::Query => &[(Side::Query, dataset::QUERIES, dataset::QUERY_EMBEDDINGS)],
        SideArg::Target => &[(Side::Target, dataset::TARGETS, dataset::TARGET_EMBEDDINGS)],
        SideArg::Both => &[
            (Side::Query, dataset::QUERIES, dataset::QUERY_EMBEDDINGS),
            (Side::Target, dataset::TARGETS, dataset::TARGET_EMBEDDINGS),
        ],
    };
    for &(side, concepts, embeddings) in todo {
        let path = dir.join(concepts);
        ensure!(path.is_file(), "{}: no such file", path.display());
        let (set, _) = load_concepts(&path, side)?;
        let names: Vec<String> = set.iter().map(|c| c.prompt_name().to_string()).collect();
        let vectors = client.fetch_all(&names)?;
        let dim = vectors.first().map_or(0, Vec::len);
        let store = EmbeddingStore::from_rows(side, dim, set.iter().map(|c| c.id.clone()).zip(vectors))?;
        let out = dir.join(embeddings);
        write_embeddings(&out, &store)?;
        println!("{} {side} vectors of dim {dim} -> {}", store.len(), out.display());
    }
    if client.retries() > 0 {
        log::info!("{} retried embedding requests", client.retries());
    }
    Ok(None)
}
