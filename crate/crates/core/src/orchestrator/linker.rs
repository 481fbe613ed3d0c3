//! Per-query pipeline execution and batch runs.

use std::fs;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rules::{decide, decide_by_belief, filter_candidates};
use super::{ConfigError, Mode, PipelineConfig};
use crate::concepts::{Concept, ConceptSet};
use crate::decision::{BeliefVector, FrequencyVector, LinkDecision, TranscriptRef};
use crate::embedding::{top_k, CandidateSet, EmbeddingStore};
use crate::llm::{
    parse_stage1, parse_stage2, ChatRequest, ClientStats, Completion, LedgerEntry, LlmClient, LlmError,
    PromptTemplates, Selection, Stage, UsageLedger, Verdict,
};

/// Runs the pipeline against loaded concept and embedding stores.
pub struct Linker<'a> {
    config: PipelineConfig,
    templates: PromptTemplates,
    client: Option<&'a LlmClient>,
    targets: &'a ConceptSet,
    query_store: &'a EmbeddingStore,
    target_store: &'a EmbeddingStore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub query_id: String,
    pub message: String,
}

/// Summary of a batch run. Holds no timestamps so identical runs produce
/// identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub config: PipelineConfig,
    pub queries: usize,
    pub failures: Vec<Failure>,
    /// Token usage summed per stage and model.
    pub usage: Vec<LedgerEntry>,
    pub provider_calls: u64,
    pub cache_hits: u64,
    pub retries: u64,
}

impl RunManifest {
    pub fn write(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text)
    }

    pub fn read(path: impl AsRef<Path>) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    /// One decision per query, in query order.
    pub decisions: Vec<LinkDecision>,
    /// Every uncached provider call, grouped by query in query order.
    pub ledger: Vec<LedgerEntry>,
    pub manifest: RunManifest,
}

impl<'a> Linker<'a> {
    pub fn new(
        config: PipelineConfig,
        targets: &'a ConceptSet,
        query_store: &'a EmbeddingStore,
        target_store: &'a EmbeddingStore,
    ) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Linker {
            config,
            templates: PromptTemplates::default(),
            client: None,
            targets,
            query_store,
            target_store,
        })
    }

    pub fn with_client(mut self, client: &'a LlmClient) -> Self {
        self.client = Some(client);
        self
    }

    pub fn with_templates(mut self, templates: PromptTemplates) -> Self {
        self.templates = templates;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn templates(&self) -> &PromptTemplates {
        &self.templates
    }

    fn target_name<'s>(&'s self, id: &'s str) -> &'s str {
        self.targets.get(id).map_or(id, Concept::prompt_name)
    }

    fn ask(
        &self,
        stage: Stage,
        user_text: String,
        sample_index: u32,
        query_id: &str,
        ledger: &UsageLedger,
    ) -> Result<Completion, LlmError> {
        let client = self
            .client
            .ok_or_else(|| LlmError::Script("no language model client configured".into()))?;
        let req = ChatRequest {
            model: self.config.model.clone(),
            system_text: self.templates.system.clone(),
            user_text,
            temperature: self.config.temperature,
            sample_index,
            stage,
        };
        let c = client.complete(&req)?;
        if !c.from_cache {
            ledger.record(LedgerEntry {
                stage: stage.as_str().to_string(),
                model: req.model,
                prompt_tokens: c.response.prompt_tokens,
                completion_tokens: c.response.completion_tokens,
                calls: 1,
                query_id: Some(query_id.to_string()),
            });
        }
        Ok(c)
    }

    /// Asks the pairwise question `n` times per candidate and counts "yes".
    /// An unparseable reply is asked again once with a stricter suffix and
    /// then counts as "no".
    pub fn stage1_beliefs(
        &self,
        query: &Concept,
        candidates: &CandidateSet,
        ledger: &UsageLedger,
        transcripts: &mut Vec<TranscriptRef>,
    ) -> Result<BeliefVector, LlmError> {
        let mut counts = Vec::with_capacity(candidates.len());
        for cand in &candidates.entries {
            let text = self
                .templates
                .render_stage1(query.prompt_name(), self.target_name(&cand.id));
            let mut yes = 0;
            for i in 0..self.config.n {
                let mut c = self.ask(Stage::Stage1, text.clone(), i, &query.id, ledger)?;
                let mut verdict = parse_stage1(&c.response.text);
                let mut reask = false;
                if verdict == Verdict::Unparseable {
                    transcripts.push(TranscriptRef {
                        stage: Stage::Stage1,
                        candidate_id: Some(cand.id.clone()),
                        sample_index: i,
                        digest: c.digest,
                        parsed: verdict.as_str().into(),
                        reask: false,
                    });
                    c = self.ask(Stage::Stage1, self.templates.reask(&text), i, &query.id, ledger)?;
                    verdict = parse_stage1(&c.response.text);
                    reask = true;
                }
                if verdict == Verdict::Yes {
                    yes += 1;
                }
                transcripts.push(TranscriptRef {
                    stage: Stage::Stage1,
                    candidate_id: Some(cand.id.clone()),
                    sample_index: i,
                    digest: c.digest,
                    parsed: verdict.as_str().into(),
                    reask,
                });
            }
            counts.push((cand.id.as_str(), yes));
        }
        Ok(BeliefVector::from_counts(&query.id, self.config.n, counts))
    }

    /// Asks the listwise question `n` times over `retained` (numbered from 1
    /// in the given order) and tallies the choices. A sample still
    /// unparseable after one re-ask is left out of the tally.
    pub fn stage2_frequencies(
        &self,
        query: &Concept,
        retained: &[String],
        ledger: &UsageLedger,
        transcripts: &mut Vec<TranscriptRef>,
    ) -> Result<FrequencyVector, LlmError> {
        let names: Vec<&str> = retained.iter().map(|id| self.target_name(id)).collect();
        let text = self.templates.render_stage2(query.prompt_name(), &names);
        let k1 = retained.len();
        let mut votes = vec![0u32; k1 + 1];
        for i in 0..self.config.n {
            let mut c = self.ask(Stage::Stage2, text.clone(), i, &query.id, ledger)?;
            let mut sel = parse_stage2(&c.response.text, k1);
            let mut reask = false;
            if sel == Selection::Unparseable {
                transcripts.push(TranscriptRef {
                    stage: Stage::Stage2,
                    candidate_id: None,
                    sample_index: i,
                    digest: c.digest,
                    parsed: sel.label(),
                    reask: false,
                });
                c = self.ask(Stage::Stage2, self.templates.reask(&text), i, &query.id, ledger)?;
                sel = parse_stage2(&c.response.text, k1);
                reask = true;
            }
            match sel {
                Selection::Candidate(j) => votes[j - 1] += 1,
                Selection::Nil => votes[k1] += 1,
                Selection::Unparseable => {}
            }
            transcripts.push(TranscriptRef {
                stage: Stage::Stage2,
                candidate_id: None,
                sample_index: i,
                digest: c.digest,
                parsed: sel.label(),
                reask,
            });
        }
        Ok(FrequencyVector::from_votes(&query.id, self.config.n, retained, &votes))
    }

    /// Links one query. Failures are recorded on the decision, never raised.
    pub fn link_one(&self, query: &Concept, ledger: &UsageLedger) -> LinkDecision {
        let mode = self.config.mode;
        let candidates = match top_k(&query.id, self.query_store, self.target_store, self.config.k) {
            Ok(c) => c,
            Err(e) => {
                let mut d = LinkDecision::new(
                    mode.label(),
                    CandidateSet::from_scored(&query.id, self.config.k, vec![]),
                );
                d.failure = Some(format!("retrieval: {e}"));
                return d;
            }
        };
        if mode == Mode::NoLlm {
            return LinkDecision::top1(mode.label(), candidates);
        }
        let mut d = LinkDecision::new(mode.label(), candidates);
        if let Err(e) = self.run_prompts(query, &mut d, ledger) {
            d.prediction = None;
            d.failure = Some(e.to_string());
        }
        d
    }

    fn run_prompts(&self, query: &Concept, d: &mut LinkDecision, ledger: &UsageLedger) -> Result<(), LlmError> {
        let mode = self.config.mode;
        let mut transcripts = Vec::new();
        let result = (|| {
            if mode.uses_stage1() {
                let beliefs = self.stage1_beliefs(query, &d.candidates, ledger, &mut transcripts)?;
                d.retained = filter_candidates(&beliefs, self.config.tau);
                if mode == Mode::Stage1Only {
                    let r = decide_by_belief(&beliefs, &d.candidates);
                    d.prediction = Some(r.prediction);
                    d.tie_break = r.tie_break;
                }
                d.beliefs = Some(beliefs);
            } else {
                d.retained = d.candidates.ids().map(str::to_string).collect();
            }
            if mode.uses_stage2() {
                let freqs = self.stage2_frequencies(query, &d.retained, ledger, &mut transcripts)?;
                let r = decide(&freqs, &d.candidates, self.config.nil_majority);
                d.prediction = Some(r.prediction);
                d.tie_break = r.tie_break;
                d.fallback = r.fallback;
                d.frequencies = Some(freqs);
            }
            Ok(())
        })();
        d.transcripts = transcripts;
        result
    }

    /// Links every query using `jobs` worker threads. Output order follows
    /// query order whatever the completion order.
    pub fn link_batch(&self, queries: &ConceptSet, jobs: usize) -> BatchOutput {
        let before = self.client.map(LlmClient::stats).unwrap_or_default();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .expect("thread pool");
        let per_query: Vec<(LinkDecision, Vec<LedgerEntry>)> = pool.install(|| {
            queries
                .as_slice()
                .par_iter()
                .map(|q| {
                    let ledger = UsageLedger::new();
                    let d = self.link_one(q, &ledger);
                    (d, ledger.take())
                })
                .collect()
        });
        let delta = self.client.map(LlmClient::stats).unwrap_or_default().since(before);

        let mut decisions = Vec::with_capacity(per_query.len());
        let mut ledger = Vec::new();
        for (d, entries) in per_query {
            decisions.push(d);
            ledger.extend(entries);
        }
        let failures = decisions
            .iter()
            .filter_map(|d| {
                d.failure.as_ref().map(|m| Failure {
                    query_id: d.query_id.clone(),
                    message: m.clone(),
                })
            })
            .collect();
        let manifest = RunManifest {
            config_digest: self.config.digest(),
            config: self.config.clone(),
            queries: decisions.len(),
            failures,
            usage: UsageLedger::from_entries(ledger.clone()).aggregate(),
            provider_calls: delta.provider_calls,
            cache_hits: delta.cache_hits,
            retries: delta.retries,
        };
        BatchOutput {
            decisions,
            ledger,
            manifest,
        }
    }
}

impl ClientStats {
    fn since(self, earlier: ClientStats) -> ClientStats {
        ClientStats {
            provider_calls: self.provider_calls - earlier.provider_calls,
            cache_hits: self.cache_hits - earlier.cache_hits,
            retries: self.retries - earlier.retries,
        }
    }
}

/// Writes one JSON object per line.
pub fn write_decisions(path: impl AsRef<Path>, decisions: &[LinkDecision]) -> io::Result<()> {
    let mut out = String::new();
    for d in decisions {
        out.push_str(&serde_json::to_string(d).expect("decision serializes"));
        out.push('\n');
    }
    fs::write(path, out)
}

pub fn read_decisions(path: impl AsRef<Path>) -> io::Result<Vec<LinkDecision>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::Side;
    use crate::decision::Prediction;
    use crate::llm::{MockProvider, MockReply, MockRule, MockScript};

    struct Fixture {
        queries: ConceptSet,
        targets: ConceptSet,
        qs: EmbeddingStore,
        ts: EmbeddingStore,
    }

    fn fixture() -> Fixture {
        let queries = ConceptSet::from_pairs(Side::Query, [("q1", "Low potassium")]).unwrap();
        let targets = ConceptSet::from_pairs(
            Side::Target,
            [("t1", "Hypokalemia"), ("t2", "Hyperkalemia"), ("t3", "Hyponatremia")],
        )
        .unwrap();
        let qs = EmbeddingStore::from_rows(Side::Query, 2, [("q1", vec![1.0, 0.0])]).unwrap();
        let ts = EmbeddingStore::from_rows(
            Side::Target,
            2,
            [("t1", vec![1.0, 0.2]), ("t2", vec![1.0, 0.1]), ("t3", vec![1.0, 0.5])],
        )
        .unwrap();
        Fixture {
            queries,
            targets,
            qs,
            ts,
        }
    }

    fn run(f: &Fixture, script: MockScript, mode: Mode) -> (LinkDecision, Vec<LedgerEntry>) {
        let client = LlmClient::uncached(MockProvider::new(script).unwrap());
        let cfg = PipelineConfig {
            mode,
            ..Default::default()
        };
        let linker = Linker::new(cfg, &f.targets, &f.qs, &f.ts).unwrap().with_client(&client);
        let ledger = UsageLedger::new();
        let d = linker.link_one(f.queries.get("q1").unwrap(), &ledger);
        (d, ledger.take())
    }

    fn gold_script(gold_name: &str) -> MockScript {
        MockScript {
            rules: vec![
                MockRule {
                    stage: Some(Stage::Stage1),
                    lines: vec![format!("Candidate concept: {gold_name}")],
                    replies: vec![MockReply::text("Answer: yes")],
                    ..Default::default()
                },
                MockRule {
                    stage: Some(Stage::Stage2),
                    replies: vec![MockReply::select(gold_name)],
                    ..Default::default()
                },
            ],
            ..Default::default()
        }
    }

    #[test]
    fn gold_aware_mock_links_gold() {
        let f = fixture();
        let (d, ledger) = run(&f, gold_script("hypokalemia"), Mode::TwoStage);
        assert_eq!(d.prediction, Some(Prediction::Concept("t1".into())));
        let b = d.beliefs.as_ref().unwrap();
        assert_eq!(b.belief_of("t1"), Some(1.0));
        assert_eq!(b.belief_of("t2"), Some(0.0));
        assert_eq!(d.retained, ["t1"]);
        // 3 candidates x 5 pairwise + 5 listwise
        assert_eq!(ledger.len(), 20);
        assert_eq!(d.transcripts.len(), 20);
    }

    #[test]
    fn always_no_and_nil_predicts_nil() {
        let f = fixture();
        let (d, _) = run(&f, MockScript::default(), Mode::TwoStage);
        assert_eq!(d.prediction, Some(Prediction::Nil));
        // all-zero beliefs keep every candidate
        assert_eq!(d.retained.len(), 3);
        assert_eq!(d.frequencies.unwrap().nil_frequency(), 1.0);
    }

    #[test]
    fn always_yes_gives_full_belief() {
        let f = fixture();
        let mut script = MockScript::default();
        script.defaults.stage1 = vec![MockReply::text("Answer: yes")];
        let (d, _) = run(&f, script, Mode::Stage1Only);
        assert!(d.beliefs.unwrap().entries.iter().all(|b| b.belief == 1.0));
        // all tied: the most similar candidate wins
        assert_eq!(d.prediction, Some(Prediction::Concept("t2".into())));
        assert!(d.tie_break);
        assert!(d.frequencies.is_none());
    }

    #[test]
    fn unparseable_samples_are_reasked_then_discarded() {
        let f = fixture();
        let mut script = MockScript::default();
        script.defaults.stage2 = vec![
            MockReply::text("maybe"),
            MockReply::text("Choice: 1"),
            MockReply::text("hmm"),
            MockReply::text("Choice: 1"),
            MockReply::text("Choice: 1"),
        ];
        let (d, ledger) = run(&f, script, Mode::Stage2Only);
        let fr = d.frequencies.unwrap();
        assert_eq!(fr.valid_samples, 3);
        assert_eq!(fr.frequency_of("t2"), 1.0);
        assert_eq!(d.prediction, Some(Prediction::Concept("t2".into())));
        // 5 samples + 2 re-asks
        assert_eq!(ledger.len(), 7);
        assert_eq!(d.transcripts.iter().filter(|t| t.reask).count(), 2);
    }

    #[test]
    fn all_unparseable_falls_back() {
        let f = fixture();
        let mut script = MockScript::default();
        script.defaults.stage2 = vec![MockReply::text("no idea")];
        let (d, _) = run(&f, script, Mode::Stage2Only);
        assert!(d.fallback);
        assert_eq!(d.prediction, Some(Prediction::Concept("t2".into())));
    }

    #[test]
    fn provider_failure_is_recorded_not_raised() {
        let f = fixture();
        let mut script = MockScript::default();
        script.defaults.stage1 = vec![MockReply {
            error: Some(crate::llm::MockError::Rejected),
            ..Default::default()
        }];
        let (d, _) = run(&f, script, Mode::TwoStage);
        assert!(d.is_failed());
        assert!(d.prediction.is_none());
        assert_eq!(d.candidates.len(), 3);
    }

    #[test]
    fn no_llm_mode_needs_no_client() {
        let f = fixture();
        let linker = Linker::new(
            PipelineConfig {
                mode: Mode::NoLlm,
                ..Default::default()
            },
            &f.targets,
            &f.qs,
            &f.ts,
        )
        .unwrap();
        let out = linker.link_batch(&f.queries, 2);
        assert_eq!(out.decisions[0].prediction, Some(Prediction::Concept("t2".into())));
        assert!(out.ledger.is_empty());
        assert_eq!(out.manifest.provider_calls, 0);
    }

    #[test]
    fn empty_batch_has_valid_manifest() {
        let f = fixture();
        let linker = Linker::new(PipelineConfig::default(), &f.targets, &f.qs, &f.ts).unwrap();
        let out = linker.link_batch(&ConceptSet::new(Side::Query), 4);
        assert!(out.decisions.is_empty());
        assert_eq!(out.manifest.queries, 0);
        assert!(out.manifest.failures.is_empty());
        assert_eq!(out.manifest.config_digest, PipelineConfig::default().digest());
    }

    #[test]
    fn decisions_round_trip() {
        let f = fixture();
        let (d, _) = run(&f, gold_script("hypokalemia"), Mode::TwoStage);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("decisions.jsonl");
        write_decisions(&path, std::slice::from_ref(&d)).unwrap();
        assert_eq!(read_decisions(&path).unwrap(), vec![d]);
    }
}
