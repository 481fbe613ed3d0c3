//! Token usage and cost accounting.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::LlmError;

fn one() -> u64 {
    1
}

/// Usage of one provider call, or an aggregate of `calls` calls.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub stage: String,
    pub model: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    #[serde(default = "one")]
    pub calls: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_id: Option<String>,
}

impl LedgerEntry {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// Append-only usage log, safe to share between threads.
#[derive(Debug, Default)]
pub struct UsageLedger {
    entries: Mutex<Vec<LedgerEntry>>,
}

impl UsageLedger {
    pub fn new() -> Self {
        UsageLedger::default()
    }

    pub fn from_entries(entries: Vec<LedgerEntry>) -> Self {
        UsageLedger {
            entries: Mutex::new(entries),
        }
    }

    pub fn record(&self, entry: LedgerEntry) {
        self.entries.lock().unwrap().push(entry);
    }

    pub fn extend(&self, entries: impl IntoIterator<Item = LedgerEntry>) {
        self.entries.lock().unwrap().extend(entries);
    }

    pub fn entries(&self) -> Vec<LedgerEntry> {
        self.entries.lock().unwrap().clone()
    }

    pub fn take(self) -> Vec<LedgerEntry> {
        self.entries.into_inner().unwrap()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per `(stage, model)` sums, in key order.
    pub fn aggregate(&self) -> Vec<LedgerEntry> {
        aggregate(&self.entries.lock().unwrap())
    }
}

pub(crate) fn aggregate(entries: &[LedgerEntry]) -> Vec<LedgerEntry> {
    let mut sums: BTreeMap<(String, String), LedgerEntry> = BTreeMap::new();
    for e in entries {
        let slot = sums
            .entry((e.stage.clone(), e.model.clone()))
            .or_insert_with(|| LedgerEntry {
                stage: e.stage.clone(),
                model: e.model.clone(),
                prompt_tokens: 0,
                completion_tokens: 0,
                calls: 0,
                query_id: None,
            });
        slot.prompt_tokens += e.prompt_tokens;
        slot.completion_tokens += e.completion_tokens;
        slot.calls += e.calls;
    }
    sums.into_values().collect()
}

/// Dollars per token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Price {
    pub prompt: f64,
    pub completion: f64,
}

/// Model name to per-token prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable(pub BTreeMap<String, Price>);

impl Default for PriceTable {
    /// List prices of the GPT-4 family at its 2023 release, per token.
    fn default() -> Self {
        let mut t = BTreeMap::new();
        t.insert(
            "gpt-4".to_string(),
            Price {
                prompt: 3e-5,
                completion: 6e-5,
            },
        );
        t.insert(
            "gpt-4-32k".to_string(),
            Price {
                prompt: 6e-5,
                completion: 1.2e-4,
            },
        );
        t.insert(
            "gpt-4-turbo".to_string(),
            Price {
                prompt: 1e-5,
                completion: 3e-5,
            },
        );
        PriceTable(t)
    }
}

impl PriceTable {
    pub fn get(&self, model: &str) -> Option<Price> {
        self.0.get(model).copied()
    }

    pub fn set(&mut self, model: impl Into<String>, price: Price) {
        self.0.insert(model.into(), price);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCost {
    pub stage: String,
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    /// One row per stage tag, sorted by tag.
    pub stages: Vec<StageCost>,
    pub total: StageCost,
    /// Dollars per token over everything, when any tokens were used.
    pub blended_price: Option<f64>,
}

impl CostReport {
    pub fn stage(&self, tag: &str) -> Option<&StageCost> {
        self.stages.iter().find(|s| s.stage == tag)
    }
}

/// Sums tokens per stage tag and prices them.
///
/// ```
/// use conlink::llm::{ledger_report, LedgerEntry, PriceTable};
///
/// let entries = vec![LedgerEntry {
///     stage: "stage1".into(),
///     model: "gpt-4".into(),
///     prompt_tokens: 1000,
///     completion_tokens: 500,
///     calls: 1,
///     query_id: None,
/// }];
/// let report = ledger_report(&entries, &PriceTable::default()).unwrap();
/// assert!((report.total.cost - 0.06).abs() < 1e-12);
/// ```
pub fn ledger_report(entries: &[LedgerEntry], prices: &PriceTable) -> Result<CostReport, LlmError> {
    let mut stages: BTreeMap<&str, StageCost> = BTreeMap::new();
    for e in entries {
        let price = prices
            .get(&e.model)
            .ok_or_else(|| LlmError::UnknownModel(e.model.clone()))?;
        let row = stages.entry(&e.stage).or_insert_with(|| StageCost {
            stage: e.stage.clone(),
            calls: 0,
            prompt_tokens: 0,
            completion_tokens: 0,
            total_tokens: 0,
            cost: 0.0,
        });
        row.calls += e.calls;
        row.prompt_tokens += e.prompt_tokens;
        row.completion_tokens += e.completion_tokens;
        row.total_tokens += e.total_tokens();
        row.cost += e.prompt_tokens as f64 * price.prompt + e.completion_tokens as f64 * price.completion;
    }
    let stages: Vec<StageCost> = stages.into_values().collect();
    let mut total = StageCost {
        stage: "total".into(),
        calls: 0,
        prompt_tokens: 0,
        completion_tokens: 0,
        total_tokens: 0,
        cost: 0.0,
    };
    for s in &stages {
        total.calls += s.calls;
        total.prompt_tokens += s.prompt_tokens;
        total.completion_tokens += s.completion_tokens;
        total.total_tokens += s.total_tokens;
        total.cost += s.cost;
    }
    let blended_price = (total.total_tokens > 0).then(|| total.cost / total.total_tokens as f64);
    Ok(CostReport {
        stages,
        total,
        blended_price,
    })
}

/// Reads a JSON-lines ledger file.
pub fn read_ledger(path: impl AsRef<Path>) -> Result<Vec<LedgerEntry>, LlmError> {
    let path = path.as_ref();
    let err = |message: String| LlmError::Storage {
        path: path.display().to_string(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| err(format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn write_ledger(path: impl AsRef<Path>, entries: &[LedgerEntry]) -> std::io::Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).expect("entry serializes"));
        out.push('\n');
    }
    fs::write(path, out)
}
