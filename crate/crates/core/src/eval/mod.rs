//! Gold links, benchmark construction helpers and accuracy metrics.

mod report;
mod synthetic;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use report::{
    ablation_table, accuracy_table, cost_table, format_tokens_cost, threshold_sweep, AblationRow, AccuracyRow,
    EvalReport, SweepPoint,
};
pub use synthetic::{gen_synthetic, gold_aware_script, SyntheticData, SyntheticSpec};

use crate::concepts::ConceptSet;
use crate::decision::{LinkDecision, Prediction};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("query `{0}` has more than one gold link")]
    DuplicateGold(String),
    #[error("gold query `{0}` is not in the query set")]
    UnknownQuery(String),
    #[error("gold target `{target}` of query `{query}` is not in the target set")]
    UnknownTarget { query: String, target: String },
    #[error("query `{0}` has more than one decision")]
    DuplicateDecision(String),
    #[error("decisions and gold disagree: {missing} gold queries without a decision (first: {first_missing:?}), {extra} decisions without gold (first: {first_extra:?})")]
    Mismatch {
        missing: usize,
        first_missing: Option<String>,
        extra: usize,
        first_extra: Option<String>,
    },
    #[error("NIL proportion must be in [0, 1), got {0}")]
    Proportion(f64),
    #[error("cannot relabel {wanted} queries as NIL: only {available} linkable")]
    TooFewLinkable { wanted: usize, available: usize },
}

/// Gold target (or NIL) per query, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GoldLinks {
    links: Vec<(String, Prediction)>,
    index: HashMap<String, usize>,
    /// Original targets of queries relabeled NIL by a NIL extension.
    withheld: BTreeMap<String, String>,
}

impl GoldLinks {
    pub fn new() -> Self {
        GoldLinks::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, gold: Prediction) -> Result<(), EvalError> {
        let query_id = query_id.into();
        if self.index.contains_key(&query_id) {
            return Err(EvalError::DuplicateGold(query_id));
        }
        self.index.insert(query_id.clone(), self.links.len());
        self.links.push((query_id, gold));
        Ok(())
    }

    pub fn from_pairs<I, A, B>(pairs: I) -> Result<Self, EvalError>
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: AsRef<str>,
    {
        let mut g = GoldLinks::new();
        for (q, t) in pairs {
            g.insert(q, Prediction::parse(t.as_ref()))?;
        }
        Ok(g)
    }

    pub fn get(&self, query_id: &str) -> Option<&Prediction> {
        self.index.get(query_id).map(|&i| &self.links[i].1)
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Prediction)> {
        self.links.iter().map(|(q, p)| (q.as_str(), p))
    }

    pub fn nil_count(&self) -> usize {
        self.links.iter().filter(|(_, p)| p.is_nil()).count()
    }

    pub fn withheld(&self) -> &BTreeMap<String, String> {
        &self.withheld
    }

    /// Checks every query and non-NIL target against the concept sets.
    pub fn validate(&self, queries: &ConceptSet, targets: &ConceptSet) -> Result<(), EvalError> {
        for (q, p) in self.iter() {
            if !queries.contains(q) {
                return Err(EvalError::UnknownQuery(q.to_string()));
            }
            if let Some(t) = p.concept_id() {
                if !targets.contains(t) {
                    return Err(EvalError::UnknownTarget {
                        query: q.to_string(),
                        target: t.to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Keeps only the links of `queries`, in the order of `queries`.
    pub fn restricted_to(&self, queries: &ConceptSet) -> GoldLinks {
        let mut out = GoldLinks::new();
        for c in queries {
            if let Some(p) = self.get(&c.id) {
                out.insert(c.id.clone(), p.clone()).expect("ids are unique");
                if let Some(t) = self.withheld.get(&c.id) {
                    out.withheld.insert(c.id.clone(), t.clone());
                }
            }
        }
        out
    }

    /// Parses `query_id<TAB>target_id` rows with an optional header line. A
    /// third column records the withheld target of a NIL-relabeled query.
    pub fn read(text: &str) -> Result<Self, EvalError> {
        let mut g = GoldLinks::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || (i == 0 && line.starts_with("query_id\t")) {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |reason: &str| EvalError::Malformed {
                line: i + 1,
                reason: reason.to_string(),
            };
            if !(2..=3).contains(&fields.len()) {
                return Err(bad("expected `query_id<TAB>target_id`"));
            }
            let (q, t) = (fields[0].trim(), fields[1].trim());
            if q.is_empty() || t.is_empty() {
                return Err(bad("empty id"));
            }
            g.insert(q, Prediction::parse(t))?;
            if let Some(w) = fields.get(2).map(|w| w.trim()).filter(|w| !w.is_empty()) {
                g.withheld.insert(q.to_string(), w.to_string());
            }
        }
        Ok(g)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        GoldLinks::read(&text)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("query_id\ttarget_id\n");
        for (q, p) in self.iter() {
            out.push_str(q);
            out.push('\t');
            out.push_str(p.as_str());
            if let Some(w) = self.withheld.get(q) {
                out.push('\t');
                out.push_str(w);
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Correct count and accuracy over a subset of queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetScore {
    pub total: usize,
    pub correct: usize,
    /// `None` when the subset is empty.
    pub accuracy: Option<f64>,
}

impl SubsetScore {
    fn new(total: usize, correct: usize) -> Self {
        SubsetScore {
            total,
            correct,
            accuracy: (total > 0).then(|| correct as f64 / total as f64),
        }
    }
}

/// Top-1 accuracy of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub method: String,
    pub total: usize,
    pub correct: usize,
    pub overall: f64,
    pub linkable: SubsetScore,
    pub nil: SubsetScore,
    pub failed: usize,
    /// Share of queries a perfect reranker could get right from the
    /// retrieved candidates: linkable queries whose gold target was
    /// retrieved plus NIL queries.
    pub retrieval_ceiling: f64,
}

/// Scores decisions against gold. Failed decisions count as wrong. Every
/// gold query needs exactly one decision and vice versa.
pub fn accuracy(decisions: &[LinkDecision], gold: &GoldLinks) -> Result<MethodScore, EvalError> {
    let mut by_id: HashMap<&str, &LinkDecision> = HashMap::with_capacity(decisions.len());
    for d in decisions {
        if by_id.insert(&d.query_id, d).is_some() {
            return Err(EvalError::DuplicateDecision(d.query_id.clone()));
        }
    }
    let missing: Vec<&str> = gold.iter().map(|(q, _)| q).filter(|q| !by_id.contains_key(q)).collect();
    let gold_ids: HashSet<&str> = gold.iter().map(|(q, _)| q).collect();
    let extra: Vec<&str> = decisions
        .iter()
        .map(|d| d.query_id.as_str())
        .filter(|q| !gold_ids.contains(q))
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(EvalError::Mismatch {
            missing: missing.len(),
            first_missing: missing.first().map(|s| s.to_string()),
            extra: extra.len(),
            first_extra: extra.first().map(|s| s.to_string()),
        });
    }

    let (mut lk_total, mut lk_correct, mut nil_total, mut nil_correct) = (0, 0, 0, 0);
    let (mut failed, mut reachable) = (0, 0);
    for (q, g) in gold.iter() {
        let d = by_id[q];
        let right = !d.is_failed() && d.prediction.as_ref() == Some(g);
        failed += usize::from(d.is_failed());
        match g {
            Prediction::Nil => {
                nil_total += 1;
                nil_correct += usize::from(right);
                reachable += 1;
            }
            Prediction::Concept(t) => {
                lk_total += 1;
                lk_correct += usize::from(right);
                reachable += usize::from(d.candidates.contains(t));
            }
        }
    }
    let total = gold.len();
    let correct = lk_correct + nil_correct;
    let method = decisions.first().map(|d| d.method.clone()).unwrap_or_default();
    let rate = |n: usize| if total == 0 { 0.0 } else { n as f64 / total as f64 };
    Ok(MethodScore {
        method,
        total,
        correct,
        overall: rate(correct),
        linkable: SubsetScore::new(lk_total, lk_correct),
        nil: SubsetScore::new(nil_total, nil_correct),
        failed,
        retrieval_ceiling: rate(reachable),
    })
}

/// Drops every query whose normalized name equals some target's normalized
/// name. Empty names never match. Returns the survivors and the number
/// removed.
pub fn remove_exact_matches(queries: &ConceptSet, targets: &ConceptSet) -> (ConceptSet, usize) {
    let names: HashSet<&str> = targets
        .iter()
        .map(|t| t.norm_name.as_str())
        .filter(|n| !n.is_empty())
        .collect();
    let kept = queries.filtered(|q| q.norm_name.is_empty() || !names.contains(q.norm_name.as_str()));
    let removed = queries.len() - kept.len();
    (kept, removed)
}

/// Relabels a seeded random `proportion` of `queries` as NIL.
///
/// `round(proportion * |queries|)` queries are drawn among those with a
/// linkable gold target; their targets are kept as withheld, and the target
/// set is left untouched.
pub fn make_nil_extension(
    queries: &ConceptSet,
    gold: &GoldLinks,
    proportion: f64,
    seed: u64,
) -> Result<GoldLinks, EvalError> {
    if !(0.0..1.0).contains(&proportion) {
        return Err(EvalError::Proportion(proportion));
    }
    let wanted = (proportion * queries.len() as f64).round() as usize;
    let linkable: Vec<&str> = queries
        .iter()
        .map(|q| q.id.as_str())
        .filter(|q| matches!(gold.get(q), Some(Prediction::Concept(_))))
        .collect();
    if wanted > linkable.len() {
        return Err(EvalError::TooFewLinkable {
            wanted,
            available: linkable.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: HashSet<&str> = rand::seq::index::sample(&mut rng, linkable.len(), wanted)
        .into_iter()
        .map(|i| linkable[i])
        .collect();
    let mut out = GoldLinks::new();
    out.withheld = gold.withheld.clone();
    for (q, p) in gold.iter() {
        if chosen.contains(q) {
            out.withheld
                .insert(q.to_string(), p.concept_id().expect("linkable").to_string());
            out.insert(q, Prediction::Nil)?;
        } else {
            out.insert(q, p.clone())?;
        }
    }
    Ok(out)
}
