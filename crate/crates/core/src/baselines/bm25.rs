//! Okapi BM25 over whitespace tokens of normalized target names.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::BaselineError;
use crate::concepts::ConceptSet;
use crate::embedding::{Candidate, CandidateSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.5, b: 0.75 }
    }
}

/// Immutable inverted statistics over a target concept set.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    ids: Vec<String>,
    doc_len: Vec<usize>,
    avg_doc_len: f64,
    doc_freq: HashMap<String, usize>,
    term_freq: Vec<HashMap<String, u32>>,
}

impl Bm25Index {
    pub fn build(targets: &ConceptSet) -> Result<Self, BaselineError> {
        Bm25Index::with_params(targets, Bm25Params::default())
    }

    pub fn with_params(targets: &ConceptSet, params: Bm25Params) -> Result<Self, BaselineError> {
        Bm25Index::from_docs(targets.iter().map(|c| (c.id.as_str(), c.norm_name.as_str())), params)
    }

    /// Builds from `(id, text)` pairs; text is split on whitespace.
    pub fn from_docs<'a>(
        docs: impl IntoIterator<Item = (&'a str, &'a str)>,
        params: Bm25Params,
    ) -> Result<Self, BaselineError> {
        let mut ids = Vec::new();
        let mut doc_len = Vec::new();
        let mut term_freq = Vec::new();
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        for (id, text) in docs {
            let mut tf: HashMap<String, u32> = HashMap::new();
            let mut len = 0;
            for tok in text.split_whitespace() {
                *tf.entry(tok.to_string()).or_insert(0) += 1;
                len += 1;
            }
            for term in tf.keys() {
                *doc_freq.entry(term.clone()).or_insert(0) += 1;
            }
            ids.push(id.to_string());
            doc_len.push(len);
            term_freq.push(tf);
        }
        if ids.is_empty() {
            return Err(BaselineError::EmptyTargets);
        }
        let total: usize = doc_len.iter().sum();
        if total == 0 {
            return Err(BaselineError::EmptyIndex);
        }
        Ok(Bm25Index {
            params,
            avg_doc_len: total as f64 / ids.len() as f64,
            ids,
            doc_len,
            doc_freq,
            term_freq,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.ids.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.ids.len() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Scores every document against `query`, in index order. Repeated query
    /// terms count once.
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let terms: Vec<&str> = {
            let mut seen = HashSet::new();
            query.split_whitespace().filter(|t| seen.insert(*t)).collect()
        };
        let weighted: Vec<(&str, f64)> = terms
            .into_iter()
            .filter(|t| self.doc_freq(t) > 0)
            .map(|t| (t, self.idf(t)))
            .collect();
        let Bm25Params { k1, b } = self.params;
        self.term_freq
            .iter()
            .zip(&self.doc_len)
            .map(|(tf, &len)| {
                let norm = k1 * (1.0 - b + b * len as f64 / self.avg_doc_len);
                weighted
                    .iter()
                    .filter_map(|(t, idf)| tf.get(*t).map(|&f| (f64::from(f), idf)))
                    .map(|(f, idf)| idf * f * (k1 + 1.0) / (f + norm))
                    .sum()
            })
            .collect()
    }

    pub fn rank(&self, query_id: &str, query: &str, k: usize) -> Result<CandidateSet, BaselineError> {
        if k == 0 {
            return Err(BaselineError::ZeroK);
        }
        let scored = self
            .ids
            .iter()
            .zip(self.scores(query))
            .map(|(id, s)| Candidate::new(id.clone(), s))
            .collect();
        Ok(CandidateSet::from_scored(query_id, k, scored))
    }
}
