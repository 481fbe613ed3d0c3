//! Dense concept vectors, cosine similarity and exact top-K retrieval.
//!
//! Embeddings are produced elsewhere (a pre-trained biomedical language model
//! that mean-pools its token embeddings) and consumed here either from a TSV
//! file or from a remote provider. Retrieval is an exhaustive scan over every
//! target vector; the result is exact and reproducible.

mod io;
mod remote;

use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concepts::{ConceptSet, Side};

pub use io::{load_embeddings, read_embeddings, write_embeddings};
pub use remote::{fetch_embeddings, EmbeddingClient, EmbeddingClientConfig};

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line 1: malformed header: {0}")]
    Header(String),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: non-finite value in column {column}")]
    NonFinite { line: usize, column: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("no vector for concept `{0}`")]
    Missing(String),
    #[error("duplicate vector for concept `{0}`")]
    Duplicate(String),
    #[error("vector for `{0}` has zero norm")]
    ZeroNorm(String),
    #[error("empty vector")]
    Empty,
    #[error("target store is empty")]
    EmptyTargets,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("embedding provider: {0}")]
    Provider(String),
    #[error("embedding transport: {0}")]
    Transport(String),
    #[error("provider returned {got} vectors for a batch of {expected}")]
    Arity { expected: usize, got: usize },
}

/// Cosine of the angle between `u` and `v`, clamped to `[-1, 1]`.
///
/// ```
/// use conlink::embedding::cosine_similarity;
///
/// assert_eq!(cosine_similarity(&[0.6, 0.8], &[0.6, 0.8]).unwrap(), 1.0);
/// assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
/// assert!(cosine_similarity(&[1.0, 0.0], &[0.0, 0.0]).is_err());
/// ```
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, EmbeddingError> {
    if u.len() != v.len() {
        return Err(EmbeddingError::Dimension {
            expected: u.len(),
            found: v.len(),
        });
    }
    if u.is_empty() {
        return Err(EmbeddingError::Empty);
    }
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 {
        return Err(EmbeddingError::ZeroNorm("u".into()));
    }
    if nv == 0.0 {
        return Err(EmbeddingError::ZeroNorm("v".into()));
    }
    Ok(cosine_with_norms(u, nu, v, nv))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cosine_with_norms(u: &[f64], nu: f64, v: &[f64], nv: f64) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    (dot / (nu * nv)).clamp(-1.0, 1.0)
}

/// One ranked candidate. `score` is the ranking key; `raw` keeps an
/// underlying quantity when the score is derived from one (an edit distance,
/// for instance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<f64>,
}

impl Candidate {
    pub fn new(id: impl Into<String>, score: f64) -> Self {
        Candidate {
            id: id.into(),
            score,
            raw: None,
        }
    }
}

/// Descending score, then ascending id.
pub fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id))
}

/// Top-`k` candidates of one query, best first.
///
/// Entries are sorted by descending score with ties broken by ascending id,
/// hold no duplicate ids, and number `min(k, corpus size)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub query_id: String,
    pub k: usize,
    pub entries: Vec<Candidate>,
}

impl CandidateSet {
    /// Selects and orders the best `k` of `scored`.
    pub fn from_scored(query_id: impl Into<String>, k: usize, mut scored: Vec<Candidate>) -> Self {
        if scored.len() > k && k > 0 {
            scored.select_nth_unstable_by(k - 1, rank_order);
        }
        scored.truncate(k);
        scored.sort_by(rank_order);
        CandidateSet {
            query_id: query_id.into(),
            k,
            entries: scored,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top(&self) -> Option<&Candidate> {
        self.entries.first()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|c| c.id.as_str())
    }

    pub fn score_of(&self, id: &str) -> Option<f64> {
        self.entries.iter().find(|c| c.id == id).map(|c| c.score)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.iter().any(|c| c.id == id)
    }

    /// The first `k` entries, as if retrieved with a smaller `k`.
    pub fn prefix(&self, k: usize) -> CandidateSet {
        CandidateSet {
            query_id: self.query_id.clone(),
            k,
            entries: self.entries.iter().take(k).cloned().collect(),
        }
    }
}

/// Fixed-dimension `f64` vectors keyed by concept id.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    side: Side,
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
    norms: Vec<f64>,
}

impl EmbeddingStore {
    pub fn new(side: Side, dim: usize) -> Self {
        EmbeddingStore {
            side,
            dim,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
            norms: Vec::new(),
        }
    }

    /// Adds a vector. Rejects wrong lengths, non-finite entries, zero vectors
    /// and duplicate ids.
    pub fn insert(&mut self, id: impl Into<String>, vector: &[f64]) -> Result<(), EmbeddingError> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(EmbeddingError::Dimension {
                expected: self.dim,
                found: vector.len(),
            });
        }
        if let Some(column) = vector.iter().position(|x| !x.is_finite()) {
            return Err(EmbeddingError::NonFinite { line: 0, column });
        }
        let n = norm(vector);
        if n == 0.0 || !n.is_finite() {
            return Err(EmbeddingError::ZeroNorm(id));
        }
        if self.index.contains_key(&id) {
            return Err(EmbeddingError::Duplicate(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        self.norms.push(n);
        Ok(())
    }

    pub fn from_rows<I, S>(side: Side, dim: usize, rows: I) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut store = EmbeddingStore::new(side, dim);
        for (id, v) in rows {
            store.insert(id, &v)?;
        }
        Ok(store)
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.row(i))
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Checks that every concept of `concepts` has a vector.
    pub fn check_covers(&self, concepts: &ConceptSet) -> Result<(), EmbeddingError> {
        match concepts.iter().find(|c| !self.index.contains_key(&c.id)) {
            Some(c) => Err(EmbeddingError::Missing(c.id.clone())),
            None => Ok(()),
        }
    }

    /// Restricts the store to the ids of `concepts`, in that order.
    pub fn restricted_to(&self, concepts: &ConceptSet) -> Result<EmbeddingStore, EmbeddingError> {
        let mut out = EmbeddingStore::new(self.side, self.dim);
        for c in concepts {
            let v = self
                .vector(&c.id)
                .ok_or_else(|| EmbeddingError::Missing(c.id.clone()))?;
            out.insert(c.id.clone(), v)?;
        }
        Ok(out)
    }

    /// Cosine of `query` against every stored vector, in store order.
    fn scan(&self, query: &[f64], query_norm: f64) -> Vec<Candidate> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let s = cosine_with_norms(query, query_norm, self.row(i), self.norms[i]);
                Candidate::new(id.clone(), s)
            })
            .collect()
    }
}

/// The `k` targets most similar to `query`, by cosine, exact.
///
/// Ties in similarity are broken by ascending target id.
pub fn top_k(
    query: &str,
    query_store: &EmbeddingStore,
    target_store: &EmbeddingStore,
    k: usize,
) -> Result<CandidateSet, EmbeddingError> {
    let v = query_store
        .vector(query)
        .ok_or_else(|| EmbeddingError::Missing(query.to_string()))?;
    top_k_for_vector(query, v, target_store, k)
}

/// As [`top_k`], for a vector that is not in a store.
pub fn top_k_for_vector(
    query_id: &str,
    vector: &[f64],
    target_store: &EmbeddingStore,
    k: usize,
) -> Result<CandidateSet, EmbeddingError> {
    if k == 0 {
        return Err(EmbeddingError::ZeroK);
    }
    if vector.len() != target_store.dim {
        return Err(EmbeddingError::Dimension {
            expected: target_store.dim,
            found: vector.len(),
        });
    }
    if target_store.is_empty() {
        return Err(EmbeddingError::EmptyTargets);
    }
    let n = norm(vector);
    if n == 0.0 || !n.is_finite() {
        return Err(EmbeddingError::ZeroNorm(query_id.to_string()));
    }
    let scored = target_store.scan(vector, n);
    Ok(CandidateSet::from_scored(query_id, k, scored))
}

/// Runs [`top_k`] for every query, in parallel, returning results in query order.
pub fn retrieve_all(
    queries: &ConceptSet,
    query_store: &EmbeddingStore,
    target_store: &EmbeddingStore,
    k: usize,
) -> Result<Vec<CandidateSet>, EmbeddingError> {
    queries
        .as_slice()
        .par_iter()
        .map(|q| top_k(&q.id, query_store, target_store, k))
        .collect()
}
