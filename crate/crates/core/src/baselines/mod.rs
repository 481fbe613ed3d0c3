//! Conventional comparison rankers and the similarity-threshold NIL rule.
//!
//! Every ranker returns a [`CandidateSet`] so the evaluation harness treats
//! string scorers, BM25 and embedding retrieval alike. String scorers compare
//! normalized names; distances are reported as similarities in `[0, 1]` with
//! the distance kept in [`Candidate::raw`].

mod bm25;
mod string;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bm25::{Bm25Index, Bm25Params};
pub use string::{
    char_cosine_sim, jaccard_sim, jaro_sim, jaro_winkler_sim, levenshtein_distance, levenshtein_sim, trigrams,
};

use crate::concepts::{Concept, ConceptSet};
use crate::decision::{LinkDecision, Prediction};
use crate::embedding::{top_k, Candidate, CandidateSet, EmbeddingError, EmbeddingStore};

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("target set is empty")]
    EmptyTargets,
    #[error("no target has any token to index")]
    EmptyIndex,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("embedding ranker needs query and target embeddings")]
    NoEmbeddings,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    CharCosine,
    Jaccard,
    Levenshtein,
    JaroWinkler,
    Bm25,
    Embedding,
}

impl ScorerKind {
    pub const ALL: [ScorerKind; 6] = [
        ScorerKind::CharCosine,
        ScorerKind::Jaccard,
        ScorerKind::Levenshtein,
        ScorerKind::JaroWinkler,
        ScorerKind::Bm25,
        ScorerKind::Embedding,
    ];

    /// Row label in accuracy tables.
    pub fn label(self) -> &'static str {
        match self {
            ScorerKind::CharCosine => "Cosine Distance",
            ScorerKind::Jaccard => "Jaccard Distance",
            ScorerKind::Levenshtein => "Levenshtein Distance",
            ScorerKind::JaroWinkler => "Jaro-Winkler Distance",
            ScorerKind::Bm25 => "BM25",
            ScorerKind::Embedding => "Embedding",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScorerKind::CharCosine => "char_cosine",
            ScorerKind::Jaccard => "jaccard",
            ScorerKind::Levenshtein => "levenshtein",
            ScorerKind::JaroWinkler => "jaro_winkler",
            ScorerKind::Bm25 => "bm25",
            ScorerKind::Embedding => "embedding",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        ScorerKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Targets plus the prebuilt structures some rankers need.
pub struct BaselineContext<'a> {
    targets: &'a ConceptSet,
    bm25: Bm25Index,
    embeddings: Option<(&'a EmbeddingStore, &'a EmbeddingStore)>,
}

impl<'a> BaselineContext<'a> {
    pub fn new(targets: &'a ConceptSet) -> Result<Self, BaselineError> {
        BaselineContext::with_bm25(targets, Bm25Params::default())
    }

    pub fn with_bm25(targets: &'a ConceptSet, params: Bm25Params) -> Result<Self, BaselineError> {
        Ok(BaselineContext {
            targets,
            bm25: Bm25Index::with_params(targets, params)?,
            embeddings: None,
        })
    }

    /// Enables [`ScorerKind::Embedding`].
    pub fn with_embeddings(mut self, queries: &'a EmbeddingStore, targets: &'a EmbeddingStore) -> Self {
        self.embeddings = Some((queries, targets));
        self
    }

    pub fn targets(&self) -> &ConceptSet {
        self.targets
    }

    pub fn bm25(&self) -> &Bm25Index {
        &self.bm25
    }
}

fn rank_strings(
    query: &Concept,
    targets: &ConceptSet,
    k: usize,
    score: impl Fn(&str, &str) -> (f64, Option<f64>),
) -> CandidateSet {
    let scored = targets
        .iter()
        .map(|t| {
            let (s, raw) = score(&query.norm_name, &t.norm_name);
            Candidate {
                id: t.id.clone(),
                score: s,
                raw,
            }
        })
        .collect();
    CandidateSet::from_scored(query.id.clone(), k, scored)
}

/// Ranks the context's targets for `query` with one scorer.
pub fn rank_by_scorer(
    kind: ScorerKind,
    query: &Concept,
    ctx: &BaselineContext<'_>,
    k: usize,
) -> Result<CandidateSet, BaselineError> {
    if k == 0 {
        return Err(BaselineError::ZeroK);
    }
    if ctx.targets.is_empty() {
        return Err(BaselineError::EmptyTargets);
    }
    let distance = |s: f64| (s, Some(1.0 - s));
    Ok(match kind {
        ScorerKind::CharCosine => rank_strings(query, ctx.targets, k, |a, b| distance(char_cosine_sim(a, b))),
        ScorerKind::Jaccard => rank_strings(query, ctx.targets, k, |a, b| distance(jaccard_sim(a, b))),
        ScorerKind::JaroWinkler => rank_strings(query, ctx.targets, k, |a, b| distance(jaro_winkler_sim(a, b))),
        ScorerKind::Levenshtein => rank_strings(query, ctx.targets, k, |a, b| {
            (levenshtein_sim(a, b), Some(levenshtein_distance(a, b) as f64))
        }),
        ScorerKind::Bm25 => ctx.bm25.rank(&query.id, &query.norm_name, k)?,
        ScorerKind::Embedding => {
            let (qs, ts) = ctx.embeddings.ok_or(BaselineError::NoEmbeddings)?;
            top_k(&query.id, qs, ts, k)?
        }
    })
}

/// [`rank_by_scorer`] for every query, in parallel, in query order.
pub fn rank_all(
    kind: ScorerKind,
    queries: &ConceptSet,
    ctx: &BaselineContext<'_>,
    k: usize,
) -> Result<Vec<CandidateSet>, BaselineError> {
    queries
        .as_slice()
        .par_iter()
        .map(|q| rank_by_scorer(kind, q, ctx, k))
        .collect()
}

/// Links to the top candidate when its score reaches `theta`, else to NIL.
///
/// ```
/// use conlink::baselines::threshold_nil;
/// use conlink::embedding::{Candidate, CandidateSet};
///
/// let set = CandidateSet::from_scored("q", 10, vec![Candidate::new("t1", 0.4)]);
/// assert!(threshold_nil(&set, 0.5).prediction.unwrap().is_nil());
/// assert_eq!(threshold_nil(&set, 0.3).prediction.unwrap().as_str(), "t1");
/// ```
pub fn threshold_nil(candidates: &CandidateSet, theta: f64) -> LinkDecision {
    let mut d = LinkDecision::new(format!("threshold@{theta}"), candidates.clone());
    d.threshold = Some(theta);
    match candidates.top() {
        Some(top) if top.score >= theta => d.prediction = Some(Prediction::Concept(top.id.clone())),
        Some(_) => d.prediction = Some(Prediction::Nil),
        None => d.failure = Some("empty candidate list".into()),
    }
    d
}
