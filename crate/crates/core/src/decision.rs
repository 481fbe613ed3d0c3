//! Link predictions and the provenance recorded with them.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::concepts::NIL_ID;
use crate::embedding::CandidateSet;
use crate::llm::Stage;

/// A target concept id, or the NIL entity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Prediction {
    Concept(String),
    Nil,
}

impl Prediction {
    pub fn is_nil(&self) -> bool {
        matches!(self, Prediction::Nil)
    }

    pub fn concept_id(&self) -> Option<&str> {
        match self {
            Prediction::Concept(id) => Some(id),
            Prediction::Nil => None,
        }
    }

    /// Parses a gold or decision field; the literal `NIL` maps to [`Prediction::Nil`].
    pub fn parse(s: &str) -> Self {
        if s == NIL_ID {
            Prediction::Nil
        } else {
            Prediction::Concept(s.to_string())
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Prediction::Concept(id) => id,
            Prediction::Nil => NIL_ID,
        }
    }
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Prediction {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Prediction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Prediction::parse(&s))
    }
}

/// Stage-1 outcome for one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub candidate_id: String,
    pub yes_count: u32,
    pub belief: f64,
}

/// Share of "yes" verdicts over `n` pairwise prompts, per candidate, in
/// candidate order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefVector {
    pub query_id: String,
    pub n: u32,
    pub entries: Vec<Belief>,
}

impl BeliefVector {
    /// Builds the vector from yes counts; `belief = yes / n`.
    pub fn from_counts<'a>(
        query_id: impl Into<String>,
        n: u32,
        counts: impl IntoIterator<Item = (&'a str, u32)>,
    ) -> Self {
        assert!(n > 0, "n must be positive");
        let entries = counts
            .into_iter()
            .map(|(id, yes)| {
                assert!(yes <= n, "yes count {yes} exceeds n = {n}");
                Belief {
                    candidate_id: id.to_string(),
                    yes_count: yes,
                    belief: f64::from(yes) / f64::from(n),
                }
            })
            .collect();
        BeliefVector {
            query_id: query_id.into(),
            n,
            entries,
        }
    }

    pub fn max_belief(&self) -> f64 {
        self.entries.iter().map(|b| b.belief).fold(0.0, f64::max)
    }

    pub fn belief_of(&self, id: &str) -> Option<f64> {
        self.entries.iter().find(|b| b.candidate_id == id).map(|b| b.belief)
    }
}

/// Votes for one stage-2 option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionFrequency {
    pub option: Prediction,
    pub votes: u32,
    pub frequency: f64,
}

/// Stage-2 vote distribution over the retained candidates plus NIL.
///
/// Frequencies are votes over `valid_samples`, the number of parseable
/// samples; they sum to one whenever `valid_samples > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyVector {
    pub query_id: String,
    pub n: u32,
    pub valid_samples: u32,
    /// Retained candidates in presentation order, then NIL.
    pub options: Vec<OptionFrequency>,
}

impl FrequencyVector {
    /// `votes` holds one count per retained candidate (same order) followed
    /// by the NIL count.
    pub fn from_votes(query_id: impl Into<String>, n: u32, retained: &[String], votes: &[u32]) -> Self {
        assert_eq!(votes.len(), retained.len() + 1, "one vote slot per option");
        let valid: u32 = votes.iter().sum();
        let freq = |v: u32| {
            if valid == 0 {
                0.0
            } else {
                f64::from(v) / f64::from(valid)
            }
        };
        let options = retained
            .iter()
            .map(|id| Prediction::Concept(id.clone()))
            .chain(std::iter::once(Prediction::Nil))
            .zip(votes)
            .map(|(option, &v)| OptionFrequency {
                option,
                votes: v,
                frequency: freq(v),
            })
            .collect();
        FrequencyVector {
            query_id: query_id.into(),
            n,
            valid_samples: valid,
            options,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.valid_samples > 0
    }

    pub fn nil_frequency(&self) -> f64 {
        self.options
            .iter()
            .find(|o| o.option.is_nil())
            .map_or(0.0, |o| o.frequency)
    }

    pub fn frequency_of(&self, id: &str) -> f64 {
        self.options
            .iter()
            .find(|o| o.option.concept_id() == Some(id))
            .map_or(0.0, |o| o.frequency)
    }

    pub fn candidates(&self) -> impl Iterator<Item = &OptionFrequency> {
        self.options.iter().filter(|o| !o.option.is_nil())
    }
}

/// Pointer to one LLM exchange behind a decision. The full text lives in the
/// response cache under `digest`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRef {
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_id: Option<String>,
    pub sample_index: u32,
    pub digest: String,
    /// Parsed answer: `yes`, `no`, a 1-based index, `NIL` or `unparseable`.
    pub parsed: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub reask: bool,
}

/// The final link for one query with everything that led to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkDecision {
    pub query_id: String,
    pub method: String,
    /// `None` only when the query failed.
    pub prediction: Option<Prediction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub candidates: CandidateSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beliefs: Option<BeliefVector>,
    #[serde(default)]
    pub retained: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequencies: Option<FrequencyVector>,
    /// The winner shared the top frequency (or belief) with another option.
    #[serde(default)]
    pub tie_break: bool,
    /// Every stage-2 sample was unparseable; the most similar retained
    /// candidate was taken instead.
    #[serde(default)]
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transcripts: Vec<TranscriptRef>,
}

impl LinkDecision {
    /// A decision with only retrieval provenance filled in.
    pub fn new(method: impl Into<String>, candidates: CandidateSet) -> Self {
        LinkDecision {
            query_id: candidates.query_id.clone(),
            method: method.into(),
            prediction: None,
            failure: None,
            candidates,
            beliefs: None,
            retained: Vec::new(),
            frequencies: None,
            tie_break: false,
            fallback: false,
            threshold: None,
            transcripts: Vec::new(),
        }
    }

    /// Top-1 of the candidate list, as used by plain rankers.
    pub fn top1(method: impl Into<String>, candidates: CandidateSet) -> Self {
        let mut d = LinkDecision::new(method, candidates);
        d.prediction = d.candidates.top().map(|c| Prediction::Concept(c.id.clone()));
        if d.prediction.is_none() {
            d.failure = Some("empty candidate list".into());
        }
        d
    }

    pub fn is_failed(&self) -> bool {
        self.failure.is_some()
    }
}
