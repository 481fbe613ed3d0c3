//! Pure decision rules: belief filtering and the final vote.

use std::cmp::Ordering;

use crate::decision::{BeliefVector, FrequencyVector, Prediction};
use crate::embedding::CandidateSet;

/// Outcome of a decision rule before it is packed into a `LinkDecision`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ruling {
    pub prediction: Prediction,
    pub tie_break: bool,
    pub fallback: bool,
}

/// Candidates that go on to the listwise prompt, in candidate order.
///
/// When some belief reaches `tau`, exactly the zero-belief candidates are
/// dropped; otherwise every candidate is kept.
pub fn filter_candidates(beliefs: &BeliefVector, tau: f64) -> Vec<String> {
    let strong = beliefs.max_belief() >= tau;
    beliefs
        .entries
        .iter()
        .filter(|b| !strong || b.belief > 0.0)
        .map(|b| b.candidate_id.clone())
        .collect()
}

/// Orders ids by similarity descending, then id ascending. Unknown ids sort
/// as similarity negative infinity.
fn by_similarity<'a>(candidates: &'a CandidateSet) -> impl Fn(&str, &str) -> Ordering + 'a {
    move |a, b| {
        let s = |id: &str| candidates.score_of(id).unwrap_or(f64::NEG_INFINITY);
        s(b).total_cmp(&s(a)).then_with(|| a.cmp(b))
    }
}

/// Picks the id with the largest `key`, ties by similarity then id. Returns
/// the winner and whether more than one id shared the largest key.
fn argmax<'a>(ids: impl Iterator<Item = (&'a str, f64)>, candidates: &CandidateSet) -> Option<(String, bool)> {
    let order = by_similarity(candidates);
    let mut best: Option<(&str, f64)> = None;
    let mut tied = false;
    for (id, key) in ids {
        match best {
            None => best = Some((id, key)),
            Some((b, bk)) => match key.total_cmp(&bk) {
                Ordering::Greater => {
                    best = Some((id, key));
                    tied = false;
                }
                Ordering::Equal => {
                    tied = true;
                    if order(id, b) == Ordering::Less {
                        best = Some((id, key));
                    }
                }
                Ordering::Less => {}
            },
        }
    }
    best.map(|(id, _)| (id.to_string(), tied))
}

/// The final vote over the listwise samples.
///
/// NIL wins iff its frequency is strictly above `nil_majority`. Otherwise the
/// most voted candidate wins, ties going to the more similar candidate and
/// then to the smaller id. When no sample was parseable the most similar
/// retained candidate is taken and `fallback` is set.
pub fn decide(freqs: &FrequencyVector, candidates: &CandidateSet, nil_majority: f64) -> Ruling {
    if !freqs.is_valid() {
        let order = by_similarity(candidates);
        let best = freqs
            .candidates()
            .filter_map(|o| o.option.concept_id())
            .min_by(|a, b| order(a, b))
            .expect("retained list is never empty");
        return Ruling {
            prediction: Prediction::Concept(best.to_string()),
            tie_break: false,
            fallback: true,
        };
    }
    if freqs.nil_frequency() > nil_majority {
        return Ruling {
            prediction: Prediction::Nil,
            tie_break: false,
            fallback: false,
        };
    }
    let (id, tie_break) = argmax(
        freqs
            .candidates()
            .filter_map(|o| o.option.concept_id().map(|id| (id, o.frequency))),
        candidates,
    )
    .expect("retained list is never empty");
    Ruling {
        prediction: Prediction::Concept(id),
        tie_break,
        fallback: false,
    }
}

/// Pairwise-only mode: the candidate with the highest belief, never NIL.
pub fn decide_by_belief(beliefs: &BeliefVector, candidates: &CandidateSet) -> Ruling {
    let (id, tie_break) = argmax(
        beliefs.entries.iter().map(|b| (b.candidate_id.as_str(), b.belief)),
        candidates,
    )
    .expect("belief vector is never empty");
    Ruling {
        prediction: Prediction::Concept(id),
        tie_break,
        fallback: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Candidate;
    use proptest::prelude::*;

    fn cands(scores: &[(&str, f64)]) -> CandidateSet {
        CandidateSet::from_scored(
            "q",
            scores.len(),
            scores.iter().map(|(id, s)| Candidate::new(*id, *s)).collect(),
        )
    }

    fn beliefs(n: u32, yes: &[(&str, u32)]) -> BeliefVector {
        BeliefVector::from_counts("q", n, yes.iter().copied())
    }

    #[test]
    fn filter_examples() {
        // B = (1.0, 0.0, 0.6, 0.0)
        let b = beliefs(5, &[("c1", 5), ("c2", 0), ("c3", 3), ("c4", 0)]);
        assert_eq!(filter_candidates(&b, 0.8), ["c1", "c3"]);
        // B = (0.6, 0.4, 0.0, 0.2)
        let b = beliefs(5, &[("c1", 3), ("c2", 2), ("c3", 0), ("c4", 1)]);
        assert_eq!(filter_candidates(&b, 0.8), ["c1", "c2", "c3", "c4"]);
        let b = beliefs(5, &[("c1", 0), ("c2", 0)]);
        assert_eq!(filter_candidates(&b, 0.8), ["c1", "c2"]);
        // exactly at tau: 4/5 = 0.8
        let b = beliefs(5, &[("c1", 4), ("c2", 0)]);
        assert_eq!(filter_candidates(&b, 0.8), ["c1"]);
    }

    #[test]
    fn decide_examples() {
        let c = cands(&[("c1", 0.91), ("c2", 0.87)]);
        let retained = vec!["c1".to_string(), "c2".to_string()];
        // f = (c1 0.4, c2 0, NIL 0.6)
        let f = FrequencyVector::from_votes("q", 5, &retained, &[2, 0, 3]);
        assert_eq!(decide(&f, &c, 0.5).prediction, Prediction::Nil);
        // NIL at exactly 0.5 does not win
        let f = FrequencyVector::from_votes("q", 4, &retained, &[2, 0, 2]);
        assert_eq!(decide(&f, &c, 0.5).prediction, Prediction::Concept("c1".into()));
        // frequency tie goes to the more similar candidate
        let f = FrequencyVector::from_votes("q", 5, &retained, &[2, 2, 1]);
        let v = decide(&f, &c, 0.5);
        assert_eq!(v.prediction, Prediction::Concept("c1".into()));
        assert!(v.tie_break);
    }

    #[test]
    fn similarity_tie_goes_to_smaller_id() {
        let c = cands(&[("b", 0.5), ("a", 0.5)]);
        let retained = vec!["a".to_string(), "b".to_string()];
        let f = FrequencyVector::from_votes("q", 4, &retained, &[2, 2, 0]);
        assert_eq!(decide(&f, &c, 0.5).prediction, Prediction::Concept("a".into()));
    }

    #[test]
    fn all_unparseable_falls_back_to_similarity() {
        let c = cands(&[("c1", 0.9), ("c2", 0.95), ("c3", 0.99)]);
        let retained = vec!["c1".to_string(), "c2".to_string()];
        let f = FrequencyVector::from_votes("q", 5, &retained, &[0, 0, 0]);
        let v = decide(&f, &c, 0.5);
        assert_eq!(v.prediction, Prediction::Concept("c2".into()));
        assert!(v.fallback);
    }

    #[test]
    fn belief_argmax() {
        let c = cands(&[("c1", 0.9), ("c2", 0.8), ("c3", 0.7)]);
        let b = beliefs(5, &[("c1", 2), ("c2", 4), ("c3", 4)]);
        let v = decide_by_belief(&b, &c);
        assert_eq!(v.prediction, Prediction::Concept("c2".into()));
        assert!(v.tie_break);
        let b = beliefs(5, &[("c1", 0), ("c2", 0), ("c3", 0)]);
        assert_eq!(decide_by_belief(&b, &c).prediction, Prediction::Concept("c1".into()));
    }

    fn belief_case() -> impl Strategy<Value = (u32, Vec<u32>)> {
        (1u32..8).prop_flat_map(|n| (Just(n), prop::collection::vec(0..=n, 1..12)))
    }

    proptest! {
        #[test]
        fn filtering_keeps_an_argmax_and_is_never_empty(
            (n, yes) in belief_case(),
            tau in 0.01f64..=1.0,
        ) {
            let ids: Vec<String> = (0..yes.len()).map(|i| format!("c{i}")).collect();
            let b = BeliefVector::from_counts("q", n, ids.iter().map(String::as_str).zip(yes.iter().copied()));
            let kept = filter_candidates(&b, tau);
            prop_assert!(!kept.is_empty());
            let max = b.max_belief();
            prop_assert!(kept.iter().any(|id| b.belief_of(id) == Some(max)));
            if max >= tau {
                let positive: Vec<_> = b.entries.iter().filter(|e| e.belief > 0.0).map(|e| e.candidate_id.clone()).collect();
                prop_assert_eq!(kept, positive);
            } else {
                prop_assert_eq!(kept, ids);
            }
        }

        #[test]
        fn decision_ignores_similarity_scale(
            votes in prop::collection::vec(0u32..4, 2..8),
            scores in prop::collection::vec(0.0f64..1.0, 7),
            factor in 0.01f64..100.0,
        ) {
            let k = votes.len() - 1;
            let ids: Vec<String> = (0..k).map(|i| format!("c{i}")).collect();
            let mk = |f: f64| CandidateSet::from_scored(
                "q", k,
                ids.iter().zip(&scores).map(|(id, s)| Candidate::new(id.clone(), s * f)).collect(),
            );
            let freqs = FrequencyVector::from_votes("q", 10, &ids, &votes);
            prop_assert_eq!(decide(&freqs, &mk(1.0), 0.5), decide(&freqs, &mk(factor), 0.5));
        }

        #[test]
        fn more_nil_votes_keep_nil(
            votes in prop::collection::vec(0u32..5, 2..8),
            extra in 1u32..5,
            majority in 0.0f64..1.0,
        ) {
            let k = votes.len() - 1;
            let ids: Vec<String> = (0..k).map(|i| format!("c{i}")).collect();
            let c = CandidateSet::from_scored(
                "q", k,
                ids.iter().enumerate().map(|(i, id)| Candidate::new(id.clone(), 1.0 - i as f64 / 10.0)).collect(),
            );
            let before = decide(&FrequencyVector::from_votes("q", 10, &ids, &votes), &c, majority);
            let mut more = votes.clone();
            *more.last_mut().unwrap() += extra;
            let after = decide(&FrequencyVector::from_votes("q", 10, &ids, &more), &c, majority);
            if before.prediction.is_nil() {
                prop_assert!(after.prediction.is_nil());
            }
        }
    }
}
