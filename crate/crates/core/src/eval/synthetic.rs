//! Seeded synthetic linking benchmarks and matching mock scripts.
//!
//! Target names are pseudo-words built from syllables. Each query name is a
//! lexically perturbed copy of its gold target's name (word swaps,
//! reordering, abbreviation, extra qualifiers). Target vectors are random
//! unit vectors; a query vector is its gold vector plus noise, shrunk until
//! the gold target beats every other target by `margin` in cosine.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::GoldLinks;
use crate::concepts::{Concept, ConceptSet, Side};
use crate::decision::Prediction;
use crate::embedding::EmbeddingStore;
use crate::llm::{MockReply, MockRule, MockScript, PromptTemplates, Stage, UsageModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub queries: usize,
    pub targets: usize,
    pub dim: usize,
    /// Required cosine lead of the gold target over the runner-up. When not
    /// positive, query noise is left unconstrained.
    pub margin: f64,
    /// Norm of the noise added to the gold vector before any shrinking.
    pub noise: f64,
    /// Share of queries whose vector is unrelated to their gold target.
    pub hard_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// Sized like a 1,493-query, 18,697-target benchmark.
    fn default() -> Self {
        SyntheticSpec {
            queries: 1493,
            targets: 18697,
            dim: 64,
            margin: 0.05,
            noise: 0.5,
            hard_fraction: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub queries: ConceptSet,
    pub targets: ConceptSet,
    pub gold: GoldLinks,
    pub query_vectors: EmbeddingStore,
    pub target_vectors: EmbeddingStore,
}

const SYLLABLES: [&str; 30] = [
    "ka", "lo", "mi", "nu", "pe", "ra", "si", "to", "va", "ze", "bri", "dro", "fen", "gal", "hex", "jun", "kor", "lum",
    "mor", "nat", "ost", "pra", "qui", "rel", "sta", "tor", "ung", "vel", "wex", "yor",
];

const QUALIFIERS: [&str; 6] = ["acute", "chronic", "unspecified", "primary", "late", "other"];

fn word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..=3);
    (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect()
}

fn target_name(rng: &mut ChaCha8Rng) -> Vec<String> {
    let n = rng.random_range(1..=3);
    (0..n).map(|_| word(rng)).collect()
}

/// One random perturbation of a tokenized name.
fn perturb(tokens: &mut Vec<String>, rng: &mut ChaCha8Rng) {
    match rng.random_range(0..4) {
        0 => {
            let i = rng.random_range(0..tokens.len());
            tokens[i] = word(rng);
        }
        1 if tokens.len() > 1 => {
            let r = rng.random_range(1..tokens.len());
            tokens.rotate_left(r);
        }
        2 => {
            let i = rng.random_range(0..tokens.len());
            let short: String = tokens[i].chars().take(3).collect();
            if short != tokens[i] {
                tokens[i] = short;
            } else {
                tokens.push(QUALIFIERS.choose(rng).unwrap().to_string());
            }
        }
        _ => {
            let q = QUALIFIERS.choose(rng).unwrap().to_string();
            if rng.random_bool(0.5) {
                tokens.insert(0, q);
            } else {
                tokens.push(q);
            }
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine lead of target `gold` over the best other target.
fn lead(q: &[f64], gold: usize, targets: &[Vec<f64>]) -> f64 {
    let qn = dot(q, q).sqrt();
    let mut best_other = f64::NEG_INFINITY;
    let mut g = 0.0;
    for (i, t) in targets.iter().enumerate() {
        let c = dot(q, t) / qn;
        if i == gold {
            g = c;
        } else if c > best_other {
            best_other = c;
        }
    }
    g - best_other
}

/// Builds a synthetic benchmark. Everything is a function of `spec`.
///
/// # Panics
/// When `queries`, `targets` or `dim` is zero.
pub fn gen_synthetic(spec: &SyntheticSpec) -> SyntheticData {
    assert!(
        spec.queries >= 1 && spec.targets >= 1 && spec.dim >= 1,
        "sizes must be positive"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut seen = HashSet::new();
    let mut t_tokens = Vec::with_capacity(spec.targets);
    while t_tokens.len() < spec.targets {
        let name = target_name(&mut rng);
        if seen.insert(name.join(" ")) {
            t_tokens.push(name);
        }
    }
    let id_width = |n: usize| n.to_string().len();
    let (tw, qw) = (id_width(spec.targets), id_width(spec.queries));
    let target_ids: Vec<String> = (0..spec.targets).map(|i| format!("T{i:0tw$}")).collect();

    let gold_idx: Vec<usize> = if spec.queries <= spec.targets {
        rand::seq::index::sample(&mut rng, spec.targets, spec.queries).into_vec()
    } else {
        (0..spec.queries).map(|_| rng.random_range(0..spec.targets)).collect()
    };

    let mut q_names = Vec::with_capacity(spec.queries);
    for &g in &gold_idx {
        let mut tokens = t_tokens[g].clone();
        perturb(&mut tokens, &mut rng);
        while seen.contains(&tokens.join(" ")) {
            perturb(&mut tokens, &mut rng);
        }
        let name = tokens.join(" ");
        seen.insert(name.clone());
        q_names.push(name);
    }

    let t_vecs: Vec<Vec<f64>> = (0..spec.targets).map(|_| unit(gaussian(&mut rng, spec.dim))).collect();
    let hard = (spec.hard_fraction.clamp(0.0, 1.0) * spec.queries as f64).round() as usize;
    let hard_set: HashSet<usize> = rand::seq::index::sample(&mut rng, spec.queries, hard)
        .into_iter()
        .collect();
    let mut q_vecs = Vec::with_capacity(spec.queries);
    for (qi, &g) in gold_idx.iter().enumerate() {
        let noise = gaussian(&mut rng, spec.dim);
        if hard_set.contains(&qi) {
            q_vecs.push(noise);
            continue;
        }
        let scale = spec.noise / (spec.dim as f64).sqrt();
        let mut sigma = 1.0;
        let mut v: Vec<f64> = t_vecs[g].iter().zip(&noise).map(|(t, e)| t + scale * e).collect();
        if spec.margin > 0.0 {
            for _ in 0..60 {
                if lead(&v, g, &t_vecs) >= spec.margin {
                    break;
                }
                sigma /= 2.0;
                v = t_vecs[g]
                    .iter()
                    .zip(&noise)
                    .map(|(t, e)| t + sigma * scale * e)
                    .collect();
            }
        }
        q_vecs.push(v);
    }

    let targets = ConceptSet::from_pairs(
        Side::Target,
        target_ids
            .iter()
            .zip(&t_tokens)
            .map(|(id, t)| (id.clone(), t.join(" "))),
    )
    .expect("generated ids are unique");
    let query_ids: Vec<String> = (0..spec.queries).map(|i| format!("Q{i:0qw$}")).collect();
    let queries =
        ConceptSet::from_pairs(Side::Query, query_ids.iter().cloned().zip(q_names)).expect("generated ids are unique");
    let mut gold = GoldLinks::new();
    for (q, &g) in query_ids.iter().zip(&gold_idx) {
        gold.insert(q.clone(), Prediction::Concept(target_ids[g].clone()))
            .expect("ids are unique");
    }
    let query_vectors = EmbeddingStore::from_rows(Side::Query, spec.dim, query_ids.iter().cloned().zip(q_vecs))
        .expect("generated vectors are finite and non-zero");
    let target_vectors = EmbeddingStore::from_rows(Side::Target, spec.dim, target_ids.into_iter().zip(t_vecs))
        .expect("generated vectors are finite and non-zero");
    SyntheticData {
        queries,
        targets,
        gold,
        query_vectors,
        target_vectors,
    }
}

/// A mock script that answers like an oracle that knows `gold`: "yes" to the
/// pairwise prompt exactly for the gold target, and in the listwise prompt
/// picks the gold target when listed and NIL otherwise. Queries with NIL gold
/// fall through to the defaults ("no" and NIL).
pub fn gold_aware_script(
    queries: &ConceptSet,
    targets: &ConceptSet,
    gold: &GoldLinks,
    templates: &PromptTemplates,
    usage: Option<UsageModel>,
) -> MockScript {
    let mut rules = Vec::new();
    for q in queries {
        let Some(t) = gold
            .get(&q.id)
            .and_then(Prediction::concept_id)
            .and_then(|t| targets.get(t))
        else {
            continue;
        };
        let (qn, tn) = (q.prompt_name(), t.prompt_name());
        let lines: Vec<String> = [templates.stage1_query_line(qn), templates.stage1_candidate_line(tn)]
            .into_iter()
            .flatten()
            .collect();
        rules.push(MockRule {
            stage: Some(Stage::Stage1),
            lines,
            replies: vec![MockReply::text("Answer: yes")],
            ..Default::default()
        });
        rules.push(MockRule {
            stage: Some(Stage::Stage2),
            lines: templates.stage2_query_line(qn).into_iter().collect(),
            replies: vec![MockReply::select(tn)],
            ..Default::default()
        });
    }
    MockScript {
        rules,
        usage,
        ..Default::default()
    }
}

/// Names of a concept set, for tests and diagnostics.
#[allow(dead_code)]
fn names(set: &ConceptSet) -> Vec<&str> {
    set.iter().map(Concept::prompt_name).collect()
}
