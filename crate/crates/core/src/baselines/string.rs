//! Character- and token-level string similarities, all in `[0, 1]`.

use std::collections::{HashMap, HashSet};

/// Edit distance over Unicode scalar values, unit costs.
pub fn levenshtein_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if ca == cb { diag } else { 1 + diag.min(up).min(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// `1 - distance / max(len)`; 1 when both strings are empty.
pub fn levenshtein_sim(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein_distance(a, b) as f64 / longest as f64
}

/// Jaro similarity.
pub fn jaro_sim(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let window = (a.len().max(b.len()) / 2).saturating_sub(1);
    let mut a_hit = vec![false; a.len()];
    let mut b_hit = vec![false; b.len()];
    let mut matches = 0usize;
    for (i, ca) in a.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window + 1).min(b.len());
        for j in lo..hi {
            if !b_hit[j] && b[j] == *ca {
                a_hit[i] = true;
                b_hit[j] = true;
                matches += 1;
                break;
            }
        }
    }
    if matches == 0 {
        return 0.0;
    }
    let a_seq = a.iter().zip(&a_hit).filter(|(_, h)| **h).map(|(c, _)| c);
    let b_seq = b.iter().zip(&b_hit).filter(|(_, h)| **h).map(|(c, _)| c);
    let half_transpositions = a_seq.zip(b_seq).filter(|(x, y)| x != y).count();
    let m = matches as f64;
    let t = (half_transpositions / 2) as f64;
    (m / a.len() as f64 + m / b.len() as f64 + (m - t) / m) / 3.0
}

/// Jaro-Winkler with prefix scale 0.1 and prefix length capped at 4.
pub fn jaro_winkler_sim(a: &str, b: &str) -> f64 {
    let j = jaro_sim(a, b);
    let prefix = a.chars().zip(b.chars()).take(4).take_while(|(x, y)| x == y).count();
    (j + prefix as f64 * 0.1 * (1.0 - j)).min(1.0)
}

/// Jaccard index of the whitespace token sets; 1 when both are empty.
pub fn jaccard_sim(a: &str, b: &str) -> f64 {
    let ta: HashSet<&str> = a.split_whitespace().collect();
    let tb: HashSet<&str> = b.split_whitespace().collect();
    if ta.is_empty() && tb.is_empty() {
        return 1.0;
    }
    let inter = ta.intersection(&tb).count();
    let union = ta.len() + tb.len() - inter;
    inter as f64 / union as f64
}

/// Character trigram counts of `#text#`.
pub fn trigrams(text: &str) -> HashMap<[char; 3], u32> {
    let padded: Vec<char> = std::iter::once('#')
        .chain(text.chars())
        .chain(std::iter::once('#'))
        .collect();
    let mut counts = HashMap::new();
    for w in padded.windows(3) {
        *counts.entry([w[0], w[1], w[2]]).or_insert(0) += 1;
    }
    counts
}

/// Cosine between trigram term-frequency vectors. 1 when both strings are
/// empty, 0 when exactly one is.
pub fn char_cosine_sim(a: &str, b: &str) -> f64 {
    let ta = trigrams(a);
    let tb = trigrams(b);
    if ta.is_empty() && tb.is_empty() {
        return 1.0;
    }
    if ta.is_empty() || tb.is_empty() {
        return 0.0;
    }
    let sq = |t: &HashMap<[char; 3], u32>| t.values().map(|&c| u64::from(c * c)).sum::<u64>();
    let dot: u64 = ta
        .iter()
        .filter_map(|(g, &c)| tb.get(g).map(|&d| u64::from(c) * u64::from(d)))
        .sum();
    let denom = ((sq(&ta) * sq(&tb)) as f64).sqrt();
    (dot as f64 / denom).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein_distance("kitten", "sitting"), 3);
        assert_eq!(levenshtein_sim("abc", "abc"), 1.0);
        assert_eq!(levenshtein_sim("kitten", "sitting"), 1.0 - 3.0 / 7.0);
        assert_eq!(levenshtein_sim("", "ab"), 0.0);
        assert_eq!(levenshtein_sim("", ""), 1.0);
        assert_eq!(levenshtein_distance("flaw", "lawn"), 2);
    }

    #[test]
    fn jaro_winkler_examples() {
        assert_eq!(jaro_winkler_sim("martha", "martha"), 1.0);
        // m = 6, t = 1: jaro = (1 + 1 + 5/6) / 3 = 17/18; prefix "mar" = 3
        let j = 17.0 / 18.0;
        assert!((jaro_winkler_sim("martha", "marhta") - (j + 0.3 * (1.0 - j))).abs() < 1e-12);
        assert_eq!(jaro_winkler_sim("abc", ""), 0.0);
        assert_eq!(jaro_winkler_sim("", ""), 1.0);
        assert_eq!(jaro_sim("abc", "xyz"), 0.0);
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard_sim("heart failure", "heart failure"), 1.0);
        assert_eq!(jaccard_sim("heart failure", "renal failure"), 1.0 / 3.0);
        assert_eq!(jaccard_sim("abc", "xyz"), 0.0);
        assert_eq!(jaccard_sim("", ""), 1.0);
    }

    #[test]
    fn char_cosine_examples() {
        assert_eq!(char_cosine_sim("heart", "heart"), 1.0);
        assert_eq!(char_cosine_sim("abc", "xyz"), 0.0);
        // {#ab, abc, bcd, cd#} vs {#ab, abc, bce, ce#}: 2 / (2 * 2)
        assert_eq!(char_cosine_sim("abcd", "abce"), 0.5);
        assert_eq!(char_cosine_sim("", ""), 1.0);
        assert_eq!(char_cosine_sim("a", ""), 0.0);
    }

    fn names() -> impl Strategy<Value = String> {
        "[a-z]{0,6}( [a-z]{1,6}){0,2}"
    }

    type Scorer = fn(&str, &str) -> f64;
    const SYMMETRIC: [(&str, Scorer); 4] = [
        ("levenshtein", levenshtein_sim),
        ("jaro_winkler", jaro_winkler_sim),
        ("jaccard", jaccard_sim),
        ("char_cosine", char_cosine_sim),
    ];

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn symmetric_and_bounded(a in names(), b in names()) {
            for (name, f) in SYMMETRIC {
                let ab = f(&a, &b);
                prop_assert_eq!(ab, f(&b, &a), "{} not symmetric", name);
                prop_assert!((0.0..=1.0).contains(&ab), "{} out of range: {}", name, ab);
            }
        }

        #[test]
        fn identity_is_maximal(a in "[a-z]{1,6}( [a-z]{1,6}){0,2}", b in names()) {
            for (name, f) in SYMMETRIC {
                prop_assert_eq!(f(&a, &a), 1.0, "{}", name);
                prop_assert!(f(&a, &b) <= f(&a, &a));
            }
        }
    }
}
