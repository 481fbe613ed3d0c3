//! Structured-answer extraction. Parsers never fail: anything that does not
//! follow the answer format is [`Verdict::Unparseable`] /
//! [`Selection::Unparseable`].

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Yes,
    No,
    Unparseable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// 1-based position in the presented candidate list.
    Candidate(usize),
    Nil,
    Unparseable,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Yes => "yes",
            Verdict::No => "no",
            Verdict::Unparseable => "unparseable",
        }
    }
}

impl Selection {
    pub fn label(self) -> String {
        match self {
            Selection::Candidate(i) => i.to_string(),
            Selection::Nil => "NIL".into(),
            Selection::Unparseable => "unparseable".into(),
        }
    }
}

// Leading markdown decoration (`**Answer:** yes`, `> Answer: no`) is tolerated.
static ANSWER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(?im)^[\s*_#>`-]*answer[\s*_`]*:[\s*_`"'\[]*([a-z]+)\b"#).unwrap());
static CHOICE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?im)^[\s*_#>`-]*(?:final\s+)?choice[\s*_`]*:[\s*_`"'\[#]*([a-z]+|\d+)\b"#).unwrap()
});

/// Reads the `Answer: yes|no` line of a stage-1 reply. When several answer
/// lines are present the last one wins.
///
/// ```
/// use conlink::llm::{parse_stage1, Verdict};
///
/// assert_eq!(parse_stage1("Answer: yes"), Verdict::Yes);
/// assert_eq!(parse_stage1("Answer: NO"), Verdict::No);
/// assert_eq!(parse_stage1("I think they might match"), Verdict::Unparseable);
/// ```
pub fn parse_stage1(text: &str) -> Verdict {
    let Some(word) = ANSWER.captures_iter(text).last().map(|c| c[1].to_ascii_lowercase()) else {
        return Verdict::Unparseable;
    };
    match word.as_str() {
        "yes" => Verdict::Yes,
        "no" => Verdict::No,
        _ => Verdict::Unparseable,
    }
}

/// Reads the `Choice: <index>|NIL` line of a stage-2 reply. Indices outside
/// `1..=k1` are unparseable.
///
/// ```
/// use conlink::llm::{parse_stage2, Selection};
///
/// assert_eq!(parse_stage2("Choice: 3", 10), Selection::Candidate(3));
/// assert_eq!(parse_stage2("Choice: NIL", 10), Selection::Nil);
/// assert_eq!(parse_stage2("Choice: 12", 10), Selection::Unparseable);
/// ```
pub fn parse_stage2(text: &str, k1: usize) -> Selection {
    let Some(token) = CHOICE.captures_iter(text).last().map(|c| c[1].to_string()) else {
        return Selection::Unparseable;
    };
    if token.eq_ignore_ascii_case("nil") {
        return Selection::Nil;
    }
    match token.parse::<usize>() {
        Ok(i) if (1..=k1).contains(&i) => Selection::Candidate(i),
        _ => Selection::Unparseable,
    }
}
