//! Plain-text and JSON reports.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{accuracy, EvalError, GoldLinks, MethodScore};
use crate::baselines::threshold_nil;
use crate::embedding::CandidateSet;
use crate::llm::CostReport;

/// One method's accuracy on each dataset column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub method: String,
    pub values: Vec<Option<f64>>,
}

/// One ablation row: accuracy plus token and dollar totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: String,
    pub accuracy: Option<f64>,
    pub tokens: Option<u64>,
    pub cost: Option<f64>,
}

/// Accuracy of [`threshold_nil`] at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub theta: f64,
    pub overall: f64,
    /// Share of queries predicted NIL.
    pub nil_rate: f64,
    pub linkable: Option<f64>,
    pub nil: Option<f64>,
}

fn rate(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

fn thousands(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// `"1,594,996 ($66.25)"`, the bare token count without a cost, or `"N/A"`.
///
/// ```
/// use conlink::eval::format_tokens_cost;
///
/// assert_eq!(format_tokens_cost(Some(1_594_996), Some(66.25)), "1,594,996 ($66.25)");
/// assert_eq!(format_tokens_cost(Some(42), None), "42");
/// assert_eq!(format_tokens_cost(None, None), "N/A");
/// ```
pub fn format_tokens_cost(tokens: Option<u64>, cost: Option<f64>) -> String {
    match (tokens, cost) {
        (None, _) => "N/A".into(),
        (Some(t), None) => thousands(t),
        (Some(t), Some(c)) => format!("{} (${c:.2})", thousands(t)),
    }
}

/// Aligned table: first column left-aligned, the rest right-aligned, with a
/// rule under the header, between groups and at the bottom.
fn render(header: &[String], groups: &[Vec<Vec<String>>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in groups.iter().flatten() {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                s.push_str(" | ");
                let _ = write!(s, "{cell:>w$}");
            } else {
                let _ = write!(s, "{cell:<w$}");
            }
        }
        s.push('\n');
        s
    };
    let rule: String = {
        let total = widths.iter().sum::<usize>() + 3 * widths.len().saturating_sub(1);
        format!("{}\n", "-".repeat(total))
    };
    let mut out = line(header);
    for g in groups {
        out.push_str(&rule);
        for row in g {
            out.push_str(&line(row));
        }
    }
    out.push_str(&rule);
    out
}

/// Accuracy table with one `Acc-<dataset>` column per dataset. Each group is
/// set off by a rule; missing values print as `-`.
///
/// ```
/// use conlink::eval::{accuracy_table, AccuracyRow};
///
/// let groups = vec![vec![AccuracyRow { method: "BM25".into(), values: vec![Some(0.5), None] }]];
/// let text = accuracy_table(&["MIID", "CISE"], &groups);
/// assert!(text.starts_with("Method | Acc-MIID | Acc-CISE"));
/// assert!(text.contains("BM25   |   0.5000 |        -"));
/// ```
pub fn accuracy_table<S: AsRef<str>>(datasets: &[S], groups: &[Vec<AccuracyRow>]) -> String {
    let mut header = vec!["Method".to_string()];
    header.extend(datasets.iter().map(|d| format!("Acc-{}", d.as_ref())));
    let groups: Vec<Vec<Vec<String>>> = groups
        .iter()
        .map(|g| {
            g.iter()
                .map(|r| {
                    let mut cells = vec![r.method.clone()];
                    cells.extend((0..datasets.len()).map(|i| rate(r.values.get(i).copied().flatten())));
                    cells
                })
                .collect()
        })
        .collect();
    render(&header, &groups)
}

/// Ablation table: `Prompting Methods | Acc | Token Cost`.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let header = ["Prompting Methods", "Acc", "Token Cost"].map(String::from);
    let body = rows
        .iter()
        .map(|r| vec![r.method.clone(), rate(r.accuracy), format_tokens_cost(r.tokens, r.cost)])
        .collect();
    render(&header, &[body])
}

/// Scores [`threshold_nil`] over `candidates` at each threshold.
pub fn threshold_sweep(
    candidates: &[CandidateSet],
    gold: &GoldLinks,
    thetas: &[f64],
) -> Result<Vec<SweepPoint>, EvalError> {
    thetas
        .iter()
        .map(|&theta| {
            let decisions: Vec<_> = candidates.iter().map(|c| threshold_nil(c, theta)).collect();
            let nils = decisions
                .iter()
                .filter(|d| d.prediction.as_ref().is_some_and(|p| p.is_nil()))
                .count();
            let s = accuracy(&decisions, gold)?;
            Ok(SweepPoint {
                theta,
                overall: s.overall,
                nil_rate: if decisions.is_empty() {
                    0.0
                } else {
                    nils as f64 / decisions.len() as f64
                },
                linkable: s.linkable.accuracy,
                nil: s.nil.accuracy,
            })
        })
        .collect()
}

/// Everything `eval` produces for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub rows: Vec<MethodScore>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostReport>,
}

impl EvalReport {
    pub fn new(dataset: impl Into<String>, rows: Vec<MethodScore>) -> Self {
        EvalReport {
            dataset: dataset.into(),
            rows,
            sweep: Vec::new(),
            cost: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Accuracy table, then the per-subset breakdown, then the sweep and
    /// cost sections when present.
    pub fn to_text(&self) -> String {
        let rows: Vec<AccuracyRow> = self
            .rows
            .iter()
            .map(|r| AccuracyRow {
                method: r.method.clone(),
                values: vec![Some(r.overall)],
            })
            .collect();
        let mut out = accuracy_table(&[&self.dataset], &[rows]);

        out.push('\n');
        let header = ["Method", "Total", "Linkable", "NIL", "Failed", "Ceiling"].map(String::from);
        let body = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.method.clone(),
                    r.total.to_string(),
                    rate(r.linkable.accuracy),
                    rate(r.nil.accuracy),
                    r.failed.to_string(),
                    rate(Some(r.retrieval_ceiling)),
                ]
            })
            .collect();
        out.push_str(&render(&header, &[body]));

        if !self.sweep.is_empty() {
            out.push('\n');
            let header = ["Theta", "Acc", "NIL rate", "Acc-linkable", "Acc-NIL"].map(String::from);
            let body = self
                .sweep
                .iter()
                .map(|p| {
                    vec![
                        format!("{:.2}", p.theta),
                        rate(Some(p.overall)),
                        rate(Some(p.nil_rate)),
                        rate(p.linkable),
                        rate(p.nil),
                    ]
                })
                .collect();
            out.push_str(&render(&header, &[body]));
        }

        if let Some(cost) = &self.cost {
            out.push('\n');
            out.push_str(&cost_table(cost));
        }
        out
    }

    /// Writes `report.json` and `report.txt` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), EvalError> {
        let dir = dir.as_ref();
        let io = |p: &Path, e| EvalError::Io {
            path: p.display().to_string(),
            source: e,
        };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let json = dir.join("report.json");
        std::fs::write(&json, self.to_json()).map_err(|e| io(&json, e))?;
        let txt = dir.join("report.txt");
        std::fs::write(&txt, self.to_text()).map_err(|e| io(&txt, e))?;
        Ok(())
    }
}

/// Per-stage token and dollar totals.
pub fn cost_table(cost: &CostReport) -> String {
    let header = ["Stage", "Calls", "Prompt", "Completion", "Tokens", "Cost"].map(String::from);
    let row = |s: &crate::llm::StageCost| {
        vec![
            s.stage.clone(),
            thousands(s.calls),
            thousands(s.prompt_tokens),
            thousands(s.completion_tokens),
            thousands(s.total_tokens),
            format!("${:.2}", s.cost),
        ]
    };
    let body: Vec<_> = cost.stages.iter().map(row).collect();
    let mut out = render(&header, &[body, vec![row(&cost.total)]]);
    if let Some(p) = cost.blended_price {
        let _ = writeln!(out, "blended price: ${p:.6e} per token");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::Prediction;
    use crate::embedding::Candidate;

    #[test]
    fn ablation_layout() {
        let rows = vec![
            AblationRow {
                method: "Before Prompting".into(),
                accuracy: Some(0.7213),
                tokens: None,
                cost: None,
            },
            AblationRow {
                method: "Two-stage Prompts".into(),
                accuracy: Some(0.7756),
                tokens: Some(1_594_996),
                cost: Some(66.25),
            },
        ];
        let t = ablation_table(&rows);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "Prompting Methods |    Acc |         Token Cost");
        assert!(lines[1].chars().all(|c| c == '-'));
        assert_eq!(lines[2], "Before Prompting  | 0.7213 |                N/A");
        assert_eq!(lines[3], "Two-stage Prompts | 0.7756 | 1,594,996 ($66.25)");
    }

    #[test]
    fn grouped_rows_get_rules() {
        let row = |m: &str, a, b| AccuracyRow {
            method: m.into(),
            values: vec![Some(a), Some(b)],
        };
        let t = accuracy_table(
            &["MIID", "CISE"],
            &[
                vec![row("Cosine Distance", 0.1, 0.2), row("BM25", 0.3, 0.4)],
                vec![row("Two-stage Prompts", 0.7756, 0.888)],
            ],
        );
        let rules = t.lines().filter(|l| l.starts_with("---")).count();
        assert_eq!(rules, 3);
        assert!(t.contains("Two-stage Prompts |   0.7756 |   0.8880"));
        let widths: Vec<usize> = t.lines().map(str::len).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn thousands_separator() {
        assert_eq!(thousands(0), "0");
        assert_eq!(thousands(999), "999");
        assert_eq!(thousands(1000), "1,000");
        assert_eq!(thousands(995_836), "995,836");
        assert_eq!(thousands(1_681_987), "1,681,987");
    }

    fn sets() -> (Vec<CandidateSet>, GoldLinks) {
        let mk = |q: &str, c: &[(&str, f64)]| {
            CandidateSet::from_scored(q, 10, c.iter().map(|(i, s)| Candidate::new(*i, *s)).collect())
        };
        let sets = vec![
            mk("q1", &[("a", 0.9), ("b", 0.5)]),
            mk("q2", &[("b", 0.4), ("a", 0.3)]),
            mk("q3", &[("c", 0.65)]),
        ];
        let gold = GoldLinks::from_pairs([("q1", "a"), ("q2", "NIL"), ("q3", "c")]).unwrap();
        (sets, gold)
    }

    #[test]
    fn sweep_matches_hand_count() {
        let (sets, gold) = sets();
        let pts = threshold_sweep(&sets, &gold, &[0.0, 0.5, 0.7, 1.0]).unwrap();
        let got: Vec<(f64, f64)> = pts.iter().map(|p| (p.overall, p.nil_rate)).collect();
        let third = 1.0 / 3.0;
        assert_eq!(
            got,
            vec![
                (2.0 * third, 0.0),
                (1.0, third),
                (2.0 * third, 2.0 * third),
                (third, 1.0)
            ]
        );
        assert_eq!(pts[1].nil, Some(1.0));
        assert_eq!(gold.get("q2"), Some(&Prediction::Nil));
    }

    #[test]
    fn report_round_trips_and_renders() {
        let (sets, gold) = sets();
        let decisions: Vec<_> = sets.iter().map(|c| threshold_nil(c, 0.5)).collect();
        let mut r = EvalReport::new("toy", vec![accuracy(&decisions, &gold).unwrap()]);
        r.sweep = threshold_sweep(&sets, &gold, &[0.5]).unwrap();
        assert_eq!(EvalReport::from_json(&r.to_json()).unwrap(), r);
        let text = r.to_text();
        assert!(text.starts_with("Method        | Acc-toy"));
        assert!(text.contains("threshold@0.5 |  1.0000"));
        assert!(text.contains("Theta"));
        let dir = tempfile::tempdir().unwrap();
        r.write(dir.path()).unwrap();
        assert!(dir.path().join("report.txt").exists());
    }
}
