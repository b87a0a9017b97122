//! Knowledge-conflict evaluation.
//!
//! Each example gets three labels: whether the query-only answer is correct
//! (`ti`), whether its context is correct (`te`) and whether its context is
//! self-contradictory (`sc`). Set algebra over those labels yields the
//! sub-test sets; every metric is the retrieval-augmented accuracy on one of
//! them.
//!
//! | metric            | subset                         |
//! |-------------------|--------------------------------|
//! | `acc_cq`          | all non-self-conflict examples |
//! | `acc_tife`        | Ti ∩ Fe                        |
//! | `acc_fite`        | Fi ∩ Te                        |
//! | `acc_fe`          | Fe                             |
//! | `acc_te`          | Te                             |
//! | `acc_tite`        | Ti ∪ Te                        |
//! | `acc_tite_strict` | Ti ∩ Te                        |
//! | `acc_fife`        | Fi ∩ Fe                        |
//! | `acc_scti`        | self-conflict ∩ Ti             |
//! | `acc_scfi`        | self-conflict ∩ Fi             |
//! | `acc_sc`          | mean of `acc_scti`, `acc_scfi` |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{self, PolicyParams};
use crate::rollout::reward;
use crate::world::{make_prompts, Example, PredictionRecord, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetLabels {
    pub ti: bool,
    pub te: bool,
    pub sc: bool,
}

/// Index sets into the labeled example list, each ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Subsets {
    pub cq: Vec<usize>,
    pub tife: Vec<usize>,
    pub fite: Vec<usize>,
    pub fe: Vec<usize>,
    pub te: Vec<usize>,
    pub tite: Vec<usize>,
    pub tite_strict: Vec<usize>,
    pub fife: Vec<usize>,
    pub scti: Vec<usize>,
    pub scfi: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    /// `None` when the subset is empty.
    pub value: Option<f64>,
    pub size: usize,
}

impl Metric {
    fn over(flags: &[bool], subset: &[usize]) -> Self {
        let hits = subset.iter().filter(|&&i| flags[i]).count();
        Metric {
            value: (!subset.is_empty()).then(|| hits as f64 / subset.len() as f64),
            size: subset.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub acc_cq: Metric,
    pub acc_tife: Metric,
    pub acc_fite: Metric,
    pub acc_fe: Metric,
    pub acc_te: Metric,
    pub acc_tite: Metric,
    pub acc_tite_strict: Metric,
    pub acc_fife: Metric,
    pub acc_scti: Metric,
    pub acc_scfi: Metric,
    pub acc_sc: Metric,
    pub union_upper: Metric,
}

impl MetricReport {
    pub const COLUMNS: [&'static str; 12] = [
        "acc_cq",
        "acc_tife",
        "acc_fite",
        "acc_fe",
        "acc_te",
        "acc_tite",
        "acc_tite_strict",
        "acc_fife",
        "acc_scti",
        "acc_scfi",
        "acc_sc",
        "union_upper",
    ];

    pub fn metrics(&self) -> [Metric; 12] {
        [
            self.acc_cq,
            self.acc_tife,
            self.acc_fite,
            self.acc_fe,
            self.acc_te,
            self.acc_tite,
            self.acc_tite_strict,
            self.acc_fife,
            self.acc_scti,
            self.acc_scfi,
            self.acc_sc,
            self.union_upper,
        ]
    }

    /// Header for [`MetricReport::csv_row`]: values then subset sizes.
    pub fn csv_header() -> String {
        let sizes = Self::COLUMNS.iter().map(|c| format!("n_{}", c.trim_start_matches("acc_")));
        Self::COLUMNS.iter().map(|c| c.to_string()).chain(sizes).collect::<Vec<_>>().join(",")
    }

    /// Absent metrics are empty cells.
    pub fn csv_row(&self) -> String {
        let ms = self.metrics();
        let values = ms.iter().map(|m| m.value.map(|v| v.to_string()).unwrap_or_default());
        let sizes = ms.iter().map(|m| m.size.to_string());
        values.chain(sizes).collect::<Vec<_>>().join(",")
    }
}

/// Greedy exact-match under the query-only prompt.
pub fn label_parametric(params: &PolicyParams, examples: &[Example], max_new_tokens: usize) -> Result<Vec<bool>> {
    answer_correct(params, examples, max_new_tokens, |e| make_prompts(e).p)
}

/// Greedy exact-match under the retrieval-augmented prompt.
pub fn label_rag(params: &PolicyParams, examples: &[Example], max_new_tokens: usize) -> Result<Vec<bool>> {
    answer_correct(params, examples, max_new_tokens, |e| make_prompts(e).p_ctx)
}

fn answer_correct(
    params: &PolicyParams,
    examples: &[Example],
    max_new_tokens: usize,
    prompt: impl Fn(&Example) -> Vec<Token>,
) -> Result<Vec<bool>> {
    examples
        .iter()
        .map(|e| {
            let out = policy::greedy(params, &prompt(e), max_new_tokens)?;
            Ok(reward(&out, &e.gold_answer) == 1.0)
        })
        .collect()
}

pub fn labels_for(examples: &[Example], ti: &[bool]) -> Vec<SubsetLabels> {
    examples
        .iter()
        .zip(ti)
        .map(|(e, &ti)| SubsetLabels {
            ti,
            te: e.context_correct,
            sc: e.self_conflict,
        })
        .collect()
}

pub fn partition(labels: &[SubsetLabels]) -> Subsets {
    let mut s = Subsets::default();
    for (i, l) in labels.iter().enumerate() {
        if l.sc {
            if l.ti {
                s.scti.push(i);
            } else {
                s.scfi.push(i);
            }
            continue;
        }
        s.cq.push(i);
        match (l.ti, l.te) {
            (true, true) => s.tite_strict.push(i),
            (true, false) => s.tife.push(i),
            (false, true) => s.fite.push(i),
            (false, false) => s.fife.push(i),
        }
        if l.te {
            s.te.push(i);
        } else {
            s.fe.push(i);
        }
        if l.ti || l.te {
            s.tite.push(i);
        }
    }
    s
}

/// Accuracy of `rag_correct` on every subset. `union_upper` is left absent;
/// see [`evaluate_flags`].
pub fn compute_metrics(rag_correct: &[bool], subsets: &Subsets) -> MetricReport {
    let m = |idx: &Vec<usize>| Metric::over(rag_correct, idx);
    let (scti, scfi) = (m(&subsets.scti), m(&subsets.scfi));
    let acc_sc = Metric {
        value: match (scti.value, scfi.value) {
            (Some(a), Some(b)) => Some((a + b) / 2.0),
            _ => None,
        },
        size: scti.size + scfi.size,
    };
    MetricReport {
        acc_cq: m(&subsets.cq),
        acc_tife: m(&subsets.tife),
        acc_fite: m(&subsets.fite),
        acc_fe: m(&subsets.fe),
        acc_te: m(&subsets.te),
        acc_tite: m(&subsets.tite),
        acc_tite_strict: m(&subsets.tite_strict),
        acc_fife: m(&subsets.fife),
        acc_scti: scti,
        acc_scfi: scfi,
        acc_sc,
        union_upper: Metric { value: None, size: 0 },
    }
}

/// Share of examples answered correctly by either prompting route.
pub fn union_upper_bound(rag_correct: &[bool], query_only_correct: &[bool]) -> Result<f64> {
    if rag_correct.len() != query_only_correct.len() {
        return Err(Error::Shape(format!(
            "{} retrieval-augmented flags vs {} query-only flags",
            rag_correct.len(),
            query_only_correct.len()
        )));
    }
    if rag_correct.is_empty() {
        return Ok(0.0);
    }
    let hits = rag_correct.iter().zip(query_only_correct).filter(|(a, b)| **a || **b).count();
    Ok(hits as f64 / rag_correct.len() as f64)
}

/// Full report from aligned labels and flags; the union bound runs over
/// every example.
pub fn evaluate_flags(labels: &[SubsetLabels], rag_correct: &[bool]) -> Result<MetricReport> {
    if labels.len() != rag_correct.len() {
        return Err(Error::Shape(format!("{} labels vs {} flags", labels.len(), rag_correct.len())));
    }
    let mut report = compute_metrics(rag_correct, &partition(labels));
    let ti: Vec<bool> = labels.iter().map(|l| l.ti).collect();
    report.union_upper = Metric {
        value: (!labels.is_empty()).then(|| union_upper_bound(rag_correct, &ti)).transpose()?,
        size: labels.len(),
    };
    Ok(report)
}

pub fn evaluate_predictions(records: &[PredictionRecord]) -> Result<(Vec<SubsetLabels>, MetricReport)> {
    let labels: Vec<SubsetLabels> = records
        .iter()
        .map(|r| SubsetLabels {
            ti: r.query_only_correct,
            te: r.context_correct,
            sc: r.self_conflict,
        })
        .collect();
    let rag: Vec<bool> = records.iter().map(|r| r.rag_correct).collect();
    let report = evaluate_flags(&labels, &rag)?;
    Ok((labels, report))
}

/// Query-only labels from `probe` (normally the pre-RL policy) and
/// retrieval-augmented correctness from `policy`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEvaluation {
    pub labels: Vec<SubsetLabels>,
    pub rag_correct: Vec<bool>,
    pub report: MetricReport,
}

pub fn evaluate_policy(
    probe: &PolicyParams,
    policy: &PolicyParams,
    examples: &[Example],
    max_new_tokens: usize,
) -> Result<PolicyEvaluation> {
    let ti = label_parametric(probe, examples, max_new_tokens)?;
    evaluate_with_labels(policy, examples, labels_for(examples, &ti), max_new_tokens)
}

pub fn evaluate_with_labels(
    policy: &PolicyParams,
    examples: &[Example],
    labels: Vec<SubsetLabels>,
    max_new_tokens: usize,
) -> Result<PolicyEvaluation> {
    let rag_correct = label_rag(policy, examples, max_new_tokens)?;
    let report = evaluate_flags(&labels, &rag_correct)?;
    Ok(PolicyEvaluation {
        labels,
        rag_correct,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lab(ti: bool, te: bool) -> SubsetLabels {
        SubsetLabels { ti, te, sc: false }
    }

    fn fixture() -> Vec<SubsetLabels> {
        vec![lab(true, false), lab(false, true), lab(true, true), lab(false, false)]
    }

    #[test]
    fn step_four_set_algebra() {
        let s = partition(&fixture());
        assert_eq!(s.tife, vec![0]);
        assert_eq!(s.fite, vec![1]);
        assert_eq!(s.tite, vec![0, 1, 2]);
        assert_eq!(s.fife, vec![3]);
        assert_eq!(s.te, vec![1, 2]);
        assert_eq!(s.fe, vec![0, 3]);
        assert_eq!(s.tite_strict, vec![2]);
    }

    #[test]
    fn fixture_report_by_hand() {
        let rag = [true, false, true, false];
        let r = evaluate_flags(&fixture(), &rag).unwrap();
        assert_eq!(r.acc_cq.value, Some(0.5));
        assert_eq!(r.acc_tife.value, Some(1.0));
        assert_eq!(r.acc_fite.value, Some(0.0));
        assert_eq!(r.acc_fe.value, Some(0.5));
        assert_eq!(r.acc_te.value, Some(0.5));
        assert_eq!(r.acc_tite.value, Some(2.0 / 3.0));
        assert_eq!(r.acc_tite_strict.value, Some(1.0));
        assert_eq!(r.acc_fife.value, Some(0.0));
        assert_eq!(r.acc_scti, Metric { value: None, size: 0 });
        assert_eq!(r.acc_sc.value, None);
        // ti = [1,0,1,0] so the union is rag | ti
        assert_eq!(r.union_upper.value, Some(0.5));
    }

    #[test]
    fn all_correct_is_one_everywhere_defined() {
        let r = evaluate_flags(&fixture(), &[true; 4]).unwrap();
        for m in r.metrics() {
            if let Some(v) = m.value {
                assert_eq!(v, 1.0);
            }
        }
    }

    #[test]
    fn union_bound_examples() {
        let rag = [true, false, true, false];
        assert_eq!(union_upper_bound(&rag, &[false, false, true, true]).unwrap(), 0.75);
        assert_eq!(union_upper_bound(&rag, &[false; 4]).unwrap(), 0.5);
        assert_eq!(union_upper_bound(&[true; 3], &[true; 3]).unwrap(), 1.0);
        assert!(union_upper_bound(&rag, &[true]).is_err());
    }

    #[test]
    fn self_conflict_split_by_ti() {
        let labels = vec![
            SubsetLabels { ti: true, te: true, sc: true },
            SubsetLabels { ti: false, te: false, sc: true },
            SubsetLabels { ti: false, te: true, sc: true },
            lab(true, true),
        ];
        let s = partition(&labels);
        assert_eq!(s.scti, vec![0]);
        assert_eq!(s.scfi, vec![1, 2]);
        assert_eq!(s.cq, vec![3]);
        let r = compute_metrics(&[true, true, false, false], &s);
        assert_eq!(r.acc_scti.value, Some(1.0));
        assert_eq!(r.acc_scfi.value, Some(0.5));
        assert_eq!(r.acc_sc.value, Some(0.75));
        assert_eq!(r.acc_sc.size, 3);
    }

    #[test]
    fn csv_row_matches_header_width() {
        let r = evaluate_flags(&fixture(), &[true, false, true, false]).unwrap();
        assert_eq!(
            MetricReport::csv_header().split(',').count(),
            r.csv_row().split(',').count()
        );
        assert!(r.csv_row().contains(",,"));
    }
}
