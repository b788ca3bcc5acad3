//! Proposal recall: greedy one-to-one matching and recall-vs-budget curves.
//!
//! Proposals are visited in rank order and each takes the unmatched annotation it
//! overlaps most, provided the IoU reaches the threshold. Since a proposal's match
//! never depends on later proposals, matching the first `b` proposals is a prefix of
//! matching them all, and one pass per scene serves every budget.
//!
//! Recall is micro-averaged: matched annotations over all annotations in all scenes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou_2d, Box2D};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no annotations to evaluate against")]
    NoAnnotations,
    #[error("iou threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("budgets must be ascending")]
    BudgetsNotAscending,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv row {row}: {msg}")]
    CsvFormat { row: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchResult {
    /// `(annotation_index, proposal_rank)` in increasing rank order.
    pub matched_pairs: Vec<(usize, usize)>,
    pub unmatched_annotations: Vec<usize>,
}

impl MatchResult {
    /// Pairs whose proposal rank is below `budget`.
    pub fn matched_within(&self, budget: usize) -> usize {
        self.matched_pairs
            .partition_point(|&(_, rank)| rank < budget)
    }
}

fn check_threshold(t: f64) -> Result<(), EvalError> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(EvalError::InvalidThreshold(t))
    }
}

/// Greedy rank-order matching; annotation ties go to the smaller index.
pub fn match_proposals(
    annotations: &[Box2D],
    proposals: &[Box2D],
    iou_threshold: f64,
) -> MatchResult {
    let mut taken = vec![false; annotations.len()];
    let mut remaining = annotations.len();
    let mut pairs = Vec::new();
    for (rank, p) in proposals.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, a) in annotations.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let iou = iou_2d(a, p);
            if iou >= iou_threshold && best.map_or(true, |(_, b)| iou > b) {
                best = Some((i, iou));
            }
        }
        if let Some((i, _)) = best {
            taken[i] = true;
            remaining -= 1;
            pairs.push((i, rank));
        }
    }
    MatchResult {
        matched_pairs: pairs,
        unmatched_annotations: (0..annotations.len()).filter(|&i| !taken[i]).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallCurve {
    pub budgets: Vec<usize>,
    pub recall: Vec<f64>,
    pub iou_threshold: f64,
}

impl RecallCurve {
    pub fn recall_at(&self, budget: usize) -> Option<f64> {
        self.budgets
            .iter()
            .position(|&b| b == budget)
            .map(|i| self.recall[i])
    }
}

/// One scene for evaluation: annotations and ranked proposals.
#[derive(Debug, Clone, Copy)]
pub struct EvalScene<'a> {
    pub annotations: &'a [Box2D],
    pub proposals: &'a [Box2D],
}

/// Recall at each budget, pooled over scenes.
pub fn recall_curve(
    scenes: &[EvalScene<'_>],
    budgets: &[usize],
    iou_threshold: f64,
) -> Result<RecallCurve, EvalError> {
    check_threshold(iou_threshold)?;
    if budgets.windows(2).any(|w| w[0] > w[1]) {
        return Err(EvalError::BudgetsNotAscending);
    }
    let total: usize = scenes.iter().map(|s| s.annotations.len()).sum();
    if total == 0 {
        return Err(EvalError::NoAnnotations);
    }
    let max_budget = budgets.last().copied().unwrap_or(0);
    let mut matched = vec![0usize; budgets.len()];
    for s in scenes {
        let n = s.proposals.len().min(max_budget);
        let m = match_proposals(s.annotations, &s.proposals[..n], iou_threshold);
        for (slot, &b) in matched.iter_mut().zip(budgets) {
            *slot += m.matched_within(b);
        }
    }
    Ok(RecallCurve {
        budgets: budgets.to_vec(),
        recall: matched.iter().map(|&m| m as f64 / total as f64).collect(),
        iou_threshold,
    })
}

pub const CSV_HEADER: [&str; 4] = ["strategy", "iou", "budget", "recall"];

/// Writes labelled curves as one CSV: header `strategy,iou,budget,recall`, one row per
/// budget, six decimals for the real columns.
pub fn write_curves_csv<'a>(
    curves: impl IntoIterator<Item = (&'a str, &'a RecallCurve)>,
) -> Result<String, EvalError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    let mut cell = String::new();
    for (label, curve) in curves {
        let iou = format!("{:.6}", curve.iou_threshold);
        for (b, r) in curve.budgets.iter().zip(&curve.recall) {
            cell.clear();
            let _ = write!(cell, "{r:.6}");
            w.write_record([label, iou.as_str(), &b.to_string(), cell.as_str()])?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_curve_csv(curve: &RecallCurve, strategy_label: &str) -> Result<String, EvalError> {
    write_curves_csv([(strategy_label, curve)])
}

/// Reads curves written by [`write_curves_csv`]; consecutive rows sharing strategy and
/// threshold form one curve.
pub fn read_curves_csv(text: &str) -> Result<Vec<(String, RecallCurve)>, EvalError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(EvalError::CsvFormat {
            row: 0,
            msg: format!("expected header {}", CSV_HEADER.join(",")),
        });
    }
    let mut out: Vec<(String, RecallCurve)> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let bad = |msg: String| EvalError::CsvFormat { row, msg };
        let field = |k: usize| rec.get(k).ok_or_else(|| bad(format!("missing column {k}")));
        let label = field(0)?.to_string();
        let iou: f64 = field(1)?.parse().map_err(|_| bad("bad iou".into()))?;
        let budget: usize = field(2)?.parse().map_err(|_| bad("bad budget".into()))?;
        let recall: f64 = field(3)?.parse().map_err(|_| bad("bad recall".into()))?;
        match out.last_mut() {
            Some((l, c)) if *l == label && c.iou_threshold == iou => {
                c.budgets.push(budget);
                c.recall.push(recall);
            }
            _ => out.push((
                label,
                RecallCurve {
                    budgets: vec![budget],
                    recall: vec![recall],
                    iou_threshold: iou,
                },
            )),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> Box2D {
        Box2D::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn identical_boxes_match_in_order() {
        let anns = [
            b(0., 0., 10., 10.),
            b(20., 0., 30., 10.),
            b(40., 0., 50., 10.),
        ];
        let m = match_proposals(&anns, &anns, 0.5);
        assert_eq!(m.matched_pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert!(m.unmatched_annotations.is_empty());
    }

    #[test]
    fn one_proposal_takes_one_annotation() {
        let anns = [b(0., 0., 10., 10.), b(1., 0., 11., 10.)];
        let props = [b(1., 0., 11., 10.)];
        let m = match_proposals(&anns, &props, 0.5);
        assert_eq!(m.matched_pairs, vec![(1, 0)]);
        assert_eq!(m.unmatched_annotations, vec![0]);
    }

    #[test]
    fn ties_go_to_smaller_index() {
        let anns = [b(0., 0., 10., 10.), b(0., 0., 10., 10.)];
        let m = match_proposals(&anns, &[b(0., 0., 10., 10.)], 0.5);
        assert_eq!(m.matched_pairs, vec![(0, 0)]);
    }

    #[test]
    fn empty_proposals_leave_everything_unmatched() {
        let anns = [b(0., 0., 10., 10.), b(20., 0., 30., 10.)];
        let m = match_proposals(&anns, &[], 0.5);
        assert!(m.matched_pairs.is_empty());
        assert_eq!(m.unmatched_annotations, vec![0, 1]);
    }

    #[test]
    fn curve_examples() {
        let anns = vec![b(0., 0., 10., 10.), b(20., 0., 30., 10.)];
        let mut props = vec![b(100., 0., 110., 10.)];
        props.extend(anns.iter().copied());
        let scenes = [EvalScene {
            annotations: &anns,
            proposals: &props,
        }];
        let c = recall_curve(&scenes, &[0, 1, 2, 3, 10], 0.5).unwrap();
        assert_eq!(c.recall, vec![0.0, 0.0, 0.5, 1.0, 1.0]);
        let empty = [EvalScene {
            annotations: &[],
            proposals: &props,
        }];
        assert!(matches!(
            recall_curve(&empty, &[1], 0.5),
            Err(EvalError::NoAnnotations)
        ));
        assert!(recall_curve(&scenes, &[5, 1], 0.5).is_err());
        assert!(recall_curve(&scenes, &[1], 0.0).is_err());
    }

    #[test]
    fn csv_layout_and_round_trip() {
        let c = RecallCurve {
            budgets: vec![100],
            recall: vec![2.0 / 3.0],
            iou_threshold: 0.5,
        };
        let text = write_curve_csv(&c, "hor-cc").unwrap();
        assert_eq!(
            text,
            "strategy,iou,budget,recall\nhor-cc,0.500000,100,0.666667\n"
        );

        let c2 = RecallCurve {
            budgets: vec![1, 10],
            recall: vec![0.25, 0.5],
            iou_threshold: 0.75,
        };
        let text = write_curves_csv([("a,b", &c2), ("plain", &c2)]).unwrap();
        assert!(text.contains("\"a,b\",0.750000,1,0.250000\n"));
        let back = read_curves_csv(&text).unwrap();
        assert_eq!(
            back,
            vec![("a,b".to_string(), c2.clone()), ("plain".to_string(), c2)]
        );
    }
}
