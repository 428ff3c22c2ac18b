//! Accuracy, rank AUC and the Pass / Fail / Degenerate verdict.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bag::{Bag, Label};
use crate::error::{Error, Result};
use crate::milgen::TestId;

pub const DEFAULT_MARGIN: f64 = 0.1;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Finite score per bag id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    entries: BTreeMap<u64, f64>,
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, bag_id: u64, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::validation(
                "score",
                format!("bag {bag_id} has non-finite score {score}"),
            ));
        }
        if self.entries.insert(bag_id, score).is_some() {
            return Err(Error::Integrity {
                bag_id,
                reason: "duplicate score".into(),
            });
        }
        Ok(())
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (u64, f64)>) -> Result<Self> {
        let mut table = Self::new();
        for (id, s) in pairs {
            table.insert(id, s)?;
        }
        Ok(table)
    }

    pub fn get(&self, bag_id: u64) -> Option<f64> {
        self.entries.get(&bag_id).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }

    /// Same ids with every score passed through `f`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_pairs(self.iter().map(|(id, s)| (id, f(s))))
    }
}

pub type LabelMap = BTreeMap<u64, Label>;

pub fn labels_of(bags: &[Bag]) -> LabelMap {
    bags.iter().map(|b| (b.bag_id(), b.label())).collect()
}

fn joined(scores: &ScoreTable, labels: &LabelMap) -> Result<Vec<(f64, bool)>> {
    let mut out = Vec::with_capacity(labels.len());
    for (&id, &label) in labels {
        let score = scores.get(id).ok_or_else(|| Error::Integrity {
            bag_id: id,
            reason: "no score for labelled bag".into(),
        })?;
        out.push((score, label.is_positive()));
    }
    Ok(out)
}

/// Mann-Whitney estimate of P(score+ > score-) + P(tie) / 2.
///
/// Sorts once and assigns midranks to tie groups. The statistic is carried as
/// an exact integer (twice the U statistic) so the final division is the only
/// rounding step.
pub fn auc(scores: &ScoreTable, labels: &LabelMap) -> Result<f64> {
    let mut pairs = joined(scores, labels)?;
    let n_pos = pairs.iter().filter(|p| p.1).count() as u128;
    let n_neg = pairs.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs at least one positive and one negative bag".into(),
        ));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Doubled ranks: a tie group covering 1-based ranks lo..=hi has
    // doubled midrank lo + hi.
    let mut doubled_rank_sum: u128 = 0;
    let mut start = 0;
    while start < pairs.len() {
        let mut end = start + 1;
        while end < pairs.len() && pairs[end].0 == pairs[start].0 {
            end += 1;
        }
        let doubled_mid = (start + 1 + end) as u128;
        let positives = pairs[start..end].iter().filter(|p| p.1).count() as u128;
        doubled_rank_sum += doubled_mid * positives;
        start = end;
    }
    let doubled_u = doubled_rank_sum - n_pos * (n_pos + 1);
    Ok(doubled_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// Fraction of bags where `score >= threshold` agrees with a positive label.
pub fn accuracy(scores: &ScoreTable, labels: &LabelMap, threshold: f64) -> Result<f64> {
    let pairs = joined(scores, labels)?;
    if pairs.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty split".into()));
    }
    let correct = pairs
        .iter()
        .filter(|(s, y)| (*s >= threshold) == *y)
        .count();
    Ok(correct as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub positive: usize,
    pub negative: usize,
}

impl LabelCounts {
    pub fn of(labels: &LabelMap) -> Self {
        let positive = labels.values().filter(|l| l.is_positive()).count();
        Self {
            positive,
            negative: labels.len() - positive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub test_id: TestId,
    pub train_accuracy: f64,
    pub train_auc: f64,
    pub test_accuracy: f64,
    pub test_auc: f64,
    pub train_counts: LabelCounts,
    pub test_counts: LabelCounts,
}

impl EvalReport {
    pub fn evaluate(
        test_id: TestId,
        train_scores: &ScoreTable,
        train_labels: &LabelMap,
        test_scores: &ScoreTable,
        test_labels: &LabelMap,
    ) -> Result<Self> {
        Ok(Self {
            test_id,
            train_accuracy: accuracy(train_scores, train_labels, DEFAULT_THRESHOLD)?,
            train_auc: auc(train_scores, train_labels)?,
            test_accuracy: accuracy(test_scores, test_labels, DEFAULT_THRESHOLD)?,
            test_auc: auc(test_scores, test_labels)?,
            train_counts: LabelCounts::of(train_labels),
            test_counts: LabelCounts::of(test_labels),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictStatus {
    Pass,
    Fail,
    Degenerate,
}

impl fmt::Display for VerdictStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerdictStatus::Pass => "pass",
            VerdictStatus::Fail => "fail",
            VerdictStatus::Degenerate => "degenerate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: VerdictStatus,
    pub margin: f64,
    pub test_id: TestId,
    pub train_auc: f64,
    pub test_auc: f64,
}

/// Fail when the model fits the training distribution but ranks the test
/// distribution backwards; Pass when both are above chance by `margin`.
/// Anything else is Degenerate: neither certified nor condemned.
pub fn verdict(report: &EvalReport, margin: f64) -> Verdict {
    let high = 0.5 + margin;
    let low = 0.5 - margin;
    let status = if report.train_auc >= high && report.test_auc <= low {
        VerdictStatus::Fail
    } else if report.train_auc >= high && report.test_auc >= high {
        VerdictStatus::Pass
    } else {
        VerdictStatus::Degenerate
    };
    Verdict {
        status,
        margin,
        test_id: report.test_id,
        train_auc: report.train_auc,
        test_auc: report.test_auc,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(pairs: &[(u64, f64)]) -> ScoreTable {
        ScoreTable::from_pairs(pairs.iter().copied()).unwrap()
    }

    fn labels(pairs: &[(u64, bool)]) -> LabelMap {
        pairs.iter().map(|&(id, p)| (id, Label::from(p))).collect()
    }

    fn report(train_auc: f64, test_auc: f64) -> EvalReport {
        let counts = LabelCounts {
            positive: 1,
            negative: 1,
        };
        EvalReport {
            test_id: TestId::Standard,
            train_accuracy: 0.5,
            train_auc,
            test_accuracy: 0.5,
            test_auc,
            train_counts: counts,
            test_counts: counts,
        }
    }

    #[test]
    fn perfect_separation() {
        let s = table(&[(0, 0.9), (1, 0.8), (2, 0.1)]);
        let y = labels(&[(0, true), (1, true), (2, false)]);
        assert_eq!(auc(&s, &y).unwrap(), 1.0);
    }

    #[test]
    fn all_ties_give_one_half() {
        let s = table(&[(0, 0.3), (1, 0.3), (2, 0.3), (3, 0.3)]);
        let y = labels(&[(0, true), (1, false), (2, true), (3, false)]);
        assert_eq!(auc(&s, &y).unwrap(), 0.5);
    }

    #[test]
    fn one_win_one_loss() {
        let s = table(&[(0, 0.8), (1, 0.2), (2, 0.5)]);
        let y = labels(&[(0, true), (1, true), (2, false)]);
        assert_eq!(auc(&s, &y).unwrap(), 0.5);
    }

    #[test]
    fn missing_score_names_the_bag() {
        let s = table(&[(0, 0.8)]);
        let y = labels(&[(0, true), (7, false)]);
        assert!(matches!(
            auc(&s, &y),
            Err(Error::Integrity { bag_id: 7, .. })
        ));
    }

    #[test]
    fn single_class_is_undefined() {
        let s = table(&[(0, 0.8), (1, 0.1)]);
        let y = labels(&[(0, true), (1, true)]);
        assert!(matches!(auc(&s, &y), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn duplicate_and_non_finite_scores_rejected() {
        let mut t = ScoreTable::new();
        t.insert(1, 0.5).unwrap();
        assert!(matches!(
            t.insert(1, 0.4),
            Err(Error::Integrity { bag_id: 1, .. })
        ));
        assert!(matches!(
            t.insert(2, f64::NAN),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn accuracy_cases() {
        let y = labels(&[(0, true), (1, false), (2, true), (3, false)]);
        let perfect = table(&[(0, 1.0), (1, 0.0), (2, 1.0), (3, 0.0)]);
        assert_eq!(accuracy(&perfect, &y, 0.5).unwrap(), 1.0);
        let flat = table(&[(0, 0.7), (1, 0.7), (2, 0.7), (3, 0.7)]);
        assert_eq!(accuracy(&flat, &y, 0.5).unwrap(), 0.5);
    }

    #[test]
    fn verdict_fixtures() {
        assert_eq!(verdict(&report(1.0, 0.0), 0.1).status, VerdictStatus::Fail);
        assert_eq!(
            verdict(&report(0.998, 1.0), 0.1).status,
            VerdictStatus::Pass
        );
        assert_eq!(
            verdict(&report(0.495, 0.488), 0.1).status,
            VerdictStatus::Degenerate
        );
    }

    #[test]
    fn verdict_boundaries_are_inclusive() {
        assert_eq!(
            verdict(&report(0.75, 0.25), 0.25).status,
            VerdictStatus::Fail
        );
        assert_eq!(
            verdict(&report(0.75, 0.75), 0.25).status,
            VerdictStatus::Pass
        );
        assert_eq!(
            verdict(&report(0.74, 0.1), 0.25).status,
            VerdictStatus::Degenerate
        );
    }
}
