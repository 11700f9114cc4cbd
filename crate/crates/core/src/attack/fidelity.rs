use serde::{Deserialize, Serialize};

use super::{AttackPrediction, Label};
use crate::error::{Error, Result};
use crate::ir::{ModelGraph, OpKind};

/// Unit-cost edit script summary between a prediction and the truth.
/// `deletions` are true ops missing from the prediction, `insertions` are
/// predicted ops with no true counterpart.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub insertions: usize,
    pub deletions: usize,
    pub substitutions: usize,
}

impl EditCounts {
    pub fn distance(&self) -> usize {
        self.insertions + self.deletions + self.substitutions
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityScore {
    pub value: f64,
    pub edits: EditCounts,
}

/// Levenshtein alignment of `pred` against `actual` with one backtrace.
pub fn edit_counts<P, A>(pred: &[P], actual: &[A], matches: impl Fn(&P, &A) -> bool) -> EditCounts {
    let (n, m) = (pred.len(), actual.len());
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in dp[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[i - 1][j - 1] + usize::from(!matches(&pred[i - 1], &actual[j - 1]));
            dp[i][j] = sub.min(dp[i - 1][j] + 1).min(dp[i][j - 1] + 1);
        }
    }

    let mut counts = EditCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let hit = matches(&pred[i - 1], &actual[j - 1]);
            if dp[i][j] == dp[i - 1][j - 1] + usize::from(!hit) {
                if !hit {
                    counts.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[i][j] == dp[i - 1][j] + 1 {
            counts.insertions += 1;
            i -= 1;
        } else {
            counts.deletions += 1;
            j -= 1;
        }
    }
    counts
}

/// `1 - L / max(|pred|, |actual|)` where `UNKNOWN` matches nothing.
pub fn fidelity_of_sequences(pred: &[Label], actual: &[OpKind]) -> Result<FidelityScore> {
    if actual.is_empty() {
        return Err(Error::Attack(
            "fidelity needs a non-empty ground truth".into(),
        ));
    }
    let edits = edit_counts(pred, actual, |p, a| *p == Label::Op(*a));
    let denom = pred.len().max(actual.len()) as f64;
    Ok(FidelityScore {
        value: 1.0 - edits.distance() as f64 / denom,
        edits,
    })
}

/// Scores a prediction against the topological op sequence of `actual`.
pub fn fidelity(pred: &AttackPrediction, actual: &ModelGraph) -> Result<FidelityScore> {
    fidelity_of_sequences(&pred.sequence, &actual.op_sequence())
}
