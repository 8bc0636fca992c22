use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{OpgError, Result};

/// Ground truth of a test sample as far as detection is concerned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrueOrigin {
    Seen,
    Unseen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub id: usize,
    pub origin: TrueOrigin,
    /// Training-space label for seen samples.
    pub label: Option<usize>,
    pub score: f64,
    pub predicted: usize,
}

fn check_row(row: ArrayView1<'_, f64>, r: usize) -> Result<()> {
    if r == 0 || r > row.len() {
        return Err(OpgError::validation(format!(
            "r = {r} does not fit a probability row of width {}",
            row.len()
        )));
    }
    Ok(())
}

/// Probability mass outside the seen classes: `1 - sum_{c<r} p_c`, clamped to [0, 1].
pub fn detection_score(row: ArrayView1<'_, f64>, r: usize) -> Result<f64> {
    check_row(row, r)?;
    let seen: f64 = row.iter().take(r).sum();
    Ok((1.0 - seen).clamp(0.0, 1.0))
}

/// Max-softmax reference: `1 - max_{c<r} p_c`.
pub fn msp_score(row: ArrayView1<'_, f64>, r: usize) -> Result<f64> {
    check_row(row, r)?;
    let max = row.iter().take(r).copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((1.0 - max).clamp(0.0, 1.0))
}

/// Argmax over the seen entries only; ties go to the lowest index.
pub fn closed_set_predict(row: ArrayView1<'_, f64>, r: usize) -> Result<usize> {
    check_row(row, r)?;
    let mut best = 0;
    for c in 1..r {
        if row[c] > row[best] {
            best = c;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Pseudo-unseen mass.
    Detection,
    /// One minus the largest seen probability.
    MaxSoftmax,
}

/// Scores every row of a probability matrix.
pub fn score_rows(
    probs: &Array2<f64>,
    r: usize,
    origin: TrueOrigin,
    labels: Option<&[usize]>,
    kind: ScoreKind,
    first_id: usize,
) -> Result<Vec<ScoredSample>> {
    if let Some(l) = labels {
        if l.len() != probs.nrows() {
            return Err(OpgError::Shape {
                expected: format!("{} labels", probs.nrows()),
                got: l.len().to_string(),
            });
        }
    }
    probs
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let score = match kind {
                ScoreKind::Detection => detection_score(row, r)?,
                ScoreKind::MaxSoftmax => msp_score(row, r)?,
            };
            Ok(ScoredSample {
                id: first_id + i,
                origin,
                label: labels.map(|l| l[i]),
                score,
                predicted: closed_set_predict(row, r)?,
            })
        })
        .collect()
}

/// Fraction of seen samples whose closed-set prediction matches the label.
/// Returns `None` when there are no labelled samples.
pub fn closed_set_accuracy(scored: &[ScoredSample]) -> Option<f64> {
    let labelled: Vec<_> = scored
        .iter()
        .filter_map(|s| s.label.map(|l| l == s.predicted))
        .collect();
    if labelled.is_empty() {
        return None;
    }
    Some(labelled.iter().filter(|&&ok| ok).count() as f64 / labelled.len() as f64)
}
