//! Classification and pairwise-similarity losses with analytic gradients.
//!
//! All functions work on `f64` probability matrices, one row per sample.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{OpgError, Result};
use crate::pairing::PairMatrix;

/// Default clamp applied to probability dot products before taking logs.
pub const DEFAULT_EPS: f64 = 1e-7;

/// Smallest probability fed to `ln` in the cross-entropy.
const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossWeights {
    pub const STEP_ONE: LossWeights = LossWeights {
        lambda1: 1.0,
        lambda2: 0.0,
    };
    pub const STEP_TWO: LossWeights = LossWeights {
        lambda1: 1.0,
        lambda2: 1.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub ce: f64,
    pub bce: f64,
    pub total: f64,
    pub n_pairs: usize,
}

impl LossReport {
    pub fn new(ce: f64, bce: f64, n_pairs: usize, w: LossWeights) -> Self {
        LossReport {
            ce,
            bce,
            total: total_loss(ce, bce, w),
            n_pairs,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.ce.is_finite() && self.bce.is_finite() && self.total.is_finite()
    }
}

pub fn total_loss(ce: f64, bce: f64, w: LossWeights) -> f64 {
    w.lambda1 * ce + w.lambda2 * bce
}

/// Row-wise softmax, max-shifted for stability.
pub fn softmax_rows(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Pulls a gradient with respect to softmax outputs back to the logits.
pub fn softmax_backward(probs: ArrayView2<'_, f64>, dprobs: ArrayView2<'_, f64>) -> Array2<f64> {
    let inner: Array1<f64> = (&probs * &dprobs).sum_axis(Axis(1));
    let mut out = dprobs.to_owned();
    Zip::from(out.rows_mut())
        .and(&inner)
        .for_each(|mut row, &s| row.mapv_inplace(|v| v - s));
    out * probs
}

fn check_ce_inputs(probs: ArrayView2<'_, f64>, labels: &[usize], seen_mask: &[bool], r: usize) -> Result<usize> {
    let n = probs.nrows();
    if labels.len() != n || seen_mask.len() != n {
        return Err(OpgError::Shape {
            expected: format!("{n} labels and mask entries"),
            got: format!("{} labels, {} mask entries", labels.len(), seen_mask.len()),
        });
    }
    if r > probs.ncols() {
        return Err(OpgError::validation(format!(
            "r = {r} exceeds probability width {}",
            probs.ncols()
        )));
    }
    let mut count = 0;
    for (&y, &m) in labels.iter().zip(seen_mask) {
        if m {
            if y >= r {
                return Err(OpgError::validation(format!("seen label {y} outside 0..{r}")));
            }
            count += 1;
        }
    }
    Ok(count)
}

/// Mean negative log-likelihood of the true class over masked (seen) rows.
/// An empty mask gives 0.
pub fn ce_loss(probs: ArrayView2<'_, f64>, labels: &[usize], seen_mask: &[bool], r: usize) -> Result<f64> {
    let n = check_ce_inputs(probs, labels, seen_mask, r)?;
    if n == 0 {
        log::warn!("cross-entropy over an empty seen mask; returning 0");
        return Ok(0.0);
    }
    let sum: f64 = labels
        .iter()
        .zip(seen_mask)
        .enumerate()
        .filter(|(_, (_, &m))| m)
        .map(|(i, (&y, _))| -probs[[i, y]].max(PROB_FLOOR).ln())
        .sum();
    Ok(sum / n as f64)
}

/// Gradient of [`ce_loss`] with respect to the logits that produced `probs`.
pub fn ce_grad_logits(
    probs: ArrayView2<'_, f64>,
    labels: &[usize],
    seen_mask: &[bool],
    r: usize,
) -> Result<Array2<f64>> {
    let n = check_ce_inputs(probs, labels, seen_mask, r)?;
    let mut grad = Array2::zeros(probs.raw_dim());
    if n == 0 {
        return Ok(grad);
    }
    let scale = 1.0 / n as f64;
    for (i, (&y, &m)) in labels.iter().zip(seen_mask).enumerate() {
        if m {
            let mut row = grad.row_mut(i);
            row.assign(&probs.row(i));
            row[y] -= 1.0;
            row.mapv_inplace(|v| v * scale);
        }
    }
    Ok(grad)
}

fn check_pairs(probs: ArrayView2<'_, f64>, pairs: &PairMatrix) -> Result<()> {
    if probs.nrows() != pairs.m() {
        return Err(OpgError::Shape {
            expected: format!("{} probability rows", pairs.m()),
            got: probs.nrows().to_string(),
        });
    }
    Ok(())
}

/// Pairwise binary cross-entropy on probability dot products, averaged
/// over all `M^2` ordered pairs including self-pairs.
pub fn pairwise_bce_loss(probs: ArrayView2<'_, f64>, pairs: &PairMatrix, eps: f64) -> Result<f64> {
    check_pairs(probs, pairs)?;
    let m = probs.nrows();
    if m == 0 {
        return Ok(0.0);
    }
    let dots = probs.dot(&probs.t());
    let mut sum = 0.0;
    for ((k, l), &d) in dots.indexed_iter() {
        let d = d.clamp(eps, 1.0 - eps);
        sum += if pairs.get(k, l) { d.ln() } else { (1.0 - d).ln() };
    }
    Ok(-sum / (m * m) as f64)
}

/// Gradient of [`pairwise_bce_loss`] with respect to the probability rows.
/// Clamped dot products contribute no gradient.
pub fn pairwise_bce_grad_probs(probs: ArrayView2<'_, f64>, pairs: &PairMatrix, eps: f64) -> Result<Array2<f64>> {
    check_pairs(probs, pairs)?;
    let m = probs.nrows();
    if m == 0 {
        return Ok(Array2::zeros(probs.raw_dim()));
    }
    let scale = 1.0 / (m * m) as f64;
    let dots = probs.dot(&probs.t());
    let g = Array2::from_shape_fn((m, m), |(k, l)| {
        let d = dots[[k, l]];
        if d < eps || d > 1.0 - eps {
            0.0
        } else if pairs.get(k, l) {
            -scale / d
        } else {
            scale / (1.0 - d)
        }
    });
    let sym = &g + &g.t();
    Ok(sym.dot(&probs))
}

/// Gradient of [`pairwise_bce_loss`] with respect to the logits behind `probs`.
pub fn pairwise_bce_grad_logits(probs: ArrayView2<'_, f64>, pairs: &PairMatrix, eps: f64) -> Result<Array2<f64>> {
    let dp = pairwise_bce_grad_probs(probs, pairs, eps)?;
    Ok(softmax_backward(probs, dp.view()))
}
