use ndarray::{s, Array2};
use rand::Rng;

use crate::augment::{generate_pseudo_batch, AugmentSpec};
use crate::data::Batch;
use crate::error::Result;
use crate::eval::closed_set_predict;
use crate::losses::{
    ce_grad_logits, ce_loss, pairwise_bce_grad_logits, pairwise_bce_loss, softmax_rows, LossReport, LossWeights,
};
use crate::model::{Grads, ModelState};
use crate::pairing::{assign_pseudo_labels, build_pair_matrix, PolicyMode, PseudoLabelPolicy};

pub struct StepOutput {
    pub report: LossReport,
    pub grads: Grads,
    /// Correct closed-set predictions among the original samples.
    pub correct: usize,
    pub n_original: usize,
}

fn count_correct(probs: &Array2<f64>, labels: &[usize], r: usize) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| closed_set_predict(probs.row(i), r).is_ok_and(|p| p == y))
        .count()
}

/// CE-only gradients. The softmax runs over the seen sub-head, so logits of
/// the pseudo-unseen nodes receive no gradient at all.
pub fn step_one_gradients(model: &mut ModelState, batch: &Batch) -> Result<StepOutput> {
    let r = model.spec.r;
    let labels = batch.labels();
    let mask = vec![true; labels.len()];
    let (logits, cache) = model.forward_train(&batch.pixels())?;
    let sub = logits.slice(s![.., ..r]).mapv(f64::from);
    let probs = softmax_rows(sub.view());
    let ce = ce_loss(probs.view(), &labels, &mask, r)?;
    let g = ce_grad_logits(probs.view(), &labels, &mask, r)?;
    let mut dlogits = Array2::<f32>::zeros(logits.raw_dim());
    dlogits.slice_mut(s![.., ..r]).assign(&g.mapv(|v| v as f32));
    let grads = model.backward(&cache, &dlogits);
    Ok(StepOutput {
        report: LossReport::new(ce, 0.0, 0, LossWeights::STEP_ONE),
        grads,
        correct: count_correct(&probs, &labels, r),
        n_original: labels.len(),
    })
}

/// Joint gradients on `B ∪ B~`: CE over the rows of `batch`, pairwise BCE
/// over every ordered pair of the union.
pub fn step_two_gradients<R: Rng + ?Sized>(
    model: &mut ModelState,
    batch: &Batch,
    pseudo: &AugmentSpec,
    policy: PolicyMode,
    weights: LossWeights,
    eps: f64,
    rng: &mut R,
) -> Result<StepOutput> {
    let r = model.spec.r;
    let t = batch.len();
    let shifted = generate_pseudo_batch(batch, pseudo, rng)?;
    let labelled = assign_pseudo_labels(&shifted, &PseudoLabelPolicy::new(policy, r))?;
    let union = batch.union(&labelled)?;
    let pairs = build_pair_matrix(&union);
    let labels = union.labels();
    let mask: Vec<bool> = (0..union.len()).map(|i| i < t).collect();

    let (logits, cache) = model.forward_train(&union.pixels())?;
    let probs = softmax_rows(logits.mapv(f64::from).view());
    let ce = ce_loss(probs.view(), &labels, &mask, r)?;
    let bce = pairwise_bce_loss(probs.view(), &pairs, eps)?;
    let mut g = ce_grad_logits(probs.view(), &labels, &mask, r)? * weights.lambda1;
    if weights.lambda2 != 0.0 {
        g = g + pairwise_bce_grad_logits(probs.view(), &pairs, eps)? * weights.lambda2;
    }
    let grads = model.backward(&cache, &g.mapv(|v| v as f32));
    Ok(StepOutput {
        report: LossReport::new(ce, bce, pairs.m() * pairs.m(), weights),
        grads,
        correct: count_correct(&probs, &labels[..t], r),
        n_original: t,
    })
}
