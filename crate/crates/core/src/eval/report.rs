use std::fs;
use std::path::Path;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use super::auroc::auroc;
use super::score::{closed_set_accuracy, score_rows, ScoreKind, ScoredSample, TrueOrigin};
use crate::data::SampleSet;
use crate::error::{OpgError, Result};
use crate::model::ModelState;

pub const DEFAULT_BINS: usize = 50;

/// Score histogram on `[0, 1]` with uniform bins, one count vector per origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: usize,
    pub seen: Vec<u64>,
    pub unseen: Vec<u64>,
}

impl Histogram {
    pub fn from_scores(scored: &[ScoredSample], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(OpgError::validation("histogram needs at least one bin"));
        }
        let mut h = Histogram {
            bins,
            seen: vec![0; bins],
            unseen: vec![0; bins],
        };
        for s in scored {
            let b = ((s.score.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
            match s.origin {
                TrueOrigin::Seen => h.seen[b] += 1,
                TrueOrigin::Unseen => h.unseen[b] += 1,
            }
        }
        Ok(h)
    }

    pub fn bin_edges(&self) -> Vec<f64> {
        (0..=self.bins).map(|i| i as f64 / self.bins as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub seen: usize,
    pub unseen: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Detection AUROC with unseen as the positive class.
    pub auroc: f64,
    /// The same ranking read with seen as the positive class.
    pub auroc_seen_positive: f64,
    /// AUROC of the max-softmax reference on the same model.
    pub msp_auroc: f64,
    pub closed_set_accuracy: f64,
    pub counts: Counts,
    pub r: usize,
    pub head_width: usize,
    pub histogram: Histogram,
    pub msp_histogram: Histogram,
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| OpgError::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| OpgError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Pre-stacked evaluation tensors.
#[derive(Debug, Clone)]
pub struct Probe {
    pub seen: Array4<f32>,
    pub seen_labels: Vec<usize>,
    pub unseen: Array4<f32>,
}

impl Probe {
    pub fn new(seen: &SampleSet, unseen: &SampleSet) -> Result<Self> {
        if seen.is_empty() {
            return Err(OpgError::validation("evaluation needs seen test samples"));
        }
        Ok(Probe {
            seen: seen.pixels(),
            seen_labels: seen.labels(),
            unseen: unseen.pixels(),
        })
    }

    pub fn has_unseen(&self) -> bool {
        self.unseen.dim().0 > 0
    }
}

/// Scored seen and unseen samples under one scoring rule.
pub fn score_probe(model: &ModelState, probe: &Probe, kind: ScoreKind) -> Result<Vec<ScoredSample>> {
    let r = model.spec.r;
    let p_seen = model.forward_probs(&probe.seen)?;
    let mut out = score_rows(&p_seen, r, TrueOrigin::Seen, Some(&probe.seen_labels), kind, 0)?;
    if probe.has_unseen() {
        let p_unseen = model.forward_probs(&probe.unseen)?;
        out.extend(score_rows(&p_unseen, r, TrueOrigin::Unseen, None, kind, out.len())?);
    }
    Ok(out)
}

/// Closed-set accuracy on the seen part of a probe.
pub fn probe_accuracy(model: &ModelState, probe: &Probe) -> Result<f64> {
    let p = model.forward_probs(&probe.seen)?;
    let scored = score_rows(
        &p,
        model.spec.r,
        TrueOrigin::Seen,
        Some(&probe.seen_labels),
        ScoreKind::Detection,
        0,
    )?;
    Ok(closed_set_accuracy(&scored).unwrap_or(0.0))
}

pub fn evaluate(model: &ModelState, probe: &Probe, bins: usize) -> Result<(EvalReport, Vec<ScoredSample>)> {
    if !probe.has_unseen() {
        return Err(OpgError::validation("evaluation needs unseen test samples"));
    }
    if let Some(&y) = probe.seen_labels.iter().find(|&&y| y >= model.spec.r) {
        return Err(OpgError::validation(format!(
            "seen label {y} does not fit a model trained with r = {}",
            model.spec.r
        )));
    }
    let scored = score_probe(model, probe, ScoreKind::Detection)?;
    let msp = score_probe(model, probe, ScoreKind::MaxSoftmax)?;
    let a = auroc(&scored)?;
    let report = EvalReport {
        auroc: a,
        auroc_seen_positive: 1.0 - a,
        msp_auroc: auroc(&msp)?,
        closed_set_accuracy: closed_set_accuracy(&scored).unwrap_or(0.0),
        counts: Counts {
            seen: probe.seen.dim().0,
            unseen: probe.unseen.dim().0,
        },
        r: model.spec.r,
        head_width: model.spec.head_width(),
        histogram: Histogram::from_scores(&scored, bins)?,
        msp_histogram: Histogram::from_scores(&msp, bins)?,
    };
    Ok((report, scored))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(origin: TrueOrigin, score: f64) -> ScoredSample {
        ScoredSample {
            id: 0,
            origin,
            label: None,
            score,
            predicted: 0,
        }
    }

    #[test]
    fn edge_scores_land_in_end_bins() {
        let s = [
            sample(TrueOrigin::Seen, 0.0),
            sample(TrueOrigin::Seen, 1.0),
            sample(TrueOrigin::Unseen, 0.5),
        ];
        let h = Histogram::from_scores(&s, 50).unwrap();
        assert_eq!(h.seen[0], 1);
        assert_eq!(h.seen[49], 1);
        assert_eq!(h.unseen[25], 1);
        assert_eq!(h.bin_edges().len(), 51);
        assert!(Histogram::from_scores(&s, 0).is_err());
    }

    proptest! {
        #[test]
        fn histogram_partitions_samples(
            scores in proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 0..200),
            bins in 1usize..64,
        ) {
            let s: Vec<_> = scores
                .iter()
                .map(|&(v, u)| sample(if u { TrueOrigin::Unseen } else { TrueOrigin::Seen }, v))
                .collect();
            let h = Histogram::from_scores(&s, bins).unwrap();
            let n_unseen = scores.iter().filter(|x| x.1).count() as u64;
            prop_assert_eq!(h.unseen.iter().sum::<u64>(), n_unseen);
            prop_assert_eq!(h.seen.iter().sum::<u64>(), scores.len() as u64 - n_unseen);
        }
    }
}
