//! Pseudo-unseen labels and the ground-truth pairwise similarity matrix.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, ImageSample, Origin};
use crate::error::{OpgError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// One pseudo label per seen class, whatever the rotation angle.
    #[default]
    PerSeenClass,
    /// One pseudo label per (seen class, quarter turn).
    PerClassAndAngle,
}

/// Maps shifted samples to labels `>= r`, disjoint from the seen range `0..r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PseudoLabelPolicy {
    pub mode: PolicyMode,
    pub r: usize,
}

impl PseudoLabelPolicy {
    pub fn new(mode: PolicyMode, r: usize) -> Self {
        PseudoLabelPolicy { mode, r }
    }

    pub fn label_for(&self, sample: &ImageSample) -> Result<usize> {
        if sample.origin != Origin::PseudoUnseen {
            return Err(OpgError::validation(
                "pseudo labels can only be assigned to pseudo-unseen samples",
            ));
        }
        if sample.label >= self.r {
            return Err(OpgError::validation(format!(
                "source label {} is outside the seen range 0..{}",
                sample.label, self.r
            )));
        }
        Ok(match self.mode {
            PolicyMode::PerSeenClass => self.r + sample.label,
            PolicyMode::PerClassAndAngle => {
                // Non-quarter-turn shifts share the first angle slot.
                let slot = sample.rotation.quarter_turns().map_or(0, |k| k as usize - 1);
                self.r + 3 * sample.label + slot
            }
        })
    }
}

/// Relabels every sample of a pseudo-unseen batch.
pub fn assign_pseudo_labels(batch: &Batch, policy: &PseudoLabelPolicy) -> Result<Batch> {
    let samples = batch
        .samples()
        .iter()
        .map(|s| {
            Ok(ImageSample {
                label: policy.label_for(s)?,
                ..s.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Batch::new(samples)
}

/// Binary `M x M` matrix with `s[k][l] = 1` exactly when labels `k` and `l` agree.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatrix {
    entries: Array2<u8>,
}

impl PairMatrix {
    pub fn from_labels(labels: &[usize]) -> Self {
        let m = labels.len();
        let entries = Array2::from_shape_fn((m, m), |(k, l)| u8::from(labels[k] == labels[l]));
        PairMatrix { entries }
    }

    pub fn m(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, k: usize, l: usize) -> bool {
        self.entries[[k, l]] == 1
    }

    pub fn entries(&self) -> &Array2<u8> {
        &self.entries
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.entries.mapv(f64::from)
    }

    pub fn num_similar(&self) -> usize {
        self.entries.iter().filter(|&&v| v == 1).count()
    }
}

pub fn build_pair_matrix(batch_union: &Batch) -> PairMatrix {
    PairMatrix::from_labels(&batch_union.labels())
}
