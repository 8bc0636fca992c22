use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{generate_pseudo_batch, AugmentSpec};
use crate::data::{Batch, SampleSet};
use crate::error::{OpgError, Result};
use crate::model::ModelState;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureOrigin {
    Seen,
    PseudoUnseen,
    Unseen,
}

impl FeatureOrigin {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureOrigin::Seen => "seen",
            FeatureOrigin::PseudoUnseen => "pseudo_unseen",
            FeatureOrigin::Unseen => "unseen",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDump {
    pub records: usize,
    pub sha256: String,
}

/// Shifted copies of `seen`, one per sample, drawn from a seeded stream.
pub fn pseudo_unseen_set(seen: &SampleSet, spec: &AugmentSpec, seed: u64) -> Result<SampleSet> {
    if seen.is_empty() {
        return Ok(SampleSet::default());
    }
    let mut rng = rng::stream(seed, &[0xfea7, spec.rng_seed]);
    let batch = Batch::new(seen.samples.clone())?;
    Ok(SampleSet::new(
        generate_pseudo_batch(&batch, spec, &mut rng)?.into_samples(),
    ))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| OpgError::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Writes a TSV of penultimate features: `id, origin, label, f0..fk`.
pub fn export_features(model: &ModelState, sets: &[(FeatureOrigin, &SampleSet)], path: &Path) -> Result<FeatureDump> {
    let width = model.spec.feature_width();
    let mut out = String::from("id\torigin\tlabel");
    for i in 0..width {
        write!(out, "\tf{i}").expect("string write");
    }
    out.push('\n');
    let mut id = 0usize;
    for (origin, set) in sets {
        if set.is_empty() {
            continue;
        }
        let feats = model.penultimate_features(&set.pixels())?;
        for (row, sample) in feats.rows().into_iter().zip(&set.samples) {
            write!(out, "{id}\t{}\t{}", origin.as_str(), sample.label).expect("string write");
            for v in row {
                write!(out, "\t{v}").expect("string write");
            }
            out.push('\n');
            id += 1;
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| OpgError::io(dir, e))?;
    }
    fs::write(path, &out).map_err(|e| OpgError::io(path, e))?;
    Ok(FeatureDump {
        records: id,
        sha256: format!("{:x}", Sha256::digest(out.as_bytes())),
    })
}
