use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use ndarray::Array4;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::manifest::{decode_entries, Dataset, Entry, Partition};
use crate::data::sample::{stack_pixels, ImageSample};
use crate::error::{OpgError, Result};
use crate::rng;

/// Partition of a dataset's classes into seen (training) and unseen classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub dataset_name: String,
    pub split_index: u32,
    pub seen_classes: Vec<usize>,
    pub unseen_classes: Vec<usize>,
}

impl SplitSpec {
    pub fn new(
        dataset_name: impl Into<String>,
        split_index: u32,
        seen_classes: Vec<usize>,
        unseen_classes: Vec<usize>,
    ) -> Result<Self> {
        let s = SplitSpec {
            dataset_name: dataset_name.into(),
            split_index,
            seen_classes,
            unseen_classes,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| OpgError::io(path, e))?;
        let spec: SplitSpec =
            toml::from_str(&text).map_err(|e| OpgError::config(path.display().to_string(), e.message()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("split spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seen_classes.len() < 2 {
            return Err(OpgError::validation("split needs at least 2 seen classes"));
        }
        if self.unseen_classes.is_empty() {
            return Err(OpgError::validation("split needs at least 1 unseen class"));
        }
        let seen: BTreeSet<_> = self.seen_classes.iter().collect();
        let unseen: BTreeSet<_> = self.unseen_classes.iter().collect();
        if seen.len() != self.seen_classes.len() || unseen.len() != self.unseen_classes.len() {
            return Err(OpgError::validation("split lists a class twice"));
        }
        if let Some(c) = seen.intersection(&unseen).next() {
            return Err(OpgError::validation(format!("class {c} is both seen and unseen")));
        }
        Ok(())
    }

    /// Number of seen classes, `r`.
    pub fn r(&self) -> usize {
        self.seen_classes.len()
    }

    /// Number of unseen classes, `q`.
    pub fn q(&self) -> usize {
        self.unseen_classes.len()
    }

    pub fn openness(&self) -> f64 {
        let r = self.r() as u64;
        compute_openness(r, r + self.q() as u64, r).expect("validated split")
    }

    pub fn class_map(&self) -> ClassMap {
        ClassMap {
            seen: self.seen_classes.clone(),
        }
    }
}

/// Openness of a task in percent: `(1 - sqrt(2 n_train / (n_test + n_target))) * 100`.
pub fn compute_openness(n_train: u64, n_test: u64, n_target: u64) -> Result<f64> {
    if n_train == 0 || n_test == 0 {
        return Err(OpgError::Domain(format!(
            "openness needs positive class counts, got n_train={n_train}, n_test={n_test}"
        )));
    }
    if n_test < n_target {
        return Err(OpgError::Domain(format!(
            "n_test ({n_test}) must be >= n_target ({n_target})"
        )));
    }
    let ratio = 2.0 * n_train as f64 / (n_test + n_target) as f64;
    Ok((1.0 - ratio.sqrt()) * 100.0)
}

/// Bijection between original seen class ids and training labels `0..r`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    seen: Vec<usize>,
}

impl ClassMap {
    pub fn to_training(&self, original: usize) -> Option<usize> {
        self.seen.iter().position(|&c| c == original)
    }

    pub fn to_original(&self, training: usize) -> Option<usize> {
        self.seen.get(training).copied()
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

/// Immutable collection of decoded samples.
#[derive(Debug, Clone, Default)]
pub struct SampleSet {
    pub samples: Vec<ImageSample>,
}

impl SampleSet {
    pub fn new(samples: Vec<ImageSample>) -> Self {
        SampleSet { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dims(&self) -> Option<(usize, usize, usize)> {
        self.samples.first().map(|s| s.dims())
    }

    /// Stacks pixels into an `n x h x w x c` tensor.
    pub fn pixels(&self) -> Array4<f32> {
        stack_pixels(self.samples.iter())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

/// Train/test sets for one split. Seen labels are remapped to `0..r`;
/// unseen test samples keep their original class id.
#[derive(Debug, Clone)]
pub struct SplitSets {
    pub seen_train: SampleSet,
    pub seen_test: SampleSet,
    pub unseen_test: SampleSet,
    pub class_map: ClassMap,
}

/// How to carve a test partition when the dataset ships none.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Holdout {
    pub fraction: f64,
    pub seed: u64,
}

impl Default for Holdout {
    fn default() -> Self {
        Holdout { fraction: 0.3, seed: 0 }
    }
}

pub fn make_split(dataset: &Dataset, spec: &SplitSpec, holdout: Holdout) -> Result<SplitSets> {
    spec.validate()?;
    for &c in spec.seen_classes.iter().chain(&spec.unseen_classes) {
        if c >= dataset.num_classes() {
            return Err(OpgError::validation(format!(
                "split references class {c} but dataset has {} classes",
                dataset.num_classes()
            )));
        }
    }
    if !(0.0..1.0).contains(&holdout.fraction) {
        return Err(OpgError::validation("holdout fraction must be in [0, 1)"));
    }

    let partitioned = dataset.has_test_partition();
    let split_class = |class: usize| -> (Vec<&Entry>, Vec<&Entry>) {
        if partitioned {
            dataset
                .class_entries(class)
                .partition(|e| e.partition == Partition::Train)
        } else {
            let mut all: Vec<&Entry> = dataset.class_entries(class).collect();
            let mut r = rng::stream(holdout.seed, &[0x5e11, class as u64]);
            all.shuffle(&mut r);
            let n_test = (all.len() as f64 * holdout.fraction).round() as usize;
            let test = all.split_off(all.len() - n_test);
            (all, test)
        }
    };

    let map = spec.class_map();
    let mut seen_train = Vec::new();
    let mut seen_test = Vec::new();
    for &c in &spec.seen_classes {
        let (tr, te) = split_class(c);
        seen_train.extend(tr);
        seen_test.extend(te);
    }
    let mut unseen_test = Vec::new();
    for &c in &spec.unseen_classes {
        unseen_test.extend(split_class(c).1);
    }
    let relabel = |c: usize| map.to_training(c).expect("seen class");
    let seen_train = decode_entries(&seen_train, relabel)?;
    let seen_test = decode_entries(&seen_test, relabel)?;
    let unseen_test = decode_entries(&unseen_test, |c| c)?;

    let dims = seen_train.first().map(|s| s.dims());
    if let Some(d) = dims {
        if let Some(bad) = seen_test.iter().chain(&unseen_test).find(|s| s.dims() != d) {
            return Err(OpgError::Shape {
                expected: format!("{d:?}"),
                got: format!("{:?}", bad.dims()),
            });
        }
    }
    Ok(SplitSets {
        seen_train: SampleSet::new(seen_train),
        seen_test: SampleSet::new(seen_test),
        unseen_test: SampleSet::new(unseen_test),
        class_map: map,
    })
}
