//! Dataset manifests, class splits, openness and batch iteration.

mod batch;
mod manifest;
mod sample;
mod split;

pub use batch::{iterate_batches, shuffled_indices, Batches};
pub use manifest::{decode_image, load_manifest, Dataset, Entry, Partition};
pub use sample::{Batch, ImageSample, Origin, RotationTag};
pub use split::{compute_openness, make_split, ClassMap, Holdout, SampleSet, SplitSets, SplitSpec};
