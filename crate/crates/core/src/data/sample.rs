use ndarray::{Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{OpgError, Result};

/// Where a sample came from: the dataset as-is, or a distribution-shifting
/// transform of a seen training sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Original,
    PseudoUnseen,
}

/// Which shift produced a pseudo-unseen sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationTag {
    None,
    R90,
    R180,
    R270,
    /// Counter-clockwise angle in degrees.
    Arbitrary(f32),
    /// Non-geometric shift (blur, noise, jitter, cutout).
    Photometric,
}

impl RotationTag {
    /// Quarter-turn count for 90x rotations.
    pub fn quarter_turns(&self) -> Option<u8> {
        match self {
            RotationTag::R90 => Some(1),
            RotationTag::R180 => Some(2),
            RotationTag::R270 => Some(3),
            _ => None,
        }
    }

    pub fn from_quarter_turns(k: u8) -> Option<Self> {
        match k {
            1 => Some(RotationTag::R90),
            2 => Some(RotationTag::R180),
            3 => Some(RotationTag::R270),
            _ => None,
        }
    }
}

/// One image with its label and provenance.
///
/// `pixels` is laid out height x width x channels with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub pixels: Array3<f32>,
    pub label: usize,
    pub origin: Origin,
    pub rotation: RotationTag,
}

impl ImageSample {
    pub fn original(pixels: Array3<f32>, label: usize) -> Result<Self> {
        let s = ImageSample {
            pixels,
            label,
            origin: Origin::Original,
            rotation: RotationTag::None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.pixels.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self.pixels.iter().find(|v| !(0.0..=1.0).contains(*v) || v.is_nan()) {
            return Err(OpgError::validation(format!("pixel value {v} outside [0, 1]")));
        }
        match (self.origin, self.rotation) {
            (Origin::Original, RotationTag::None) => Ok(()),
            (Origin::Original, tag) => Err(OpgError::validation(format!(
                "original sample carries shift tag {tag:?}"
            ))),
            (Origin::PseudoUnseen, RotationTag::None) => {
                Err(OpgError::validation("pseudo-unseen sample has no shift tag"))
            }
            (Origin::PseudoUnseen, _) => Ok(()),
        }
    }
}

/// An ordered group of samples sharing one pixel shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    samples: Vec<ImageSample>,
}

impl Batch {
    pub fn new(samples: Vec<ImageSample>) -> Result<Self> {
        if let Some(first) = samples.first() {
            let dims = first.dims();
            if let Some(bad) = samples.iter().find(|s| s.dims() != dims) {
                return Err(OpgError::Shape {
                    expected: format!("{dims:?}"),
                    got: format!("{:?}", bad.dims()),
                });
            }
        }
        Ok(Batch { samples })
    }

    pub fn samples(&self) -> &[ImageSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<ImageSample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Concatenates two batches, `self` first.
    pub fn union(&self, other: &Batch) -> Result<Batch> {
        let mut all = self.samples.clone();
        all.extend(other.samples.iter().cloned());
        Batch::new(all)
    }

    /// Stacks pixels into an `n x h x w x c` tensor.
    pub fn pixels(&self) -> Array4<f32> {
        stack_pixels(self.samples.iter())
    }
}

pub(crate) fn stack_pixels<'a>(samples: impl Iterator<Item = &'a ImageSample>) -> Array4<f32> {
    let views: Vec<_> = samples.map(|s| s.pixels.view()).collect();
    if views.is_empty() {
        return Array4::zeros((0, 0, 0, 0));
    }
    ndarray::stack(Axis(0), &views).expect("batch samples share dims")
}
