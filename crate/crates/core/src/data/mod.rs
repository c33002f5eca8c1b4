//! Character-image datasets: preprocessing to 50×50 grayscale, orientation
//! augmentation, JSON-lines manifests with stratified splits, and a
//! procedural glyph corpus for when no real images are at hand.

mod dataset;
mod image_ops;
mod manifest;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape2D, Tensor};

pub use dataset::{load_split, mean_intensity, nearest_centroid_accuracy, prepare, Dataset, PrepareOptions};
pub use image_ops::{grayscale, quantize, read_image, resize_bilinear, rotate, write_gray_png, LUMA_WEIGHTS};
pub use manifest::{build_manifest, split_dataset, DatasetManifest, ManifestRecord, SplitMode};

/// Canonical network input plane.
pub const INPUT_SHAPE: Shape2D = Shape2D::new(50, 50);

/// Orientation angles (degrees) produced from every base image.
pub const ORIENTATIONS: [f64; 5] = [-30.0, -15.0, 0.0, 15.0, 30.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Parse(format!("unknown split `{other}` (expected train or test)"))),
        }
    }
}

/// One labelled `[1, 50, 50]` image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub label: usize,
    pub orientation_deg: f64,
    pub split: Option<Split>,
    pub source_id: String,
}

impl Sample {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.image.shape() != [1, INPUT_SHAPE.height, INPUT_SHAPE.width] {
            return Err(Error::Data(format!(
                "{}: image must be 1x{INPUT_SHAPE}, got {:?}",
                self.source_id,
                self.image.shape()
            )));
        }
        if self.image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data(format!("{}: pixel values outside [0, 1]", self.source_id)));
        }
        if self.label >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: self.label,
                classes: num_classes,
            });
        }
        Ok(())
    }
}

/// Grayscale (if colour) and resize to the canonical 50×50 plane.
pub fn preprocess(image: &Tensor) -> Result<Tensor> {
    let gray = match image.shape().first() {
        Some(3) => grayscale(image)?,
        Some(1) => image.clone(),
        _ => {
            return Err(Error::InvalidShape {
                shape: image.shape().to_vec(),
                reason: "expected a 1- or 3-channel image".into(),
            })
        }
    };
    resize_bilinear(&gray, INPUT_SHAPE)
}

/// Rotated copies of a base image at `angles`, sharing its label, split and
/// source id.
pub fn augment(sample: &Sample, angles: &[f64]) -> Result<Vec<Sample>> {
    angles
        .iter()
        .map(|&angle| {
            Ok(Sample {
                image: rotate(&sample.image, angle)?,
                label: sample.label,
                orientation_deg: angle,
                split: sample.split,
                source_id: sample.source_id.clone(),
            })
        })
        .collect()
}

/// The five standard orientations of one base image.
pub fn augment_five(sample: &Sample) -> Result<Vec<Sample>> {
    augment(sample, &ORIENTATIONS)
}
