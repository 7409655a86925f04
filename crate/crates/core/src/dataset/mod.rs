//! Manifests, image I/O and the synthetic biased-image generator.

mod manifest;
mod synth;

pub use manifest::{
    load_manifest, AnnotationSource, Censoring, DatasetManifest, Label, MaskProvenance, SampleRecord,
    CANONICAL_COLUMNS, CENSORING_COLUMNS,
};
pub use synth::{generate_synthetic, sample_id, solve_contingency, ArtifactBias, SyntheticConfig};

use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::error::Result;

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)?.into_rgb8())
}

pub fn read_gray(path: &Path) -> Result<GrayImage> {
    Ok(image::open(path)?.into_luma8())
}
