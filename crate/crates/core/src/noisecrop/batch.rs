use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mask::BitMask;
use super::segment::fallback_segment;
use super::transform::{noisecrop, NoiseCropConfig};
use crate::dataset::{read_gray, read_rgb, Censoring, DatasetManifest, MaskProvenance, SampleRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseCropFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseCropSummary {
    pub source_manifest: String,
    pub config: NoiseCropConfig,
    pub transformed: usize,
    pub ground_truth_masks: usize,
    pub fallback_masks: usize,
    pub low_confidence: usize,
    pub failures: Vec<NoiseCropFailure>,
}

#[derive(Debug, Clone)]
pub struct BatchNoiseCrop {
    pub manifest: DatasetManifest,
    pub summary: NoiseCropSummary,
}

fn transform_one(
    source: &DatasetManifest,
    record: &SampleRecord,
    config: &NoiseCropConfig,
    out_dir: &Path,
) -> Result<SampleRecord> {
    let image = read_rgb(&source.image_path(record))?;
    let provided = match source.mask_path(record) {
        Some(path) => {
            let m = BitMask::from_gray(&read_gray(&path)?, MaskProvenance::GroundTruth);
            (!m.is_empty()).then_some(m)
        }
        None => None,
    };
    let mask = match provided {
        Some(m) => m,
        None => fallback_segment(&image),
    };
    let out = noisecrop(&image, &mask, config, &record.id)?;
    let image_path = format!("images/{}.png", record.id);
    let mask_path = format!("masks/{}.png", record.id);
    out.image.save(out_dir.join(&image_path))?;
    out.mask.to_gray().save(out_dir.join(&mask_path))?;
    Ok(SampleRecord {
        image_path,
        mask_path: Some(mask_path),
        censoring: Some(Censoring {
            mask_provenance: mask.provenance,
            low_confidence: mask.low_confidence,
        }),
        ..record.clone()
    })
}

/// Censors every record of `manifest` into `out_dir` (images, hull masks,
/// `manifest.csv`, `noisecrop_summary.json`). Records without a usable mask
/// go through the fallback segmenter. Failed records are reported in the
/// summary and left out of the new manifest.
pub fn batch_noisecrop(manifest: &DatasetManifest, config: &NoiseCropConfig, out_dir: &Path) -> Result<BatchNoiseCrop> {
    config.validate()?;
    fs::create_dir_all(out_dir.join("images"))?;
    fs::create_dir_all(out_dir.join("masks"))?;
    let results: Vec<Result<SampleRecord>> = manifest
        .records
        .par_iter()
        .map(|r| transform_one(manifest, r, config, out_dir))
        .collect();

    let mut records = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (source, result) in manifest.records.iter().zip(results) {
        match result {
            Ok(r) => records.push(r),
            Err(e) => failures.push(NoiseCropFailure {
                id: source.id.clone(),
                error: e.to_string(),
            }),
        }
    }
    let count = |p: MaskProvenance| {
        records
            .iter()
            .filter(|r| r.censoring.is_some_and(|c| c.mask_provenance == p))
            .count()
    };
    let summary = NoiseCropSummary {
        source_manifest: manifest.name.clone(),
        config: config.clone(),
        transformed: records.len(),
        ground_truth_masks: count(MaskProvenance::GroundTruth),
        fallback_masks: count(MaskProvenance::Fallback),
        low_confidence: records
            .iter()
            .filter(|r| r.censoring.is_some_and(|c| c.low_confidence))
            .count(),
        failures,
    };
    fs::write(
        out_dir.join("noisecrop_summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    if records.is_empty() {
        return Err(Error::Integrity(format!(
            "noisecrop failed for all {} records",
            manifest.len()
        )));
    }
    let mut new_manifest = DatasetManifest::new(format!("{}-noisecrop", manifest.name), out_dir, records)?;
    new_manifest.provenance = manifest.provenance.clone();
    new_manifest
        .provenance
        .insert("noisecrop_of".into(), manifest.name.clone());
    new_manifest
        .provenance
        .insert("noisecrop_seed".into(), config.seed.to_string());
    new_manifest.save(&out_dir.join("manifest.csv"))?;
    Ok(BatchNoiseCrop {
        manifest: new_manifest,
        summary,
    })
}
