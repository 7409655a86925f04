use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::augment::Augmentation;
use crate::bias::EnvironmentKey;
use crate::dataset::{read_rgb, DatasetManifest};
use crate::error::{Error, Result};
use crate::nn::{image_to_input, positive_probability, Classifier, Tensor4};
use crate::seed::{rng_for, Rng};

/// Decoded, normalized images of a manifest subset, kept in memory.
#[derive(Debug, Clone)]
pub struct ImageSet {
    pub ids: Vec<String>,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub inputs: Vec<f32>,
    pub labels: Vec<usize>,
    pub keys: Vec<EnvironmentKey>,
}

impl ImageSet {
    pub fn load(manifest: &DatasetManifest, ids: &[String]) -> Result<Self> {
        let positions = manifest.positions(ids)?;
        let decoded: Vec<(u32, u32, Vec<f32>)> = positions
            .par_iter()
            .map(|&p| -> Result<_> {
                let img = read_rgb(&manifest.image_path(&manifest.records[p]))?;
                Ok((img.width(), img.height(), image_to_input(&img)))
            })
            .collect::<Result<_>>()?;
        let (w, h) = decoded
            .first()
            .map(|d| (d.0 as usize, d.1 as usize))
            .ok_or_else(|| Error::Config("empty image set".into()))?;
        let mut inputs = Vec::with_capacity(decoded.len() * h * w * 3);
        for (id, (dw, dh, data)) in ids.iter().zip(decoded) {
            if (dw as usize, dh as usize) != (w, h) {
                return Err(Error::Dimension(format!("image `{id}` is {dw}x{dh}, expected {w}x{h}")));
            }
            inputs.extend_from_slice(&data);
        }
        let records = positions.iter().map(|&p| &manifest.records[p]);
        Ok(Self {
            ids: ids.to_vec(),
            h,
            w,
            c: 3,
            inputs,
            labels: records.clone().map(|r| r.label.index()).collect(),
            keys: records.map(EnvironmentKey::of).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let len = self.sample_len();
        &self.inputs[i * len..(i + 1) * len]
    }

    /// Stacks the given samples, augmenting each when `augment` is given.
    pub fn batch(&self, indices: &[usize], augment: Option<(&Augmentation, &mut Rng)>) -> Tensor4 {
        match augment {
            None => Tensor4::stack(self.h, self.w, self.c, indices.iter().map(|&i| self.sample(i))),
            Some((aug, rng)) => {
                let mut data = Vec::with_capacity(indices.len() * self.sample_len());
                for &i in indices {
                    data.extend(aug.apply(self.sample(i), self.h, self.w, self.c, rng));
                }
                Tensor4 {
                    n: indices.len(),
                    h: self.h,
                    w: self.w,
                    c: self.c,
                    data,
                }
            }
        }
    }

    pub fn positives(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l == 1).collect()
    }
}

/// Stratified random (fit, validation) index split of `labels`; each class
/// contributes `round(fraction * n_class)` validation samples, at least one
/// and never the whole class.
pub fn validation_split(labels: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "validation fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut rng = rng_for(seed, "validation-split", "");
    let mut fit = Vec::new();
    let mut val = Vec::new();
    for class in 0..2 {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < 2 {
            return Err(Error::UndefinedMetric(format!(
                "class {class} has {} training sample(s); the validation split needs both classes",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let n_val = ((fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1);
        val.extend_from_slice(&members[..n_val]);
        fit.extend_from_slice(&members[n_val..]);
    }
    fit.sort_unstable();
    val.sort_unstable();
    Ok((fit, val))
}

impl ImageSet {
    /// Plain (un-augmented) melanoma probabilities for the given samples.
    pub fn predict<M: Classifier>(&self, model: &M, indices: &[usize]) -> Vec<f32> {
        let mut out = Vec::with_capacity(indices.len());
        for chunk in indices.chunks(PREDICT_BATCH) {
            let logits = model.forward(&self.batch(chunk, None));
            out.extend(logits.chunks_exact(2).map(positive_probability));
        }
        out
    }
}

pub(crate) const PREDICT_BATCH: usize = 256;
