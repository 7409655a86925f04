use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::nn::{positive_probability, Classifier, Tensor4};
use crate::seed::rng_for;
use crate::training::{Augmentation, ImageSet};

use super::metrics::roc_auc;

pub const DEFAULT_TTA_REPLICAS: usize = 50;

const TTA_BATCH: usize = 256;

/// Melanoma probabilities aligned with labels by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub ids: Vec<String>,
    pub probabilities: Vec<f32>,
    pub labels: Vec<bool>,
    pub model_hash: String,
    pub n_replicas: usize,
    pub noisecrop: bool,
}

impl PredictionSet {
    pub fn auc(&self) -> Result<f64> {
        roc_auc(&self.probabilities, &self.labels)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,label,probability\n");
        for ((id, &l), p) in self.ids.iter().zip(&self.labels).zip(&self.probabilities) {
            out.push_str(&format!("{id},{},{p:.6}\n", u8::from(l)));
        }
        out
    }
}

/// SHA-256 of the little-endian parameter bytes.
pub fn model_hash<M: Classifier>(model: &M) -> String {
    let mut h = Sha256::new();
    for p in model.params() {
        h.update(p.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Mean melanoma probability over `n_replicas` augmented copies of each
/// image. Replica `r` of sample `id` draws its augmentation from a stream
/// keyed by `(seed, id, r)`, so results do not depend on batching.
pub fn predict_tta<M: Classifier>(
    model: &M,
    images: &ImageSet,
    n_replicas: usize,
    augmentation: &Augmentation,
    seed: u64,
    noisecrop: bool,
) -> Result<PredictionSet> {
    if n_replicas == 0 {
        return Err(crate::error::Error::Config("n_replicas must be at least 1".into()));
    }
    let (h, w, c) = (images.h, images.w, images.c);
    let mut sums = vec![0.0f64; images.len()];
    let all: Vec<usize> = (0..images.len()).collect();
    for r in 0..n_replicas {
        for chunk in all.chunks(TTA_BATCH) {
            let mut data = Vec::with_capacity(chunk.len() * images.sample_len());
            for &i in chunk {
                let mut rng = rng_for(seed, "tta", &format!("{}/{r}", images.ids[i]));
                data.extend(augmentation.apply(images.sample(i), h, w, c, &mut rng));
            }
            let x = Tensor4 {
                n: chunk.len(),
                h,
                w,
                c,
                data,
            };
            let logits = model.forward(&x);
            for (&i, l) in chunk.iter().zip(logits.chunks_exact(2)) {
                sums[i] += f64::from(positive_probability(l));
            }
        }
    }
    Ok(PredictionSet {
        ids: images.ids.clone(),
        probabilities: sums.iter().map(|&s| (s / n_replicas as f64) as f32).collect(),
        labels: images.positives(),
        model_hash: model_hash(model),
        n_replicas,
        noisecrop,
    })
}
