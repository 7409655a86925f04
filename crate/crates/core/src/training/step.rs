//! Single optimization steps. All three methods share one weighted update:
//! per-sample cross-entropy losses are combined with per-sample weights
//! (ERM: `1/B`; GroupDRO: `q_g / n_g` for the sample's group), optionally
//! on a representation with some features muted (RSC).

use rand::seq::index::sample;

use crate::bias::EnvironmentKey;
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, Classifier, Sgd, Tensor4};
use crate::seed::Rng;

use super::groups::GroupWeights;

#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor4,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn weighted_update<M: Classifier>(
    model: &mut M,
    opt: &mut Sgd,
    batch: &Batch,
    mask: Option<&[f32]>,
    weights: impl FnOnce(&[f32]) -> Result<(Vec<f32>, f64)>,
) -> Result<(f64, Vec<f32>)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let n = batch.len();
    let (z, cache) = model.extract(&batch.x);
    let zin = match mask {
        Some(m) => z.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => z,
    };
    let logits = model.head(&zin, n);
    let mut losses = Vec::with_capacity(n);
    let mut dlogits = Vec::with_capacity(n * 2);
    for (i, &y) in batch.labels.iter().enumerate() {
        let (loss, g) = cross_entropy(&logits[i * 2..i * 2 + 2], y);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: 0,
                step: 0,
                loss,
            });
        }
        losses.push(loss);
        dlogits.extend_from_slice(&g);
    }
    let (w, objective) = weights(&losses)?;
    for (i, wi) in w.iter().enumerate() {
        dlogits[i * 2] *= wi;
        dlogits[i * 2 + 1] *= wi;
    }
    let mut grads = vec![0.0f32; model.num_params()];
    let mut dz = model.head_backward(&zin, &dlogits, n, &mut grads);
    if let Some(m) = mask {
        for (g, b) in dz.iter_mut().zip(m) {
            *g *= b;
        }
    }
    model.extract_backward(&cache, &dz, &mut grads);
    opt.step(model.params_mut(), &grads);
    Ok((objective, losses))
}

fn uniform_weights(losses: &[f32]) -> Result<(Vec<f32>, f64)> {
    let n = losses.len();
    let w = (1.0f64 / n as f64) as f32;
    let mean = losses.iter().map(|&l| f64::from(l)).sum::<f64>() / n as f64;
    Ok((vec![w; n], mean))
}

/// One SGD step on the mean cross-entropy of the batch. Returns the loss
/// before the update.
pub fn erm_step<M: Classifier>(model: &mut M, opt: &mut Sgd, batch: &Batch) -> Result<f64> {
    erm_step_losses(model, opt, batch).map(|o| o.0)
}

pub(crate) fn erm_step_losses<M: Classifier>(model: &mut M, opt: &mut Sgd, batch: &Batch) -> Result<(f64, Vec<f32>)> {
    weighted_update(model, opt, batch, None, uniform_weights)
}

/// One GroupDRO step: update the group weights from this batch's per-group
/// mean losses, then step on `sum_g q_g * loss_g` over the groups present.
pub fn groupdro_step<M: Classifier>(
    model: &mut M,
    opt: &mut Sgd,
    batch: &Batch,
    keys: &[EnvironmentKey],
    weights: &mut GroupWeights,
) -> Result<f64> {
    groupdro_step_losses(model, opt, batch, keys, weights).map(|o| o.0)
}

pub(crate) fn groupdro_step_losses<M: Classifier>(
    model: &mut M,
    opt: &mut Sgd,
    batch: &Batch,
    keys: &[EnvironmentKey],
    weights: &mut GroupWeights,
) -> Result<(f64, Vec<f32>)> {
    if keys.len() != batch.len() {
        return Err(Error::Dimension(format!(
            "{} environment keys for a batch of {}",
            keys.len(),
            batch.len()
        )));
    }
    let groups: Vec<usize> = keys.iter().map(|&k| weights.index_of(k)).collect::<Result<_>>()?;
    weighted_update(model, opt, batch, None, |losses| {
        let mut sums = vec![0.0f64; weights.len()];
        let mut counts = vec![0usize; weights.len()];
        for (&g, &l) in groups.iter().zip(losses) {
            sums[g] += f64::from(l);
            counts[g] += 1;
        }
        let present: Vec<(usize, f64)> = (0..weights.len())
            .filter(|&g| counts[g] > 0)
            .map(|g| (g, sums[g] / counts[g] as f64))
            .collect();
        if present.is_empty() {
            return Err(Error::Integrity("no batch sample belongs to a weighted group".into()));
        }
        weights.update(&present);
        let w = groups
            .iter()
            .map(|&g| (weights.q[g] / counts[g] as f64) as f32)
            .collect();
        let objective = present.iter().map(|&(g, l)| weights.q[g] * l).sum();
        Ok((w, objective))
    })
}

/// Number of representation entries muted at drop percentile `p` for a
/// representation of size `d`: `ceil(p / 100 * d)`.
pub fn rsc_mute_count(p: f64, d: usize) -> usize {
    let exact = p * d as f64 / 100.0;
    let k = exact.ceil();
    // guard against representation error just above an integer
    let k = if k - exact > 1.0 - 1e-9 { k - 1.0 } else { k };
    (k.max(0.0) as usize).min(d)
}

/// Indices of the `k` largest gradient entries, ties resolved toward the
/// lower index.
pub fn top_gradient_indices(grad: &[f32], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..grad.len()).collect();
    order.sort_by(|&a, &b| grad[b].total_cmp(&grad[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

pub fn validate_rsc(p: f64, f: f64) -> Result<()> {
    if !(0.0..100.0).contains(&p) {
        return Err(Error::Config(format!(
            "RSC drop percentile must lie in [0, 100), got {p}"
        )));
    }
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::Config(format!("RSC batch fraction must lie in [0, 1], got {f}")));
    }
    Ok(())
}

/// Muting mask for one RSC step; `None` when nothing is muted.
pub fn rsc_mask<M: Classifier>(model: &M, batch: &Batch, p: f64, f: f64, rng: &mut Rng) -> Result<Option<Vec<f32>>> {
    validate_rsc(p, f)?;
    let n = batch.len();
    let d = model.feature_dim();
    let treated = (f * n as f64).round() as usize;
    let k = rsc_mute_count(p, d);
    if treated == 0 || k == 0 {
        return Ok(None);
    }
    let chosen = sample(rng, n, treated.min(n));
    let mut mask = vec![1.0f32; n * d];
    for i in chosen.iter() {
        // the true-class score gradient does not depend on z for a linear head
        let grad = model.score_grad_z(&[], batch.labels[i]);
        for j in top_gradient_indices(&grad, k) {
            mask[i * d + j] = 0.0;
        }
    }
    Ok(Some(mask))
}

/// One RSC step: for a random fraction `f` of the batch, zero the `p`
/// percent of representation entries with the largest true-class score
/// gradient, then step on the mean loss of the partly muted batch.
pub fn rsc_step<M: Classifier>(
    model: &mut M,
    opt: &mut Sgd,
    batch: &Batch,
    p: f64,
    f: f64,
    rng: &mut Rng,
) -> Result<f64> {
    rsc_step_losses(model, opt, batch, p, f, rng).map(|o| o.0)
}

pub(crate) fn rsc_step_losses<M: Classifier>(
    model: &mut M,
    opt: &mut Sgd,
    batch: &Batch,
    p: f64,
    f: f64,
    rng: &mut Rng,
) -> Result<(f64, Vec<f32>)> {
    let mask = rsc_mask(model, batch, p, f, rng)?;
    weighted_update(model, opt, batch, mask.as_deref(), uniform_weights)
}
