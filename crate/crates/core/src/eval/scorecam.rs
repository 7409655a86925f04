use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Classifier, SmallCnn, Tensor4};

const SCORECAM_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub width: usize,
    pub height: usize,
    /// Row-major, in [0, 1].
    pub values: Vec<f32>,
    pub class: usize,
    pub layer: String,
    /// Set when every weighted activation was non-positive.
    pub all_zero: bool,
}

impl SaliencyMap {
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

pub fn layer_tag(block: usize) -> String {
    format!("block{block}")
}

/// Bilinear resize of a single-channel grid with half-pixel centers.
pub fn upsample_bilinear(src: &[f32], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f32> {
    assert_eq!(src.len(), sh * sw, "source grid shape");
    let mut out = Vec::with_capacity(dh * dw);
    let coord = |d: usize, s: usize, n: usize| {
        let c = ((d as f64 + 0.5) * s as f64 / n as f64 - 0.5).clamp(0.0, (s - 1) as f64);
        let i0 = c.floor() as usize;
        (i0, (i0 + 1).min(s - 1), (c - i0 as f64) as f32)
    };
    for y in 0..dh {
        let (y0, y1, ty) = coord(y, sh, dh);
        for x in 0..dw {
            let (x0, x1, tx) = coord(x, sw, dw);
            let top = src[y0 * sw + x0] + (src[y0 * sw + x1] - src[y0 * sw + x0]) * tx;
            let bottom = src[y1 * sw + x0] + (src[y1 * sw + x1] - src[y1 * sw + x0]) * tx;
            out.push(top + (bottom - top) * ty);
        }
    }
    out
}

fn min_max_normalize(v: &[f32]) -> Vec<f32> {
    let (lo, hi) = v.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    });
    if hi > lo {
        v.iter().map(|&x| (x - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// Softmax weights over channel scores, then `ReLU(sum_k w_k * a_k)`
/// normalized by its maximum. Returns the map and whether it is all zero.
pub fn combine_channels(upsampled: &[Vec<f32>], scores: &[f64]) -> (Vec<f32>, bool) {
    assert_eq!(upsampled.len(), scores.len(), "one score per channel");
    assert!(!upsampled.is_empty(), "at least one channel");
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    let len = upsampled[0].len();
    let mut map = vec![0.0f64; len];
    for (chan, e) in upsampled.iter().zip(&exps) {
        let w = e / total;
        for (acc, &a) in map.iter_mut().zip(chan) {
            *acc += w * f64::from(a);
        }
    }
    let max = map.iter().copied().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return (vec![0.0; len], true);
    }
    (map.iter().map(|&v| (v.max(0.0) / max) as f32).collect(), false)
}

/// ScoreCAM saliency of `class` for one input sample (`n == 1`) at the
/// output of convolutional block `block` (the last block when `None`).
/// Each channel, min-max normalized and upsampled, masks the input; the
/// class probability of the masked input is the channel score.
pub fn scorecam(model: &SmallCnn, input: &Tensor4, block: Option<usize>, class: usize) -> Result<SaliencyMap> {
    if input.n != 1 {
        return Err(Error::Dimension(format!("ScoreCAM takes one sample, got {}", input.n)));
    }
    if class > 1 {
        return Err(Error::Config(format!("class must be 0 or 1, got {class}")));
    }
    let block = block.unwrap_or(model.num_blocks() - 1);
    if block >= model.num_blocks() {
        return Err(Error::Config(format!(
            "layer {block} does not exist; the model has {} blocks",
            model.num_blocks()
        )));
    }
    let acts = model.block_activations(input, block);
    let (ah, aw, channels) = (acts.h, acts.w, acts.c);
    let (h, w, c) = (input.h, input.w, input.c);
    let upsampled: Vec<Vec<f32>> = (0..channels)
        .map(|k| {
            let grid: Vec<f32> = (0..ah * aw).map(|p| acts.data[p * channels + k]).collect();
            upsample_bilinear(&grid, ah, aw, h, w)
        })
        .collect();
    let masks: Vec<Vec<f32>> = upsampled.iter().map(|u| min_max_normalize(u)).collect();
    let mut scores = Vec::with_capacity(channels);
    for chunk in masks.chunks(SCORECAM_BATCH) {
        let mut data = Vec::with_capacity(chunk.len() * h * w * c);
        for m in chunk {
            for (p, &mv) in m.iter().enumerate() {
                for ch in 0..c {
                    data.push(input.data[p * c + ch] * mv);
                }
            }
        }
        let x = Tensor4 {
            n: chunk.len(),
            h,
            w,
            c,
            data,
        };
        for l in model.forward(&x).chunks_exact(2) {
            let p1 = f64::from(crate::nn::positive_probability(l));
            scores.push(if class == 1 { p1 } else { 1.0 - p1 });
        }
    }
    let (values, all_zero) = combine_channels(&upsampled, &scores);
    Ok(SaliencyMap {
        width: w,
        height: h,
        values,
        class,
        layer: layer_tag(block),
        all_zero,
    })
}
