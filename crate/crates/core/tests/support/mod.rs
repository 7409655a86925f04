//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

/// Average ranks (1-based) by direct counting.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        None
    } else {
        Some(cov / (va * vb).sqrt())
    }
}

/// Spearman correlation as the Pearson correlation of average ranks.
pub fn spearman_oracle(x: &[bool], y: &[bool]) -> Option<f64> {
    let fx: Vec<f64> = x.iter().map(|&b| f64::from(u8::from(b))).collect();
    let fy: Vec<f64> = y.iter().map(|&b| f64::from(u8::from(b))).collect();
    pearson(&average_ranks(&fx), &average_ranks(&fy))
}

/// Phi coefficient from the 2x2 table.
pub fn phi_oracle(x: &[bool], y: &[bool]) -> Option<f64> {
    let mut t = [[0f64; 2]; 2];
    for (&a, &b) in x.iter().zip(y) {
        t[usize::from(a)][usize::from(b)] += 1.0;
    }
    let den = ((t[1][0] + t[1][1]) * (t[0][0] + t[0][1]) * (t[0][1] + t[1][1]) * (t[0][0] + t[1][0])).sqrt();
    if den == 0.0 {
        None
    } else {
        Some((t[1][1] * t[0][0] - t[1][0] * t[0][1]) / den)
    }
}

/// Concordant plus half the tied positive/negative pairs, over P * N.
pub fn auc_oracle(scores: &[f32], labels: &[bool]) -> Option<f64> {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    (pairs > 0.0).then(|| num / pairs)
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Filled convex hull of the set pixels by supporting lines: a pixel is
/// inside when it lies in the bounding box and on the inner side of every
/// line through two set pixels that has all set pixels on one side.
pub fn hull_oracle(width: usize, height: usize, grid: &[bool]) -> Vec<bool> {
    let at = |x: usize, y: usize| grid[y * width + x];
    // Interior pixels sit between two boundary pixels of their row, so the
    // boundary pixels span the same hull.
    let mut pts = Vec::new();
    for y in 0..height {
        for x in 0..width {
            if !at(x, y) {
                continue;
            }
            let open = x == 0
                || y == 0
                || x + 1 == width
                || y + 1 == height
                || !at(x - 1, y)
                || !at(x + 1, y)
                || !at(x, y - 1)
                || !at(x, y + 1);
            if open {
                pts.push((x as i64, y as i64));
            }
        }
    }
    let mut out = vec![false; width * height];
    if pts.is_empty() {
        return out;
    }
    let (x0, x1) = (
        pts.iter().map(|p| p.0).min().unwrap(),
        pts.iter().map(|p| p.0).max().unwrap(),
    );
    let (y0, y1) = (
        pts.iter().map(|p| p.1).min().unwrap(),
        pts.iter().map(|p| p.1).max().unwrap(),
    );
    let mut lines = Vec::new();
    for &a in &pts {
        for &b in &pts {
            if a != b && pts.iter().all(|&s| cross(a, b, s) >= 0) {
                lines.push((a, b));
            }
        }
    }
    for y in y0..=y1 {
        for x in x0..=x1 {
            let p = (x, y);
            if lines.iter().all(|&(a, b)| cross(a, b, p) >= 0) {
                out[y as usize * width + x as usize] = true;
            }
        }
    }
    out
}

/// Bilinear sample with edge clamping, in floating point.
pub fn bilinear_oracle(img: &image::RgbImage, sx: f64, sy: f64) -> [f64; 3] {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let clamp = |v: i64, n: i64| v.clamp(0, n - 1) as u32;
    let (fx, fy) = (sx.floor(), sy.floor());
    let (tx, ty) = (sx - fx, sy - fy);
    let px = |x: i64, y: i64| img.get_pixel(clamp(x, w), clamp(y, h)).0;
    let (a, b) = (px(fx as i64, fy as i64), px(fx as i64 + 1, fy as i64));
    let (c, d) = (px(fx as i64, fy as i64 + 1), px(fx as i64 + 1, fy as i64 + 1));
    std::array::from_fn(|k| {
        let top = f64::from(a[k]) * (1.0 - tx) + f64::from(b[k]) * tx;
        let bottom = f64::from(c[k]) * (1.0 - tx) + f64::from(d[k]) * tx;
        top * (1.0 - ty) + bottom * ty
    })
}

/// Map value by the ScoreCAM definition, computed directly.
pub fn scorecam_oracle(upsampled: &[Vec<f32>], scores: &[f64]) -> Vec<f64> {
    let denom: f64 = scores.iter().map(|s| s.exp()).sum();
    let raw: Vec<f64> = (0..upsampled[0].len())
        .map(|p| {
            let v: f64 = upsampled
                .iter()
                .zip(scores)
                .map(|(u, s)| s.exp() / denom * f64::from(u[p]))
                .sum();
            v.max(0.0)
        })
        .collect();
    let max = raw.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        raw
    } else {
        raw.iter().map(|v| v / max).collect()
    }
}

use debias_core::artifact::ArtifactVector;
use debias_core::bias::EnvironmentKey;
use debias_core::dataset::Label;
use debias_core::nn::CnnConfig;
use debias_core::training::ImageSet;
use rand::{Rng, SeedableRng};

pub fn tiny_cnn() -> CnnConfig {
    CnnConfig {
        in_channels: 3,
        channels: [4, 6, 8],
        strides: [2, 2, 2],
    }
}

/// In-memory 8x8 images whose red channel carries the label, with keys set
/// from the label and an artifact bit derived from the green channel.
pub fn tiny_imageset(n: usize, seed: u64) -> ImageSet {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = (8, 8, 3);
    let mut inputs = Vec::with_capacity(n * h * w * c);
    let mut labels = Vec::with_capacity(n);
    let mut keys = Vec::with_capacity(n);
    for i in 0..n {
        let y = usize::from(i % 3 == 0);
        let shift = if y == 1 { 0.15 } else { -0.15 };
        let art = rng.gen_bool(0.5);
        for p in 0..h * w {
            for ch in 0..c {
                let base: f32 = rng.gen_range(-0.4..0.4);
                let v = match ch {
                    0 => base + shift,
                    1 if art && p < 8 => 0.45,
                    _ => base,
                };
                inputs.push(v);
            }
        }
        labels.push(y);
        let mut a = ArtifactVector::none();
        a.set(debias_core::Artifact::ALL[0], art);
        keys.push(EnvironmentKey::new(a, Label::from_bit(y == 1)));
    }
    ImageSet {
        ids: (0..n).map(|i| format!("t{i:04}")).collect(),
        h,
        w,
        c,
        inputs,
        labels,
        keys,
    }
}
