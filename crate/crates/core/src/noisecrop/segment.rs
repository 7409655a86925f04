use std::collections::VecDeque;

use image::RgbImage;

use super::mask::BitMask;
use crate::dataset::MaskProvenance;

/// Components smaller than this fraction of the frame are treated as noise.
const MIN_COMPONENT_FRACTION: f64 = 0.005;
/// Area of the low-confidence fallback ellipse relative to the frame.
const FALLBACK_AREA: f64 = 0.4;

fn luminance(p: [u8; 3]) -> u8 {
    (0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2])).round() as u8
}

/// Otsu threshold of a histogram; `None` when every value is identical.
pub(crate) fn otsu(hist: &[u64; 256]) -> Option<u8> {
    let total: u64 = hist.iter().sum();
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return None;
    }
    let sum_all: f64 = hist.iter().enumerate().map(|(v, &c)| v as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0f64, 0.0f64);
    let mut best = (f64::NEG_INFINITY, 0u8);
    for (t, &count) in hist.iter().enumerate().take(255) {
        w0 += count as f64;
        sum0 += t as f64 * count as f64;
        let w1 = total as f64 - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let (m0, m1) = (sum0 / w0, (sum_all - sum0) / w1);
        let between = w0 * w1 * (m0 - m1).powi(2);
        if between > best.0 {
            best = (between, t as u8);
        }
    }
    Some(best.1)
}

/// Heuristic lesion mask: Otsu threshold on luminance inside the central 80%
/// of the frame, dark side as foreground, largest 4-connected component.
/// Without a usable component, a centered ellipse covering 40% of the frame
/// is returned and flagged low-confidence.
pub fn fallback_segment(image: &RgbImage) -> BitMask {
    let (w, h) = (image.width(), image.height());
    let (mx, my) = ((f64::from(w) * 0.1).round() as u32, (f64::from(h) * 0.1).round() as u32);
    let (rx0, ry0, rx1, ry1) = (mx, my, w - mx, h - my);

    let mut hist = [0u64; 256];
    for y in ry0..ry1 {
        for x in rx0..rx1 {
            hist[usize::from(luminance(image.get_pixel(x, y).0))] += 1;
        }
    }
    let component = otsu(&hist).and_then(|t| {
        let mut fg = BitMask::new(w, h, MaskProvenance::Fallback);
        for y in ry0..ry1 {
            for x in rx0..rx1 {
                if luminance(image.get_pixel(x, y).0) <= t {
                    fg.set(x, y, true);
                }
            }
        }
        largest_component(&fg)
    });
    match component {
        Some(c) if c.count() as f64 >= MIN_COMPONENT_FRACTION * f64::from(w) * f64::from(h) => c,
        _ => center_ellipse(w, h),
    }
}

fn largest_component(fg: &BitMask) -> Option<BitMask> {
    let (w, h) = (fg.width, fg.height);
    let mut label = vec![0u32; fg.data.len()];
    let mut best: Option<(usize, u32)> = None;
    let mut next = 0u32;
    for start in 0..fg.data.len() {
        if !fg.data[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        let mut size = 0usize;
        let mut queue = VecDeque::from([start]);
        label[start] = next;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = ((i as u32) % w, (i as u32) / w);
            let neighbors = [
                (x > 0).then(|| i - 1),
                (x + 1 < w).then(|| i + 1),
                (y > 0).then(|| i - w as usize),
                (y + 1 < h).then(|| i + w as usize),
            ];
            for n in neighbors.into_iter().flatten() {
                if fg.data[n] && label[n] == 0 {
                    label[n] = next;
                    queue.push_back(n);
                }
            }
        }
        if best.is_none_or(|(s, _)| size > s) {
            best = Some((size, next));
        }
    }
    best.map(|(_, id)| BitMask {
        data: label.iter().map(|&l| l == id).collect(),
        ..BitMask::new(w, h, MaskProvenance::Fallback)
    })
}

fn center_ellipse(w: u32, h: u32) -> BitMask {
    let k = (FALLBACK_AREA / std::f64::consts::PI).sqrt();
    let (a, b) = (f64::from(w) * k, f64::from(h) * k);
    let (cx, cy) = (f64::from(w) / 2.0, f64::from(h) / 2.0);
    let mut m = BitMask::new(w, h, MaskProvenance::Fallback);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = ((f64::from(x) + 0.5 - cx) / a, (f64::from(y) + 0.5 - cy) / b);
            if dx * dx + dy * dy <= 1.0 {
                m.set(x, y, true);
            }
        }
    }
    m.low_confidence = true;
    m
}
