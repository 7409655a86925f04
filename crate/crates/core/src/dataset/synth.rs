//! Synthetic biased lesion images.
//!
//! Each sample gets a lesion whose boundary irregularity and interior texture
//! grow with a latent severity drawn from a label-dependent normal
//! distribution, plus background artifacts whose presence is drawn from the
//! label-conditional probabilities that realize the configured artifact/label
//! correlations. Class information lives in the lesion only.

use std::collections::BTreeMap;
use std::f32::consts::PI;
use std::fs;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{AnnotationSource, DatasetManifest, Label, SampleRecord};
use crate::artifact::{Artifact, ArtifactVector, N_ARTIFACTS};
use crate::error::{Error, Result};
use crate::seed::{rng_for, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArtifactBias {
    /// Target phi (= Spearman) correlation between presence and melanoma.
    pub correlation: f64,
    /// Marginal presence probability; 0 disables the artifact.
    pub marginal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub n_samples: usize,
    #[serde(default = "default_image_size")]
    pub image_size: u32,
    #[serde(default = "default_prevalence")]
    pub class_prevalence: f64,
    /// Artifacts not listed are never rendered.
    #[serde(default)]
    pub artifacts: BTreeMap<Artifact, ArtifactBias>,
    /// Separation (in latent standard deviations) between benign and
    /// melanoma lesion severity.
    #[serde(default = "default_strength")]
    pub lesion_strength: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_name() -> String {
    "synthetic".into()
}
fn default_image_size() -> u32 {
    32
}
fn default_prevalence() -> f64 {
    0.35
}
fn default_strength() -> f64 {
    2.0
}

impl SyntheticConfig {
    /// Artifact pattern loosely following the real-data correlation table at
    /// random-split level.
    pub fn with_defaults(n_samples: usize, seed: u64) -> Self {
        let bias = |correlation, marginal| ArtifactBias { correlation, marginal };
        let artifacts = BTreeMap::from([
            (Artifact::DarkCorner, bias(0.3, 0.25)),
            (Artifact::Hair, bias(-0.2, 0.35)),
            (Artifact::GelBorder, bias(0.1, 0.15)),
            (Artifact::GelBubble, bias(0.05, 0.2)),
            (Artifact::Ruler, bias(0.3, 0.3)),
            (Artifact::Ink, bias(0.05, 0.1)),
            (Artifact::Patches, bias(-0.2, 0.08)),
        ]);
        Self {
            name: default_name(),
            n_samples,
            image_size: default_image_size(),
            class_prevalence: default_prevalence(),
            artifacts,
            lesion_strength: default_strength(),
            seed,
        }
    }

    /// Dark corners, hair and rulers at |correlation| = 0.5 (hair negative)
    /// with balanced classes and marginals; no other artifacts.
    pub fn three_targeted(n_samples: usize, seed: u64) -> Self {
        let bias = |correlation| ArtifactBias {
            correlation,
            marginal: 0.5,
        };
        let artifacts = BTreeMap::from([
            (Artifact::DarkCorner, bias(0.5)),
            (Artifact::Hair, bias(-0.5)),
            (Artifact::Ruler, bias(0.5)),
        ]);
        Self {
            class_prevalence: 0.5,
            artifacts,
            ..Self::with_defaults(n_samples, seed)
        }
    }

    /// Label-conditional presence probabilities `(P(a|y=1), P(a|y=0))` for
    /// every artifact, after checking feasibility.
    pub fn conditionals(&self) -> Result<[(f64, f64); N_ARTIFACTS]> {
        if !(self.class_prevalence > 0.0 && self.class_prevalence < 1.0) {
            return Err(Error::Config(format!(
                "class_prevalence must lie in (0, 1), got {}",
                self.class_prevalence
            )));
        }
        let mut out = [(0.0, 0.0); N_ARTIFACTS];
        for (a, bias) in &self.artifacts {
            if bias.marginal == 0.0 {
                continue;
            }
            out[a.index()] = solve_contingency(bias.correlation, bias.marginal, self.class_prevalence)?;
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        if self.image_size < 16 {
            return Err(Error::Config(format!(
                "image_size must be at least 16, got {}",
                self.image_size
            )));
        }
        if !(self.lesion_strength >= 0.0 && self.lesion_strength.is_finite()) {
            return Err(Error::Config("lesion_strength must be finite and non-negative".into()));
        }
        self.conditionals().map(|_| ())
    }
}

/// Conditional artifact probabilities `(P(a|y=1), P(a|y=0))` that realize
/// the marginal `p_a`, class prevalence `p_y` and phi correlation `rho`.
pub fn solve_contingency(rho: f64, p_a: f64, p_y: f64) -> Result<(f64, f64)> {
    if !(p_a > 0.0 && p_a < 1.0) {
        return Err(Error::Config(format!(
            "artifact marginal must lie in (0, 1), got {p_a}"
        )));
    }
    if !(p_y > 0.0 && p_y < 1.0) {
        return Err(Error::Config(format!("class prevalence must lie in (0, 1), got {p_y}")));
    }
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::Config(format!("correlation must lie in [-1, 1], got {rho}")));
    }
    const TOL: f64 = 1e-12;
    let p11 = p_a * p_y + rho * (p_a * (1.0 - p_a) * p_y * (1.0 - p_y)).sqrt();
    let cells = [
        ("P(a=1,y=1)", p11),
        ("P(a=1,y=0)", p_a - p11),
        ("P(a=0,y=1)", p_y - p11),
        ("P(a=0,y=0)", 1.0 - p_a - p_y + p11),
    ];
    for (cell, value) in cells {
        if !(-TOL..=1.0 + TOL).contains(&value) {
            return Err(Error::Infeasible { cell, value });
        }
    }
    let given_pos = (p11 / p_y).clamp(0.0, 1.0);
    let given_neg = ((p_a - p11) / (1.0 - p_y)).clamp(0.0, 1.0);
    Ok((given_pos, given_neg))
}

pub fn sample_id(i: usize, n: usize) -> String {
    let width = n.saturating_sub(1).to_string().len().max(5);
    format!("syn_{i:0width$}")
}

/// Writes `n_samples` images, masks, `manifest.csv` and
/// `synthetic_config.json` under `out_dir`.
pub fn generate_synthetic(config: &SyntheticConfig, out_dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    let conditionals = config.conditionals()?;
    fs::create_dir_all(out_dir.join("images"))?;
    fs::create_dir_all(out_dir.join("masks"))?;

    let n = config.n_samples;
    let records: Vec<SampleRecord> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<SampleRecord> {
            let id = sample_id(i, n);
            let mut rng = rng_for(config.seed, "synthetic-sample", &id);
            let label = Label::from_bit(rng.gen_bool(config.class_prevalence));
            let mut artifacts = ArtifactVector::none();
            for a in Artifact::ALL {
                let (pos, neg) = conditionals[a.index()];
                let p = if label.is_positive() { pos } else { neg };
                // one draw per artifact keeps the stream layout fixed
                let u: f64 = rng.gen();
                artifacts.set(a, u < p);
            }
            let (image, mask) = render_sample(config, label, artifacts, &mut rng);
            let image_path = format!("images/{id}.png");
            let mask_path = format!("masks/{id}.png");
            image.save(out_dir.join(&image_path))?;
            mask.save(out_dir.join(&mask_path))?;
            Ok(SampleRecord {
                id,
                image_path,
                label,
                artifacts,
                mask_path: Some(mask_path),
                annotation_source: AnnotationSource::GroundTruth,
                censoring: None,
            })
        })
        .collect::<Result<_>>()?;

    let mut manifest = DatasetManifest::new(config.name.clone(), out_dir, records)?;
    manifest.provenance.insert("generator".into(), "synthetic".into());
    manifest.provenance.insert("seed".into(), config.seed.to_string());
    manifest.save(&out_dir.join("manifest.csv"))?;
    fs::write(
        out_dir.join("synthetic_config.json"),
        serde_json::to_string_pretty(config)? + "\n",
    )?;
    Ok(manifest)
}

/// RGB float canvas in [0, 255].
struct Canvas {
    size: usize,
    px: Vec<[f32; 3]>,
}

impl Canvas {
    fn blend(&mut self, x: usize, y: usize, color: [f32; 3], alpha: f32) {
        if alpha <= 0.0 {
            return;
        }
        let a = alpha.min(1.0);
        let p = &mut self.px[y * self.size + x];
        for c in 0..3 {
            p[c] += (color[c] - p[c]) * a;
        }
    }

    fn to_image(&self) -> RgbImage {
        let s = self.size as u32;
        RgbImage::from_fn(s, s, |x, y| {
            let p = self.px[(y * s + x) as usize];
            Rgb(p.map(|v| v.round().clamp(0.0, 255.0) as u8))
        })
    }
}

/// Bilinearly interpolated lattice noise in [-1, 1].
struct ValueNoise {
    cells: usize,
    cell: f32,
    values: Vec<f32>,
}

impl ValueNoise {
    fn new(rng: &mut Rng, extent: f32, cell: f32) -> Self {
        let cells = (extent / cell).ceil() as usize + 2;
        let values = (0..cells * cells).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        Self { cells, cell, values }
    }

    fn at(&self, x: f32, y: f32) -> f32 {
        let gx = (x / self.cell).max(0.0);
        let gy = (y / self.cell).max(0.0);
        let ix = (gx as usize).min(self.cells - 2);
        let iy = (gy as usize).min(self.cells - 2);
        let fx = gx - ix as f32;
        let fy = gy - iy as f32;
        let v = |i: usize, j: usize| self.values[j * self.cells + i];
        let top = v(ix, iy) + (v(ix + 1, iy) - v(ix, iy)) * fx;
        let bottom = v(ix, iy + 1) + (v(ix + 1, iy + 1) - v(ix, iy + 1)) * fx;
        top + (bottom - top) * fy
    }
}

fn dist_to_segment(px: f32, py: f32, a: (f32, f32), b: (f32, f32)) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

fn jitter(rng: &mut Rng, base: [f32; 3], amount: f32) -> [f32; 3] {
    base.map(|c| c + rng.gen_range(-amount..amount))
}

fn render_sample(
    config: &SyntheticConfig,
    label: Label,
    artifacts: ArtifactVector,
    rng: &mut Rng,
) -> (RgbImage, GrayImage) {
    let size = config.image_size as usize;
    let s = size as f32;
    let center = s / 2.0;

    // skin
    let skin = jitter(rng, [214.0, 172.0, 148.0], 12.0);
    let shade = (rng.gen_range(-10.0f32..10.0), rng.gen_range(-10.0f32..10.0));
    let grain = Normal::new(0.0f32, 2.5).expect("valid normal");
    let mut canvas = Canvas {
        size,
        px: vec![[0.0; 3]; size * size],
    };
    for y in 0..size {
        for x in 0..size {
            let g = shade.0 * (x as f32 / s - 0.5) + shade.1 * (y as f32 / s - 0.5);
            let n = grain.sample(rng);
            canvas.px[y * size + x] = skin.map(|c| c + g + n);
        }
    }

    // lesion geometry and latent severity
    let mean = if label.is_positive() { 0.5 } else { -0.5 } * config.lesion_strength as f32;
    let latent = Normal::new(mean, 1.0f32).expect("valid normal").sample(rng);
    let severity = 1.0 / (1.0 + (-1.6 * latent).exp());
    let lc = (
        center + rng.gen_range(-0.06f32..0.06) * s,
        center + rng.gen_range(-0.06f32..0.06) * s,
    );
    let r0 = s * rng.gen_range(0.24f32..0.33);
    let aspect = rng.gen_range(0.75f32..1.0);
    let orient = rng.gen_range(0.0f32..PI);
    let harmonics: Vec<(f32, f32, f32)> = (4..10)
        .map(|k| (k as f32, rng.gen_range(0.5f32..1.0), rng.gen_range(0.0f32..2.0 * PI)))
        .collect();
    let harmonic_norm: f32 = harmonics.iter().map(|h| h.1).sum::<f32>() / 2.5;
    let irregularity = 0.3 * severity;
    let lesion_color = jitter(rng, [132.0, 84.0, 60.0], 14.0);
    let blotch_color = [92.0, 98.0, 122.0];
    let texture_amp = 70.0 * severity;
    let texture = ValueNoise::new(rng, s, (r0 / 3.5).max(1.5));
    let blotches = ValueNoise::new(rng, s, (r0 / 2.5).max(2.0));

    let boundary = |phi: f32| -> f32 {
        let rel = phi - orient;
        let (c, sn) = (rel.cos(), rel.sin());
        let ellipse = r0 * aspect / ((aspect * c).powi(2) + sn.powi(2)).sqrt();
        let g: f32 = harmonics
            .iter()
            .map(|&(k, amp, ph)| amp * (k * phi + ph).sin())
            .sum::<f32>()
            / harmonic_norm;
        ellipse * (1.0 + irregularity * g.clamp(-1.0, 1.0))
    };

    let mut mask = GrayImage::new(size as u32, size as u32);
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            let (dx, dy) = (px - lc.0, py - lc.1);
            let rho = (dx * dx + dy * dy).sqrt();
            let edge = boundary(dy.atan2(dx));
            if rho <= edge {
                mask.put_pixel(x as u32, y as u32, Luma([255]));
            }
            let alpha = ((edge - rho) / 0.8 + 0.5).clamp(0.0, 1.0);
            if alpha <= 0.0 {
                continue;
            }
            let radial = (rho / edge).min(1.0);
            let t = texture.at(px, py);
            let mut color = lesion_color.map(|c| c * (0.82 + 0.18 * radial) - texture_amp * t);
            let b = ((blotches.at(px, py) - 0.2) * 2.0).clamp(0.0, 1.0) * 0.7 * severity;
            for c in 0..3 {
                color[c] += (blotch_color[c] - color[c]) * b;
            }
            canvas.blend(x, y, color, alpha);
        }
    }

    if artifacts.has(Artifact::Hair) {
        draw_hair(&mut canvas, rng);
    }
    if artifacts.has(Artifact::Ink) {
        let angle = rng.gen_range(0.0f32..2.0 * PI);
        let dist = r0 * 1.15 + 2.0;
        let base = (lc.0 + dist * angle.cos(), lc.1 + dist * angle.sin());
        let ink = jitter(rng, [108.0, 58.0, 150.0], 10.0);
        let blobs: Vec<((f32, f32), f32)> = (0..rng.gen_range(2..4))
            .map(|_| {
                let o = (rng.gen_range(-2.0f32..2.0), rng.gen_range(-2.0f32..2.0));
                ((base.0 + o.0, base.1 + o.1), rng.gen_range(1.5f32..3.0))
            })
            .collect();
        paint(&mut canvas, |px, py| {
            let a = blobs
                .iter()
                .map(|&((cx, cy), r)| (r - ((px - cx).powi(2) + (py - cy).powi(2)).sqrt() + 0.5).clamp(0.0, 1.0))
                .fold(0.0f32, f32::max);
            (ink, 0.85 * a)
        });
    }
    if artifacts.has(Artifact::Patches) {
        let side = (0.18 * s).round();
        let corner = rng.gen_range(0..4);
        let inset = rng.gen_range(1.0f32..3.0);
        let x0 = if corner % 2 == 0 { inset } else { s - inset - side };
        let y0 = if corner < 2 { inset } else { s - inset - side };
        let color = if rng.gen_bool(0.5) {
            jitter(rng, [238.0, 164.0, 118.0], 8.0)
        } else {
            jitter(rng, [196.0, 218.0, 238.0], 8.0)
        };
        paint(&mut canvas, |px, py| {
            let inside = px >= x0 && px <= x0 + side && py >= y0 && py <= y0 + side;
            (color, if inside { 1.0 } else { 0.0 })
        });
    }
    if artifacts.has(Artifact::Ruler) {
        let side = rng.gen_range(0..4);
        let width = 0.16 * s;
        let spacing = rng.gen_range(2.0f32..2.6);
        let phase = rng.gen_range(0.0f32..spacing);
        let strip = jitter(rng, [232.0, 226.0, 196.0], 6.0);
        paint(&mut canvas, |px, py| {
            let (depth, along) = match side {
                0 => (py, px),
                1 => (s - py, px),
                2 => (px, py),
                _ => (s - px, py),
            };
            if depth > width {
                return (strip, 0.0);
            }
            let k = ((along - phase) / spacing).round();
            let on_tick = (along - phase - k * spacing).abs() < 0.5;
            let tick_len = if (k as i64).rem_euclid(5) == 0 {
                width
            } else {
                width * 0.55
            };
            if on_tick && depth <= tick_len {
                ([28.0, 28.0, 30.0], 1.0)
            } else {
                (strip, 0.95)
            }
        });
    }
    if artifacts.has(Artifact::GelBorder) {
        let side = rng.gen_range(0..4);
        let width = s * rng.gen_range(0.09f32..0.13);
        let glare = [236.0, 238.0, 242.0];
        paint(&mut canvas, |px, py| {
            let depth = match side {
                0 => py,
                1 => s - py,
                2 => px,
                _ => s - px,
            };
            (glare, 0.85 * (width - depth + 0.5).clamp(0.0, 1.0))
        });
    }
    if artifacts.has(Artifact::GelBubble) {
        let bubbles: Vec<((f32, f32), f32)> = (0..rng.gen_range(3..7))
            .map(|_| {
                (
                    (rng.gen_range(0.0f32..s), rng.gen_range(0.0f32..s)),
                    rng.gen_range(1.0f32..2.2),
                )
            })
            .collect();
        paint(&mut canvas, |px, py| {
            let a = bubbles
                .iter()
                .map(|&((cx, cy), r)| {
                    let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
                    (1.0 - (d - r).abs() / 0.7).clamp(0.0, 1.0)
                })
                .fold(0.0f32, f32::max);
            ([250.0, 250.0, 250.0], 0.9 * a)
        });
    }
    if artifacts.has(Artifact::DarkCorner) {
        let strength = rng.gen_range(0.75f32..0.92);
        let start = rng.gen_range(0.9f32..1.05);
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = (x as f32 + 0.5 - center, y as f32 + 0.5 - center);
                let d = (dx * dx + dy * dy).sqrt() / center;
                let f = ((d - start) / 0.35).clamp(0.0, 1.0);
                let p = &mut canvas.px[y * size + x];
                *p = p.map(|c| c * (1.0 - strength * f));
            }
        }
    }

    (canvas.to_image(), mask)
}

fn paint(canvas: &mut Canvas, f: impl Fn(f32, f32) -> ([f32; 3], f32)) {
    for y in 0..canvas.size {
        for x in 0..canvas.size {
            let (color, alpha) = f(x as f32 + 0.5, y as f32 + 0.5);
            canvas.blend(x, y, color, alpha);
        }
    }
}

fn draw_hair(canvas: &mut Canvas, rng: &mut Rng) {
    let s = canvas.size as f32;
    let edge_point = |rng: &mut Rng, side: u8| -> (f32, f32) {
        let t = rng.gen_range(0.0f32..s);
        match side {
            0 => (t, 0.0),
            1 => (t, s),
            2 => (0.0, t),
            _ => (s, t),
        }
    };
    for _ in 0..rng.gen_range(2..5) {
        let side = rng.gen_range(0u8..4);
        let a = edge_point(rng, side);
        let b = edge_point(rng, side ^ 1);
        let ctrl = (rng.gen_range(0.0f32..s), rng.gen_range(0.0f32..s));
        let width = rng.gen_range(0.45f32..0.8);
        let color = jitter(rng, [42.0, 30.0, 26.0], 8.0);
        let pts: Vec<(f32, f32)> = (0..=16)
            .map(|i| {
                let t = i as f32 / 16.0;
                let u = 1.0 - t;
                (
                    u * u * a.0 + 2.0 * u * t * ctrl.0 + t * t * b.0,
                    u * u * a.1 + 2.0 * u * t * ctrl.1 + t * t * b.1,
                )
            })
            .collect();
        paint(canvas, |px, py| {
            let d = pts
                .windows(2)
                .map(|w| dist_to_segment(px, py, w[0], w[1]))
                .fold(f32::INFINITY, f32::min);
            (color, 0.9 * (width - d + 0.5).clamp(0.0, 1.0))
        });
    }
}
