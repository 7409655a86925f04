use image::{Rgb, RgbImage};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::hull::convex_hull;
use super::mask::BitMask;
use crate::error::{Error, Result};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseCropConfig {
    /// Side of the square output canvas.
    pub output_size: u32,
    /// Inclusive per-channel noise bounds.
    pub noise_low: u8,
    pub noise_high: u8,
    /// Global seed; the noise of each image is derived from it and the
    /// sample id.
    pub seed: u64,
}

impl Default for NoiseCropConfig {
    fn default() -> Self {
        Self {
            output_size: 224,
            noise_low: 0,
            noise_high: 255,
            seed: 0,
        }
    }
}

impl NoiseCropConfig {
    pub fn validate(&self) -> Result<()> {
        if self.output_size == 0 {
            return Err(Error::Config("noisecrop output_size must be positive".into()));
        }
        if self.noise_low >= self.noise_high {
            return Err(Error::Config(format!(
                "noise bounds must satisfy low < high, got {}..{}",
                self.noise_low, self.noise_high
            )));
        }
        Ok(())
    }
}

/// Where the lesion box landed on the output canvas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropGeometry {
    /// Inclusive hull bounding box in the source image.
    pub source_box: (u32, u32, u32, u32),
    pub scale: f64,
    /// Placed box `(x, y, width, height)` on the output canvas.
    pub placed: (u32, u32, u32, u32),
}

#[derive(Debug, Clone)]
pub struct NoiseCropOutput {
    pub image: RgbImage,
    /// Hull mask mapped onto the output canvas.
    pub mask: BitMask,
    pub geometry: CropGeometry,
}

/// Places the hull box on the canvas: the longer side spans the output,
/// the shorter one is scaled by the same factor and centered.
pub fn crop_geometry(source_box: (u32, u32, u32, u32), output_size: u32) -> CropGeometry {
    let (x0, y0, x1, y1) = source_box;
    let (bw, bh) = (x1 - x0 + 1, y1 - y0 + 1);
    let scale = f64::from(output_size) / f64::from(bw.max(bh));
    let ow = ((f64::from(bw) * scale).round() as u32).clamp(1, output_size);
    let oh = ((f64::from(bh) * scale).round() as u32).clamp(1, output_size);
    CropGeometry {
        source_box,
        scale,
        placed: ((output_size - ow) / 2, (output_size - oh) / 2, ow, oh),
    }
}

fn bilinear(img: &RgbImage, sx: f64, sy: f64) -> [u8; 3] {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let fx0 = sx.floor();
    let fy0 = sy.floor();
    let (tx, ty) = ((sx - fx0) as f32, (sy - fy0) as f32);
    let clamp = |v: i64, hi: i64| v.clamp(0, hi - 1) as u32;
    let (x0, y0) = (clamp(fx0 as i64, w), clamp(fy0 as i64, h));
    let (x1, y1) = (clamp(fx0 as i64 + 1, w), clamp(fy0 as i64 + 1, h));
    let p = |x, y| img.get_pixel(x, y).0;
    let (a, b, c, d) = (p(x0, y0), p(x1, y0), p(x0, y1), p(x1, y1));
    let mut out = [0u8; 3];
    for k in 0..3 {
        let (a, b, c, d) = (f32::from(a[k]), f32::from(b[k]), f32::from(c[k]), f32::from(d[k]));
        let top = a + (b - a) * tx;
        let bottom = c + (d - c) * tx;
        out[k] = (top + (bottom - top) * ty).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Source coordinates sampled by output pixel `(u, v)`.
pub(crate) fn source_coords(geometry: &CropGeometry, u: u32, v: u32) -> (f64, f64) {
    let (x0, y0, _, _) = geometry.source_box;
    let (px, py, _, _) = geometry.placed;
    let sx = f64::from(x0) + (f64::from(u) - f64::from(px) + 0.5) / geometry.scale - 0.5;
    let sy = f64::from(y0) + (f64::from(v) - f64::from(py) + 0.5) / geometry.scale - 0.5;
    (sx, sy)
}

/// Lesion isolation: convex hull of the mask, crop to the hull box, rescale
/// with preserved aspect ratio onto a canvas of uniform noise; everything
/// outside the hull (letterbox bands included) is noise.
pub fn noisecrop(
    image: &RgbImage,
    mask: &BitMask,
    config: &NoiseCropConfig,
    sample_id: &str,
) -> Result<NoiseCropOutput> {
    config.validate()?;
    if (image.width(), image.height()) != (mask.width, mask.height) {
        return Err(Error::Dimension(format!(
            "image is {}x{} but mask is {}x{}",
            image.width(),
            image.height(),
            mask.width,
            mask.height
        )));
    }
    let hull = convex_hull(mask)?;
    let geometry = crop_geometry(hull.bbox().expect("hull is non-empty"), config.output_size);
    let s = config.output_size;

    let mut rng = rng_for(config.seed, "noisecrop", sample_id);
    let mut out = RgbImage::new(s, s);
    for px in out.pixels_mut() {
        *px = Rgb([0, 1, 2].map(|_| rng.gen_range(config.noise_low..=config.noise_high)));
    }

    let mut out_mask = BitMask::new(s, s, hull.provenance);
    out_mask.low_confidence = hull.low_confidence;
    let (px0, py0, pw, ph) = geometry.placed;
    for v in py0..py0 + ph {
        for u in px0..px0 + pw {
            let (sx, sy) = source_coords(&geometry, u, v);
            let nx = (sx.round() as i64).clamp(0, i64::from(image.width()) - 1) as u32;
            let ny = (sy.round() as i64).clamp(0, i64::from(image.height()) - 1) as u32;
            if hull.get(nx, ny) {
                out.put_pixel(u, v, Rgb(bilinear(image, sx, sy)));
                out_mask.set(u, v, true);
            }
        }
    }
    Ok(NoiseCropOutput {
        image: out,
        mask: out_mask,
        geometry,
    })
}
