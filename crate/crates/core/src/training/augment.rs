use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::seed::Rng;

/// Random geometric and photometric perturbation applied to normalized HWC
/// inputs, both during training and for test-time replicas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Augmentation {
    /// Random horizontal flip.
    pub flips: bool,
    /// Random rotation by a multiple of 90 degrees (square inputs only).
    pub rotations: bool,
    /// Maximum translation in pixels per axis; vacated pixels replicate the
    /// nearest edge.
    pub max_shift: usize,
    /// Additive brightness offset drawn from `[-brightness, brightness]`.
    pub brightness: f32,
    /// Contrast factor drawn from `[1 - contrast, 1 + contrast]`.
    pub contrast: f32,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self::standard()
    }
}

impl Augmentation {
    pub fn standard() -> Self {
        Self {
            flips: true,
            rotations: true,
            max_shift: 3,
            brightness: 0.08,
            contrast: 0.15,
        }
    }

    pub fn identity() -> Self {
        Self {
            flips: false,
            rotations: false,
            max_shift: 0,
            brightness: 0.0,
            contrast: 0.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    /// Augmented copy of one `h x w x c` sample. Always consumes the same
    /// number of draws from `rng`.
    pub fn apply(&self, src: &[f32], h: usize, w: usize, c: usize, rng: &mut Rng) -> Vec<f32> {
        let flip = rng.gen_bool(0.5) && self.flips;
        let quarter_turns = rng.gen_range(0..4usize);
        let quarter_turns = if self.rotations && h == w { quarter_turns } else { 0 };
        let s = self.max_shift as isize;
        let dy = rng.gen_range(-s..=s);
        let dx = rng.gen_range(-s..=s);
        let brightness = self.brightness * rng.gen_range(-1.0f32..=1.0);
        let contrast = 1.0 + self.contrast * rng.gen_range(-1.0f32..=1.0);
        if self.is_identity() {
            return src.to_vec();
        }

        let mut out = vec![0.0f32; src.len()];
        for y in 0..h {
            for x in 0..w {
                // undo the shift, then the rotation, then the flip
                let sy = (y as isize - dy).clamp(0, h as isize - 1) as usize;
                let sx = (x as isize - dx).clamp(0, w as isize - 1) as usize;
                let (mut ry, mut rx) = (sy, sx);
                for _ in 0..quarter_turns {
                    // inverse of a clockwise quarter turn
                    (ry, rx) = (rx, w - 1 - ry);
                }
                if flip {
                    rx = w - 1 - rx;
                }
                let d = (y * w + x) * c;
                let o = (ry * w + rx) * c;
                for k in 0..c {
                    out[d + k] = src[o + k] * contrast + brightness;
                }
            }
        }
        out
    }
}
