use image::{GrayImage, Luma};

use crate::dataset::MaskProvenance;

/// Binary foreground grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
    pub provenance: MaskProvenance,
    /// Set when the mask is a geometric guess rather than a segmentation.
    pub low_confidence: bool,
}

impl BitMask {
    pub fn new(width: u32, height: u32, provenance: MaskProvenance) -> Self {
        Self {
            width,
            height,
            data: vec![false; width as usize * height as usize],
            provenance,
            low_confidence: false,
        }
    }

    pub fn full(width: u32, height: u32, provenance: MaskProvenance) -> Self {
        Self {
            data: vec![true; width as usize * height as usize],
            ..Self::new(width, height, provenance)
        }
    }

    /// Foreground wherever the gray value is positive.
    pub fn from_gray(img: &GrayImage, provenance: MaskProvenance) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.as_raw().iter().map(|&v| v > 0).collect(),
            provenance,
            low_confidence: false,
        }
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x, y) { 255 } else { 0 }])
        })
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[self.offset(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let o = self.offset(x, y);
        self.data[o] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)` of the foreground.
    pub fn bbox(&self) -> Option<(u32, u32, u32, u32)> {
        let mut b: Option<(u32, u32, u32, u32)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    b = Some(match b {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        b
    }

    pub fn foreground(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).filter(move |&x| self.get(x, y)).map(move |x| (x, y)))
    }
}
