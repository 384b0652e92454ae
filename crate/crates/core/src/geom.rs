//! Box types shared by segmentation, ranking, and evaluation.

use serde::{Deserialize, Serialize};

/// Inclusive integer pixel box, as produced by region extraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PixelBox {
    pub xmin: u32,
    pub ymin: u32,
    pub xmax: u32,
    pub ymax: u32,
}

impl PixelBox {
    pub fn point(x: u32, y: u32) -> Self {
        PixelBox {
            xmin: x,
            ymin: y,
            xmax: x,
            ymax: y,
        }
    }

    pub fn include(&mut self, x: u32, y: u32) {
        self.xmin = self.xmin.min(x);
        self.ymin = self.ymin.min(y);
        self.xmax = self.xmax.max(x);
        self.ymax = self.ymax.max(y);
    }

    pub fn width(&self) -> u32 {
        self.xmax - self.xmin + 1
    }

    pub fn height(&self) -> u32 {
        self.ymax - self.ymin + 1
    }

    pub fn to_bbox(self) -> BBox {
        BBox::new(
            self.xmin as f64,
            self.ymin as f64,
            self.xmax as f64,
            self.ymax as f64,
        )
    }
}

/// Axis-aligned box in continuous image coordinates.
///
/// Proposals and ground truth share this type. Areas and overlaps treat the
/// corners as real coordinates, so `(0,0,10,10)` has area 100.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    pub const fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        BBox {
            xmin,
            ymin,
            xmax,
            ymax,
        }
    }

    pub fn area(&self) -> f64 {
        (self.xmax - self.xmin).max(0.0) * (self.ymax - self.ymin).max(0.0)
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox::new(
            self.xmin.min(other.xmin),
            self.ymin.min(other.ymin),
            self.xmax.max(other.xmax),
            self.ymax.max(other.ymax),
        )
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.xmin <= other.xmin
            && self.ymin <= other.ymin
            && self.xmax >= other.xmax
            && self.ymax >= other.ymax
    }

    pub fn is_finite(&self) -> bool {
        self.xmin.is_finite() && self.ymin.is_finite() && self.xmax.is_finite() && self.ymax.is_finite()
    }

    /// Bit pattern of the four corners, for exact-duplicate detection.
    pub(crate) fn key(&self) -> [u64; 4] {
        [
            self.xmin.to_bits(),
            self.ymin.to_bits(),
            self.xmax.to_bits(),
            self.ymax.to_bits(),
        ]
    }
}
