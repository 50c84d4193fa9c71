use crate::error::Result;
use crate::mask::BinaryMask;

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        debug_assert!(x0 <= x1 && y0 <= y1);
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0 + 1
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    pub fn hull(&self, other: &Self) -> Self {
        Self {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn intersection(&self, other: &Self) -> Option<Self> {
        let b = Self {
            x0: self.x0.max(other.x0),
            y0: self.y0.max(other.y0),
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
        };
        (b.x0 <= b.x1 && b.y0 <= b.y1).then_some(b)
    }

    /// Grows the box by `padding` on every side, clipped to a `width` x `height` image.
    pub fn padded(&self, padding: u32, width: u32, height: u32) -> Self {
        Self {
            x0: self.x0.saturating_sub(padding),
            y0: self.y0.saturating_sub(padding),
            x1: self.x1.saturating_add(padding).min(width - 1),
            y1: self.y1.saturating_add(padding).min(height - 1),
        }
    }

    /// Intersection over union with inclusive pixel counts.
    pub fn iou(&self, other: &Self) -> f64 {
        let inter = self.intersection(other).map_or(0, |b| b.area());
        let union = self.area() + other.area() - inter;
        inter as f64 / union as f64
    }
}

pub fn box_iou(a: &PixelBox, b: &PixelBox) -> f64 {
    a.iou(b)
}

/// What "overlap" means when labelling or matching hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum OverlapKind {
    /// Mask intersection over union.
    #[default]
    Region,
    /// IoU of the tight bounding boxes of the masks.
    Box,
}

impl OverlapKind {
    pub fn between(self, a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
        match self {
            OverlapKind::Region => a.overlap(b),
            OverlapKind::Box => {
                if a.is_empty() || b.is_empty() {
                    return Ok(0.0);
                }
                Ok(a.bbox()?.iou(&b.bbox()?))
            }
        }
    }
}
