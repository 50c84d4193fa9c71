//! Run-length encoded binary masks.
//!
//! Pixels are scanned row-major. Runs alternate background / foreground and
//! the first run is always background, so a mask whose first pixel is set
//! starts with a zero-length run. Every later run is strictly positive, which
//! makes the encoding canonical: two masks are equal iff their runs are.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geom::PixelBox;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    runs: Vec<u32>,
}

impl BinaryMask {
    /// Builds a mask from run lengths, validating the canonical form.
    pub fn from_runs(width: u32, height: u32, runs: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        let malformed = |reason| Error::MalformedRuns { width, height, reason };
        if runs.is_empty() {
            return Err(malformed("no runs"));
        }
        if runs[1..].contains(&0) {
            return Err(malformed("zero-length run after the first"));
        }
        let total: u64 = runs.iter().map(|&r| u64::from(r)).sum();
        if total != u64::from(width) * u64::from(height) {
            return Err(malformed("run lengths do not sum to width * height"));
        }
        Ok(Self { width, height, runs })
    }

    /// Encodes a row-major pixel grid.
    pub fn encode(width: u32, height: u32, pixels: &[bool]) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        let n = width as usize * height as usize;
        if pixels.len() != n {
            return Err(Error::LengthMismatch { expected: n, found: pixels.len() });
        }
        let mut runs = Vec::new();
        let mut current = false;
        let mut count = 0u32;
        for &p in pixels {
            if p != current {
                runs.push(count);
                count = 0;
                current = p;
            }
            count += 1;
        }
        runs.push(count);
        Ok(Self { width, height, runs })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::encode(width, height, &pixels)
    }

    /// An all-background mask.
    pub fn empty(width: u32, height: u32) -> Result<Self> {
        let n = width.checked_mul(height).ok_or(Error::MalformedRuns {
            width,
            height,
            reason: "pixel count exceeds u32",
        })?;
        Self::from_runs(width, height, vec![n])
    }

    /// A filled (inclusive) rectangle, clipped to the image.
    pub fn from_box(width: u32, height: u32, b: PixelBox) -> Result<Self> {
        Self::from_fn(width, height, |x, y| b.contains(x, y))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    pub fn decode(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.width as usize * self.height as usize);
        for (i, &r) in self.runs.iter().enumerate() {
            out.extend(core::iter::repeat_n(i % 2 == 1, r as usize));
        }
        out
    }

    /// Foreground spans as half-open `[start, end)` row-major pixel indices.
    pub fn spans(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut pos = 0u64;
        self.runs.iter().enumerate().filter_map(move |(i, &r)| {
            let start = pos;
            pos += u64::from(r);
            (i % 2 == 1).then_some((start, pos))
        })
    }

    pub fn area(&self) -> u64 {
        self.runs.iter().skip(1).step_by(2).map(|&r| u64::from(r)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.len() == 1
    }

    fn check_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch { expected: self.dims(), found: other.dims() });
        }
        Ok(())
    }

    /// Pixels set in both masks, by merging the two span lists.
    pub fn intersection_area(&self, other: &Self) -> Result<u64> {
        self.check_dims(other)?;
        let mut a = self.spans().peekable();
        let mut b = other.spans().peekable();
        let mut total = 0;
        while let (Some(&(a0, a1)), Some(&(b0, b1))) = (a.peek(), b.peek()) {
            let lo = a0.max(b0);
            let hi = a1.min(b1);
            if hi > lo {
                total += hi - lo;
            }
            if a1 <= b1 {
                a.next();
            } else {
                b.next();
            }
        }
        Ok(total)
    }

    pub fn union_area(&self, other: &Self) -> Result<u64> {
        let inter = self.intersection_area(other)?;
        Ok(self.area() + other.area() - inter)
    }

    /// Intersection over union. Two empty masks have overlap 0.
    pub fn overlap(&self, other: &Self) -> Result<f64> {
        let inter = self.intersection_area(other)?;
        let union = self.area() + other.area() - inter;
        if union == 0 {
            return Ok(0.0);
        }
        Ok(inter as f64 / union as f64)
    }

    /// Fraction of `self` (a detection) lying inside `gt`.
    pub fn pixel_precision(&self, gt: &Self) -> Result<f64> {
        let inter = self.intersection_area(gt)?;
        match self.area() {
            0 => Err(Error::EmptyMask),
            a => Ok(inter as f64 / a as f64),
        }
    }

    /// Fraction of `gt` covered by `self`.
    pub fn pixel_recall(&self, gt: &Self) -> Result<f64> {
        let inter = self.intersection_area(gt)?;
        match gt.area() {
            0 => Err(Error::EmptyMask),
            a => Ok(inter as f64 / a as f64),
        }
    }

    /// Tightest inclusive box around the foreground.
    pub fn bbox(&self) -> Result<PixelBox> {
        let w = u64::from(self.width);
        let mut acc: Option<PixelBox> = None;
        for (start, end) in self.spans() {
            let last = end - 1;
            let (y0, y1) = ((start / w) as u32, (last / w) as u32);
            // A span crossing a row boundary touches both column 0 and the last column.
            let (x0, x1) = if y0 == y1 {
                ((start % w) as u32, (last % w) as u32)
            } else {
                (0, self.width - 1)
            };
            let span_box = PixelBox { x0, y0, x1, y1 };
            acc = Some(match acc {
                None => span_box,
                Some(b) => b.hull(&span_box),
            });
        }
        acc.ok_or(Error::EmptyMask)
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.combine(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Self) -> Result<Self> {
        self.combine(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.combine(other, |a, b| a && !b)
    }

    fn combine(&self, other: &Self, op: impl Fn(bool, bool) -> bool) -> Result<Self> {
        self.check_dims(other)?;
        let pixels: Vec<bool> =
            self.decode().into_iter().zip(other.decode()).map(|(a, b)| op(a, b)).collect();
        Self::encode(self.width, self.height, &pixels)
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        if x >= self.width || y >= self.height {
            return false;
        }
        let idx = u64::from(y) * u64::from(self.width) + u64::from(x);
        self.spans().any(|(s, e)| s <= idx && idx < e)
    }
}
