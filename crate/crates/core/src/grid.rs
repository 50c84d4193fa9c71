//! Coarse 10x10 grids over padded boxes and superpixel label maps.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geom::PixelBox;
use crate::mask::BinaryMask;

pub const GRID_SIZE: usize = 10;
pub const GRID_CELLS: usize = GRID_SIZE * GRID_SIZE;

/// Per-cell values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMask {
    values: [f64; GRID_CELLS],
}

impl GridMask {
    pub fn filled(v: f64) -> Self {
        Self { values: [v; GRID_CELLS] }
    }

    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.len() != GRID_CELLS {
            return Err(Error::LengthMismatch { expected: GRID_CELLS, found: values.len() });
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidConfig("grid values must lie in [0, 1]"));
        }
        let mut out = [0.0; GRID_CELLS];
        out.copy_from_slice(values);
        Ok(Self { values: out })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * GRID_SIZE + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Start/end (exclusive) offsets of the ten cells along an axis of `len` pixels.
///
/// Cell `i` spans `floor(i*len/10) .. floor((i+1)*len/10)`. When `len < 10`
/// that range can be empty; such a cell samples the single pixel at its start
/// offset instead, so every cell has at least one pixel.
pub fn cell_ranges(len: u32) -> [(u32, u32); GRID_SIZE] {
    let mut out = [(0, 0); GRID_SIZE];
    let n = GRID_SIZE as u64;
    for (i, slot) in out.iter_mut().enumerate() {
        let i = i as u64;
        let start = (i * u64::from(len) / n) as u32;
        let end = ((i + 1) * u64::from(len) / n) as u32;
        *slot = if end > start { (start, end) } else { (start.min(len - 1), start.min(len - 1) + 1) };
    }
    out
}

/// For every pixel offset along an axis, the cell whose (non-sampled) range holds it.
fn cell_of_offset(len: u32) -> Vec<usize> {
    let n = GRID_SIZE as u64;
    (0..u64::from(len))
        .map(|r| ((n * (r + 1)).div_ceil(u64::from(len)) - 1) as usize)
        .collect()
}

/// Fraction of foreground pixels in each cell of the padded box.
pub fn discretize_to_grid(mask: &BinaryMask, bbox: PixelBox, padding: u32) -> Result<GridMask> {
    let (w, h) = mask.dims();
    if bbox.x0 >= w || bbox.y0 >= h {
        return Err(Error::InvalidConfig("box lies outside the image"));
    }
    let b = bbox.padded(padding, w, h);
    let pixels = mask.decode();
    let rows = cell_ranges(b.height());
    let cols = cell_ranges(b.width());
    let mut values = [0.0; GRID_CELLS];
    for (i, &(r0, r1)) in rows.iter().enumerate() {
        for (j, &(c0, c1)) in cols.iter().enumerate() {
            let mut on = 0u64;
            for y in (b.y0 + r0)..(b.y0 + r1) {
                let row = y as usize * w as usize;
                on += ((b.x0 + c0)..(b.x0 + c1)).filter(|&x| pixels[row + x as usize]).count() as u64;
            }
            let total = u64::from(r1 - r0) * u64::from(c1 - c0);
            values[i * GRID_SIZE + j] = on as f64 / total as f64;
        }
    }
    Ok(GridMask { values })
}

/// Per-pixel superpixel ids for one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelMap {
    width: u32,
    height: u32,
    labels: Vec<u32>,
    count: u32,
}

impl SuperpixelMap {
    /// Validates that ids are dense: every id in `[0, K)` occurs, where `K = max + 1`.
    pub fn new(width: u32, height: u32, labels: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        let n = width as usize * height as usize;
        if labels.len() != n {
            return Err(Error::LengthMismatch { expected: n, found: labels.len() });
        }
        let count = labels.iter().copied().max().unwrap_or(0) + 1;
        let mut seen = vec![false; count as usize];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if seen.contains(&false) {
            return Err(Error::InvalidSuperpixels("superpixel ids are not contiguous"));
        }
        Ok(Self { width, height, labels, count })
    }

    /// Regular `tile` x `tile` squares (edge tiles may be smaller), numbered row-major.
    pub fn tiles(width: u32, height: u32, tile: u32) -> Result<Self> {
        if tile == 0 {
            return Err(Error::InvalidSuperpixels("tile size must be positive"));
        }
        let across = width.div_ceil(tile);
        let mut labels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                labels.push((y / tile) * across + x / tile);
            }
        }
        Self::new(width, height, labels)
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

    pub fn count(&self) -> usize {
        self.count as usize
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, x: u32, y: u32) -> u32 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    pub fn sizes(&self) -> Vec<u64> {
        let mut sizes = vec![0u64; self.count()];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    fn check_dims(&self, dims: (u32, u32)) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::DimensionMismatch { expected: self.dims(), found: dims });
        }
        Ok(())
    }

    /// Fraction of each superpixel's pixels that are foreground in `mask`.
    pub fn coverage(&self, mask: &BinaryMask) -> Result<Vec<f64>> {
        self.check_dims(mask.dims())?;
        let mut on = vec![0u64; self.count()];
        for (l, p) in self.labels.iter().zip(mask.decode()) {
            if p {
                on[*l as usize] += 1;
            }
        }
        Ok(on.iter().zip(self.sizes()).map(|(&o, s)| o as f64 / s as f64).collect())
    }

    /// Superpixels with at least one pixel inside `b`.
    pub fn touching(&self, b: &PixelBox) -> Vec<bool> {
        let mut hit = vec![false; self.count()];
        for y in b.y0..=b.y1.min(self.height - 1) {
            for x in b.x0..=b.x1.min(self.width - 1) {
                hit[self.label(x, y) as usize] = true;
            }
        }
        hit
    }

    /// Union of the selected superpixels.
    pub fn mask_of(&self, selected: &[bool]) -> Result<BinaryMask> {
        if selected.len() != self.count() {
            return Err(Error::LengthMismatch { expected: self.count(), found: selected.len() });
        }
        let pixels: Vec<bool> = self.labels.iter().map(|&l| selected[l as usize]).collect();
        BinaryMask::encode(self.width, self.height, &pixels)
    }
}

/// Average of the grid value over each superpixel's pixels. Pixels outside the
/// padded box contribute 0.
pub fn project_to_superpixels(
    grid: &GridMask,
    bbox: PixelBox,
    padding: u32,
    sp: &SuperpixelMap,
) -> Result<Vec<f64>> {
    let (w, h) = sp.dims();
    if bbox.x0 >= w || bbox.y0 >= h {
        return Err(Error::InvalidConfig("box lies outside the image"));
    }
    let b = bbox.padded(padding, w, h);
    let row_cell = cell_of_offset(b.height());
    let col_cell = cell_of_offset(b.width());
    let mut sums = vec![0.0; sp.count()];
    for y in b.y0..=b.y1 {
        for x in b.x0..=b.x1 {
            let cell = row_cell[(y - b.y0) as usize] * GRID_SIZE + col_cell[(x - b.x0) as usize];
            sums[sp.label(x, y) as usize] += grid.values[cell];
        }
    }
    Ok(sums.iter().zip(sp.sizes()).map(|(s, n)| s / n as f64).collect())
}
