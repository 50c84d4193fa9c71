//! Seeded synthetic datasets for desk-scale runs.
//!
//! [`generate`] paints rectangles, ellipses and L-shapes with occlusion and
//! derives candidates and oracle features from them. [`refinement_benchmark`]
//! builds superpixel-aligned rectangles whose candidates carry a spurious
//! block of tiles next to the object.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sds_core::grid::discretize_to_grid;
use sds_core::{
    BinaryMask, Candidate, CategoryGroups, Detection, FeatureTable, GroundTruthInstance, PixelBox, RegionRef,
    SuperpixelMap,
};

use crate::format::Dataset;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub images: usize,
    pub shapes: usize,
    pub categories: u32,
    pub width: u32,
    pub height: u32,
    /// Side of the square superpixel tiles.
    pub tile: u32,
    /// Random background rectangles added to each image's candidates.
    pub background_candidates: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { seed: 0, images: 10, shapes: 3, categories: 3, width: 64, height: 64, tile: 4, background_candidates: 3 }
    }
}

pub fn image_id(i: usize) -> String {
    format!("img{i:05}")
}

/// Sample group assignment: consecutive pairs of categories share a group.
pub fn sample_groups(categories: u32) -> CategoryGroups {
    let mut g = CategoryGroups::new();
    for c in 1..=categories {
        g.insert(c, format!("group{}", (c - 1) / 2 + 1));
    }
    g
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect,
    Ellipse,
    L,
}

struct Grid {
    w: u32,
    h: u32,
    px: Vec<bool>,
}

impl Grid {
    fn of(m: &BinaryMask) -> Self {
        Grid { w: m.width(), h: m.height(), px: m.decode() }
    }

    fn get(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.w as i64 && y < self.h as i64 && self.px[(y * self.w as i64 + x) as usize]
    }

    fn map(&self, f: impl Fn(i64, i64) -> bool) -> BinaryMask {
        BinaryMask::from_fn(self.w, self.h, |x, y| f(x as i64, y as i64)).expect("non-empty image")
    }

    /// 4-neighbourhood dilation (`grow`) or erosion.
    fn morph(&self, grow: bool) -> BinaryMask {
        let n = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)];
        self.map(|x, y| {
            if grow {
                n.iter().any(|(dx, dy)| self.get(x + dx, y + dy))
            } else {
                n.iter().all(|(dx, dy)| self.get(x + dx, y + dy))
            }
        })
    }

    fn shift(&self, dx: i64, dy: i64) -> BinaryMask {
        self.map(|x, y| self.get(x - dx, y - dy))
    }
}

fn paint(shape: Shape, b: PixelBox, x: u32, y: u32) -> bool {
    if !b.contains(x, y) {
        return false;
    }
    match shape {
        Shape::Rect => true,
        Shape::Ellipse => {
            let (cx, cy) = (f64::from(b.x0 + b.x1) / 2.0, f64::from(b.y0 + b.y1) / 2.0);
            let (rx, ry) = (f64::from(b.width()) / 2.0, f64::from(b.height()) / 2.0);
            let (u, v) = ((f64::from(x) - cx) / rx, (f64::from(y) - cy) / ry);
            u * u + v * v <= 1.0
        }
        // vertical bar along the left edge plus horizontal bar along the bottom
        Shape::L => x < b.x0 + b.width().div_ceil(3) || y > b.y1 - b.height().div_ceil(3),
    }
}

fn random_box(rng: &mut ChaCha8Rng, w: u32, h: u32, min: u32, max: u32) -> PixelBox {
    let bw = rng.gen_range(min..=max.min(w));
    let bh = rng.gen_range(min..=max.min(h));
    let x0 = rng.gen_range(0..=w - bw);
    let y0 = rng.gen_range(0..=h - bh);
    PixelBox::new(x0, y0, x0 + bw - 1, y0 + bh - 1)
}

/// Oracle features: best overlap with each category's instances, then
/// normalized area and bbox aspect `w / (w + h)`.
pub fn oracle_features(mask: &BinaryMask, instances: &[&GroundTruthInstance], categories: u32) -> Vec<f64> {
    let mut row = vec![0.0f64; categories as usize];
    for g in instances {
        let o = mask.overlap(&g.mask).expect("same image size");
        let slot = &mut row[(g.category_id - 1) as usize];
        *slot = (*slot).max(o);
    }
    let b = mask.bbox().expect("non-empty mask");
    row.push(mask.area() as f64 / (u64::from(mask.width()) * u64::from(mask.height())) as f64);
    row.push(f64::from(b.width()) / f64::from(b.width() + b.height()));
    row
}

/// Deterministic synthetic dataset with oracle features.
///
/// # Panics
/// If any count or dimension is zero.
pub fn generate(cfg: &SynthConfig) -> Dataset {
    assert!(cfg.images > 0 && cfg.shapes > 0 && cfg.categories > 0, "counts must be positive");
    assert!(cfg.width >= 8 && cfg.height >= 8 && cfg.tile > 0, "image too small");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (w, h) = (cfg.width, cfg.height);
    let mut ds = Dataset {
        groups: sample_groups(cfg.categories),
        features: FeatureTable::new(cfg.categories as usize + 2),
        ..Dataset::default()
    };
    for i in 0..cfg.images {
        let id = image_id(i);
        let mut owner: Vec<Option<usize>> = vec![None; (w * h) as usize];
        let mut cats = Vec::with_capacity(cfg.shapes);
        for s in 0..cfg.shapes {
            let shape = [Shape::Rect, Shape::Ellipse, Shape::L][rng.gen_range(0..3)];
            let b = random_box(&mut rng, w, h, w.min(h) / 6, w.min(h) * 7 / 16);
            cats.push(rng.gen_range(1..=cfg.categories));
            for y in b.y0..=b.y1 {
                for x in b.x0..=b.x1 {
                    if paint(shape, b, x, y) {
                        owner[(y * w + x) as usize] = Some(s);
                    }
                }
            }
        }
        let first = ds.instances.len();
        for (s, &category_id) in cats.iter().enumerate() {
            let mask = BinaryMask::from_fn(w, h, |x, y| owner[(y * w + x) as usize] == Some(s)).expect("non-empty image");
            if !mask.is_empty() {
                ds.instances.push(GroundTruthInstance { image_id: id.clone(), instance_id: s as u64, category_id, mask });
            }
        }
        let gts: Vec<&GroundTruthInstance> = ds.instances[first..].iter().collect();

        let mut masks = Vec::new();
        for g in &gts {
            let grid = Grid::of(&g.mask);
            let b = g.mask.bbox().expect("non-empty");
            let (dx, dy) = loop {
                let d = (rng.gen_range(-4i64..=4), rng.gen_range(-4i64..=4));
                if d != (0, 0) {
                    break d;
                }
            };
            let half = if rng.gen_bool(0.5) {
                let mid = b.x0 + b.width() / 2;
                grid.map(|x, y| grid.get(x, y) && x < i64::from(mid))
            } else {
                let mid = b.y0 + b.height() / 2;
                grid.map(|x, y| grid.get(x, y) && y < i64::from(mid))
            };
            masks.extend([g.mask.clone(), grid.morph(true), grid.morph(false), grid.shift(dx, dy), half]);
        }
        for _ in 0..cfg.background_candidates {
            let b = random_box(&mut rng, w, h, 3, w.min(h) / 4);
            masks.push(BinaryMask::from_box(w, h, b).expect("box inside image"));
        }
        for (k, mask) in masks.into_iter().filter(|m| !m.is_empty()).enumerate() {
            let row = oracle_features(&mask, &gts, cfg.categories);
            ds.features.insert(&id, RegionRef::Candidate(k as u64), row).expect("dimension");
            ds.candidates.push(Candidate { image_id: id.clone(), candidate_id: k as u64, mask });
        }
        for g in &gts {
            let row = oracle_features(&g.mask, &gts, cfg.categories);
            ds.features.insert(&id, RegionRef::Instance(g.instance_id), row).expect("dimension");
        }
        ds.superpixels.insert(id, SuperpixelMap::tiles(w, h, cfg.tile).expect("valid tiling"));
    }
    ds
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineBenchConfig {
    pub seed: u64,
    pub images: usize,
    pub categories: u32,
    pub width: u32,
    pub height: u32,
    pub tile: u32,
    /// Padding used for the oracle feature grids; match the refiner's.
    pub padding: u32,
}

impl Default for RefineBenchConfig {
    fn default() -> Self {
        Self { seed: 0, images: 40, categories: 2, width: 64, height: 64, tile: 4, padding: 16 }
    }
}

/// Tile-aligned box: `n` tiles wide starting at tile `t`.
fn tile_box(tile: u32, tx: u32, ty: u32, nx: u32, ny: u32) -> PixelBox {
    PixelBox::new(tx * tile, ty * tile, (tx + nx) * tile - 1, (ty + ny) * tile - 1)
}

/// One tile-aligned rectangle per image. Candidate 0 adds a single spurious
/// tile to the object, candidate 1 a block of random size along one side and
/// candidates 2 to 5 a one-tile strip along each side.
/// Features are the instance's cell fractions over each candidate's padded
/// box, a perfect top-down prior. `detections` holds one detection per
/// image built from candidate 1.
pub fn refinement_benchmark(cfg: &RefineBenchConfig) -> Dataset {
    assert!(cfg.images > 0 && cfg.categories > 0 && cfg.tile > 0, "counts must be positive");
    let (w, h, t) = (cfg.width, cfg.height, cfg.tile);
    let (tiles_x, tiles_y) = (w / t, h / t);
    assert!(tiles_x >= 10 && tiles_y >= 10, "need at least 10 tiles per side");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ds = Dataset { features: FeatureTable::new(sds_core::grid::GRID_CELLS), ..Dataset::default() };
    ds.groups = sample_groups(cfg.categories);
    for i in 0..cfg.images {
        let id = image_id(i);
        let (nx, ny) = (rng.gen_range(2..=4), rng.gen_range(2..=4));
        // keep at least 4 tiles of room on every side for the spurious block
        let tx = rng.gen_range(4..=tiles_x - nx - 4);
        let ty = rng.gen_range(4..=tiles_y - ny - 4);
        let obj = tile_box(t, tx, ty, nx, ny);
        let category_id = rng.gen_range(1..=cfg.categories);
        let gt = BinaryMask::from_box(w, h, obj).expect("inside image");

        let single = tile_box(t, tx + nx, ty + rng.gen_range(0..ny), 1, 1);
        let depth = rng.gen_range(1..=4);
        let block = match rng.gen_range(0..4) {
            0 => tile_box(t, tx, ty + ny, nx, depth),
            1 => tile_box(t, tx, ty - depth, nx, depth),
            2 => tile_box(t, tx + nx, ty, depth, ny),
            _ => tile_box(t, tx - depth, ty, depth, ny),
        };
        let strips = [
            tile_box(t, tx, ty + ny, nx, 1),
            tile_box(t, tx, ty - 1, nx, 1),
            tile_box(t, tx + nx, ty, 1, ny),
            tile_box(t, tx - 1, ty, 1, ny),
        ];
        for (k, extra) in [single, block].into_iter().chain(strips).enumerate() {
            let mask = gt.union(&BinaryMask::from_box(w, h, extra).expect("inside image")).expect("same size");
            let bbox = mask.bbox().expect("non-empty");
            let grid = discretize_to_grid(&gt, bbox, cfg.padding).expect("valid box");
            ds.features.insert(&id, RegionRef::Candidate(k as u64), grid.values().to_vec()).expect("dimension");
            if k == 1 {
                ds.detections.push(Detection {
                    image_id: id.clone(),
                    category_id,
                    score: rng.gen::<f64>(),
                    mask: mask.clone(),
                    source_candidate_id: Some(1),
                });
            }
            ds.candidates.push(Candidate { image_id: id.clone(), candidate_id: k as u64, mask });
        }
        ds.instances.push(GroundTruthInstance { image_id: id.clone(), instance_id: 0, category_id, mask: gt });
        ds.superpixels.insert(id, SuperpixelMap::tiles(w, h, t).expect("valid tiling"));
    }
    ds
}
