//! Top-down region refinement.
//!
//! A detection's padded box is cut into a 10x10 grid. One logistic model per
//! cell predicts foreground probability from the region's features and its own
//! discretized mask. The coarse grid is averaged onto superpixels, and a
//! second logistic model over (projected value, in-region bit) decides which
//! superpixels form the refined mask.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::classify::{train_logistic, LinearModel, ModelKind, TrainingConfig};
use crate::data::{by_image, Candidate, Detection, FeatureTable, GroundTruthInstance, RegionRef};
use crate::error::{Error, Result};
use crate::grid::{discretize_to_grid, project_to_superpixels, GridMask, SuperpixelMap, GRID_CELLS};
use crate::mask::BinaryMask;

/// Regions must overlap an instance by more than this to train refinement.
pub const TRAINING_OVERLAP: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub struct RefineConfig {
    /// Context added around the box before discretizing.
    pub padding: u32,
    /// Superpixels with probability above this are kept.
    pub threshold: f64,
    pub training: TrainingConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            padding: 16,
            threshold: 0.5,
            training: TrainingConfig { lambda: 1e-3, max_epochs: 300, ..TrainingConfig::default() },
        }
    }
}

/// 100 per-cell logistic models over `features ++ region grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseMaskModel {
    pub category_id: u32,
    pub feature_dim: usize,
    pub padding: u32,
    /// Row-major grid cells.
    pub cells: Vec<LinearModel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelStageModel {
    /// Inputs: projected coarse value, in-region bit.
    pub model: LinearModel,
    pub threshold: f64,
}

/// Everything needed to refine detections of one category.
#[derive(Debug, Clone, PartialEq)]
pub struct Refiner {
    pub coarse: CoarseMaskModel,
    pub stage2: SuperpixelStageModel,
}

impl Refiner {
    pub fn category_id(&self) -> u32 {
        self.coarse.category_id
    }

    pub fn padding(&self) -> u32 {
        self.coarse.padding
    }

    pub fn refine(&self, det: &Detection, feat: &[f64], sp: &SuperpixelMap) -> Result<Detection> {
        refine_detection(det, &self.coarse, &self.stage2, feat, sp, self.coarse.padding)
    }
}

/// A candidate overlapping a same-category instance by more than 0.7.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingRegion {
    pub candidate: usize,
    pub instance: usize,
    pub overlap: f64,
}

/// Candidates qualifying as refinement training examples, each paired with its
/// best-overlapping instance of `category`.
pub fn training_regions(
    candidates: &[Candidate],
    instances: &[GroundTruthInstance],
    category: u32,
) -> Result<Vec<TrainingRegion>> {
    let gts_by_image = by_image(instances, |g| g.image_id.as_str());
    let mut out = Vec::new();
    for (ci, c) in candidates.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for &g in gts_by_image.get(c.image_id.as_str()).into_iter().flatten() {
            if instances[g].category_id != category {
                continue;
            }
            let o = c.mask.overlap(&instances[g].mask)?;
            if best.is_none_or(|(_, bo)| o > bo) {
                best = Some((g, o));
            }
        }
        if let Some((g, o)) = best.filter(|&(_, o)| o > TRAINING_OVERLAP) {
            out.push(TrainingRegion { candidate: ci, instance: g, overlap: o });
        }
    }
    Ok(out)
}

pub fn coarse_input(feat: &[f64], region_grid: &GridMask) -> Vec<f64> {
    let mut x = Vec::with_capacity(feat.len() + GRID_CELLS);
    x.extend_from_slice(feat);
    x.extend_from_slice(region_grid.values());
    x
}

/// Fits one cell model. A cell whose label never varies gets a bias-only
/// model at the smoothed base rate instead of a degenerate fit.
fn fit_cell(rows: &[Vec<f64>], labels: &[bool], dim: usize, cfg: &TrainingConfig) -> Result<LinearModel> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        let p = (positives as f64 + 0.5) / (labels.len() as f64 + 1.0);
        let mut m = LinearModel::zeros(dim, ModelKind::Logistic);
        m.bias = libm::log(p / (1.0 - p));
        m.lambda = cfg.lambda;
        return Ok(m);
    }
    Ok(train_logistic(rows, labels, cfg)?.model)
}

pub fn train_coarse_model(
    candidates: &[Candidate],
    instances: &[GroundTruthInstance],
    features: &FeatureTable,
    category: u32,
    cfg: &RefineConfig,
) -> Result<CoarseMaskModel> {
    let regions = training_regions(candidates, instances, category)?;
    if regions.is_empty() {
        return Err(Error::NoTrainingRegions { category });
    }
    let mut rows = Vec::with_capacity(regions.len());
    let mut labels: Vec<[bool; GRID_CELLS]> = Vec::with_capacity(regions.len());
    for r in &regions {
        let c = &candidates[r.candidate];
        let bbox = c.mask.bbox()?;
        let feat = features.require(&c.image_id, RegionRef::Candidate(c.candidate_id))?;
        rows.push(coarse_input(feat, &discretize_to_grid(&c.mask, bbox, cfg.padding)?));
        let truth = discretize_to_grid(&instances[r.instance].mask, bbox, cfg.padding)?;
        let mut cell_labels = [false; GRID_CELLS];
        for (l, v) in cell_labels.iter_mut().zip(truth.values()) {
            *l = *v >= 0.5;
        }
        labels.push(cell_labels);
    }
    let dim = features.dim() + GRID_CELLS;
    let cells = (0..GRID_CELLS)
        .map(|cell| {
            let y: Vec<bool> = labels.iter().map(|l| l[cell]).collect();
            fit_cell(&rows, &y, dim, &cfg.training)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CoarseMaskModel { category_id: category, feature_dim: features.dim(), padding: cfg.padding, cells })
}

/// Foreground probability of each cell.
pub fn predict_coarse(model: &CoarseMaskModel, feat: &[f64], region_grid: &GridMask) -> Result<GridMask> {
    if feat.len() != model.feature_dim {
        return Err(Error::LengthMismatch { expected: model.feature_dim, found: feat.len() });
    }
    let x = coarse_input(feat, region_grid);
    let probs = model.cells.iter().map(|m| m.predict_prob(&x)).collect::<Result<Vec<_>>>()?;
    GridMask::from_values(&probs)
}

/// Per-superpixel stage-two inputs for a region: `(projected coarse value,
/// in-region bit)`. A superpixel is in the region when at least half of its
/// pixels are.
pub fn stage2_inputs(
    mask: &BinaryMask,
    coarse: &GridMask,
    sp: &SuperpixelMap,
    padding: u32,
) -> Result<Vec<[f64; 2]>> {
    let projected = project_to_superpixels(coarse, mask.bbox()?, padding, sp)?;
    let inside = sp.coverage(mask)?;
    Ok(projected.iter().zip(inside).map(|(&p, c)| [p, if c >= 0.5 { 1.0 } else { 0.0 }]).collect())
}

/// Trains the superpixel classifier on the refinement training regions of
/// each given coarse model's category. Pass one model for a per-category
/// stage, or several to share one stage across categories.
pub fn train_stage2(
    candidates: &[Candidate],
    instances: &[GroundTruthInstance],
    coarse: &[&CoarseMaskModel],
    features: &FeatureTable,
    superpixels: &BTreeMap<String, SuperpixelMap>,
    cfg: &RefineConfig,
) -> Result<SuperpixelStageModel> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for model in coarse {
        let regions = training_regions(candidates, instances, model.category_id)?;
        if regions.is_empty() {
            return Err(Error::NoTrainingRegions { category: model.category_id });
        }
        for r in regions {
            let c = &candidates[r.candidate];
            let sp = superpixels
                .get(&c.image_id)
                .ok_or(Error::InvalidSuperpixels("no superpixel map for image"))?;
            let bbox = c.mask.bbox()?;
            let feat = features.require(&c.image_id, RegionRef::Candidate(c.candidate_id))?;
            let grid = predict_coarse(model, feat, &discretize_to_grid(&c.mask, bbox, model.padding)?)?;
            let inputs = stage2_inputs(&c.mask, &grid, sp, model.padding)?;
            let truth = sp.coverage(&instances[r.instance].mask)?;
            let near = sp.touching(&bbox.padded(model.padding, sp.width(), sp.height()));
            for ((x, t), keep) in inputs.iter().zip(truth).zip(near) {
                if keep {
                    rows.push(x.to_vec());
                    labels.push(t >= 0.5);
                }
            }
        }
    }
    let model = train_logistic(&rows, &labels, &cfg.training)?.model;
    Ok(SuperpixelStageModel { model, threshold: cfg.threshold })
}

/// Replaces a detection's mask by the union of superpixels the second stage
/// accepts. Score and category are unchanged; an empty result keeps the
/// original mask.
pub fn refine_detection(
    det: &Detection,
    coarse: &CoarseMaskModel,
    stage2: &SuperpixelStageModel,
    feat: &[f64],
    sp: &SuperpixelMap,
    padding: u32,
) -> Result<Detection> {
    let bbox = det.mask.bbox()?;
    let grid = predict_coarse(coarse, feat, &discretize_to_grid(&det.mask, bbox, padding)?)?;
    let inputs = stage2_inputs(&det.mask, &grid, sp, padding)?;
    let keep = inputs
        .iter()
        .map(|x| Ok(stage2.model.predict_prob(x)? > stage2.threshold))
        .collect::<Result<Vec<bool>>>()?;
    let refined = sp.mask_of(&keep)?;
    let mut out = det.clone();
    if !refined.is_empty() {
        out.mask = refined;
    }
    Ok(out)
}
