//! Multi-category driver code shared by the CLI and the tests.

use std::collections::BTreeMap;

use rayon::prelude::*;
use sds_core::classify::{train_region_classifier, LinearModel, RegionTraining, TrainingConfig};
use sds_core::nms::{cap_top_k, region_nms_indices};
use sds_core::refine::{train_coarse_model, train_stage2, CoarseMaskModel, RefineConfig, Refiner};
use sds_core::{Detection, Error, OverlapKind, RegionRef, Result};

use crate::format::Dataset;

/// Trains the two-round region classifier for each category, in parallel on
/// the current rayon pool. Results keep the order of `categories`.
pub fn train_categories(ds: &Dataset, categories: &[u32], cfg: &TrainingConfig) -> Result<Vec<(u32, RegionTraining)>> {
    categories
        .par_iter()
        .map(|&c| Ok((c, train_region_classifier(&ds.candidates, &ds.instances, &ds.features, c, cfg)?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreConfig {
    pub nms_threshold: f64,
    pub nms_mode: OverlapKind,
    pub top_k: usize,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self { nms_threshold: 0.0, nms_mode: OverlapKind::Region, top_k: sds_core::nms::DEFAULT_TOP_K }
    }
}

/// Scores every candidate under each category model, suppresses per
/// (image, category) and keeps the best `top_k` per category. Output is
/// grouped by category in the order of `models`, ranked within each.
pub fn score_candidates(ds: &Dataset, models: &[(u32, LinearModel)], cfg: &ScoreConfig) -> Result<Vec<Detection>> {
    let per_category: Vec<Vec<Detection>> = models
        .par_iter()
        .map(|(category, model)| {
            let mut by_image: BTreeMap<&str, Vec<Detection>> = BTreeMap::new();
            for c in &ds.candidates {
                let score = model.decision(ds.features.require(&c.image_id, RegionRef::Candidate(c.candidate_id))?)?;
                by_image.entry(&c.image_id).or_default().push(Detection {
                    image_id: c.image_id.clone(),
                    category_id: *category,
                    score,
                    mask: c.mask.clone(),
                    source_candidate_id: Some(c.candidate_id),
                });
            }
            let mut kept = Vec::new();
            for dets in by_image.values() {
                for i in region_nms_indices(dets, cfg.nms_threshold, cfg.nms_mode)? {
                    kept.push(dets[i].clone());
                }
            }
            Ok(cap_top_k(&kept, cfg.top_k))
        })
        .collect::<Result<_>>()?;
    Ok(per_category.into_iter().flatten().collect())
}

/// Trains a refiner per category. With `share_stage2`, one superpixel stage
/// is fitted on the pooled regions of all categories.
pub fn train_refiners(ds: &Dataset, categories: &[u32], cfg: &RefineConfig, share_stage2: bool) -> Result<Vec<Refiner>> {
    let coarse: Vec<CoarseMaskModel> = categories
        .par_iter()
        .map(|&c| train_coarse_model(&ds.candidates, &ds.instances, &ds.features, c, cfg))
        .collect::<Result<_>>()?;
    let stage = |models: &[&CoarseMaskModel]| train_stage2(&ds.candidates, &ds.instances, models, &ds.features, &ds.superpixels, cfg);
    if share_stage2 {
        let shared = stage(&coarse.iter().collect::<Vec<_>>())?;
        Ok(coarse.into_iter().map(|c| Refiner { coarse: c, stage2: shared.clone() }).collect())
    } else {
        coarse.into_par_iter().map(|c| Ok(Refiner { stage2: stage(&[&c])?, coarse: c })).collect()
    }
}

/// Refines each detection with its category's refiner. Detections of
/// categories without a refiner pass through unchanged. Features come from
/// the detection's source candidate.
pub fn refine_detections(ds: &Dataset, dets: &[Detection], refiners: &[Refiner]) -> Result<Vec<Detection>> {
    let by_cat: BTreeMap<u32, &Refiner> = refiners.iter().map(|r| (r.category_id(), r)).collect();
    dets.par_iter()
        .map(|d| {
            let Some(r) = by_cat.get(&d.category_id) else {
                return Ok(d.clone());
            };
            let cand = d.source_candidate_id.ok_or(Error::InvalidConfig("refinement needs source candidate ids"))?;
            let feat = ds.features.require(&d.image_id, RegionRef::Candidate(cand))?;
            let sp = ds.superpixels.get(&d.image_id).ok_or(Error::InvalidSuperpixels("no superpixel map for image"))?;
            r.refine(d, feat, sp)
        })
        .collect()
}
