use alloc::string::String;
use alloc::vec::Vec;

use super::model::{LinearModel, TrainingConfig};
use super::train::train_svm;
use crate::data::{by_image, Candidate, FeatureTable, GroundTruthInstance, RegionRef};
use crate::error::{Error, Result};

/// The candidate picked as positive for one ground-truth instance in round two.
#[derive(Debug, Clone, PartialEq)]
pub struct PositiveChoice {
    pub image_id: String,
    pub instance_id: u64,
    pub candidate_id: u64,
    pub overlap: f64,
    pub round1_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionTraining {
    /// The round-two model.
    pub model: LinearModel,
    pub round1: LinearModel,
    pub positives: Vec<PositiveChoice>,
    /// `(image_id, instance_id)` of instances with no candidate above the positive threshold.
    pub discarded: Vec<(String, u64)>,
    pub negatives: usize,
}

/// Trains the SVM for one category in two rounds.
///
/// Round one uses the ground-truth regions themselves as positives and
/// candidates whose best overlap with a same-category instance is below the
/// negative threshold as negatives. Round two replaces each instance by its
/// highest-scoring candidate overlapping it by more than the positive
/// threshold, drops instances with no such candidate, and retrains against
/// the same negatives.
pub fn train_region_classifier(
    candidates: &[Candidate],
    instances: &[GroundTruthInstance],
    features: &FeatureTable,
    category: u32,
    cfg: &TrainingConfig,
) -> Result<RegionTraining> {
    cfg.validate()?;
    let gts: Vec<&GroundTruthInstance> = instances.iter().filter(|g| g.category_id == category).collect();
    if gts.is_empty() {
        return Err(Error::NoPositives { category });
    }
    let gts_by_image = by_image(&gts, |g| g.image_id.as_str());

    // overlaps[c] = overlap of candidate c with each same-image instance of the category
    let mut overlaps: Vec<Vec<(usize, f64)>> = Vec::with_capacity(candidates.len());
    for c in candidates {
        let mut row = Vec::new();
        if let Some(idx) = gts_by_image.get(c.image_id.as_str()) {
            for &g in idx {
                row.push((g, cfg.label_overlap.between(&c.mask, &gts[g].mask)?));
            }
        }
        overlaps.push(row);
    }

    let mut neg_rows = Vec::new();
    for (c, ov) in candidates.iter().zip(&overlaps) {
        let best = ov.iter().map(|&(_, o)| o).fold(0.0, f64::max);
        if best < cfg.negative_overlap {
            neg_rows.push(features.require(&c.image_id, RegionRef::Candidate(c.candidate_id))?.to_vec());
        }
    }
    let negatives = neg_rows.len();

    let gt_rows = gts
        .iter()
        .map(|g| features.require(&g.image_id, RegionRef::Instance(g.instance_id)).map(<[f64]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    let round1 = fit(gt_rows, &neg_rows, cfg)?;

    let mut best: Vec<Option<(f64, u64, f64)>> = alloc::vec![None; gts.len()];
    for (c, ov) in candidates.iter().zip(&overlaps) {
        let eligible: Vec<_> = ov.iter().filter(|&&(_, o)| o > cfg.positive_overlap).collect();
        if eligible.is_empty() {
            continue;
        }
        let s = round1.decision(features.require(&c.image_id, RegionRef::Candidate(c.candidate_id))?)?;
        for &&(g, o) in &eligible {
            let better = match best[g] {
                None => true,
                Some((bs, bid, _)) => s > bs || (s == bs && c.candidate_id < bid),
            };
            if better {
                best[g] = Some((s, c.candidate_id, o));
            }
        }
    }

    let mut positives = Vec::new();
    let mut discarded = Vec::new();
    let mut pos_rows = Vec::new();
    for (g, choice) in gts.iter().zip(&best) {
        match choice {
            Some((s, cid, o)) => {
                pos_rows.push(features.require(&g.image_id, RegionRef::Candidate(*cid))?.to_vec());
                positives.push(PositiveChoice {
                    image_id: g.image_id.clone(),
                    instance_id: g.instance_id,
                    candidate_id: *cid,
                    overlap: *o,
                    round1_score: *s,
                });
            }
            None => discarded.push((g.image_id.clone(), g.instance_id)),
        }
    }
    if positives.is_empty() {
        return Err(Error::NoPositives { category });
    }
    let model = fit(pos_rows, &neg_rows, cfg)?;
    Ok(RegionTraining { model, round1, positives, discarded, negatives })
}

fn fit(mut rows: Vec<Vec<f64>>, negatives: &[Vec<f64>], cfg: &TrainingConfig) -> Result<LinearModel> {
    let mut labels = alloc::vec![true; rows.len()];
    rows.extend_from_slice(negatives);
    labels.resize(rows.len(), false);
    Ok(train_svm(&rows, &labels, cfg)?.model)
}
