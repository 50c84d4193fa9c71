//! Error-mode analysis of a detector's output.
//!
//! False positives at the strict threshold are split into mislocalizations
//! (right object, poor mask, or a duplicate), confusions with a category of
//! the same group, and detections on background. Oracles then remove or fix
//! mislocalizations to show how much AP they cost.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{by_image, rank_order, CategoryGroups, Detection, GroundTruthInstance};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate, AffinityTable, EvalReport, MatchCriterion, PrCurve};
use crate::geom::OverlapKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FalsePositiveKind {
    /// Overlaps a same-category instance above the lenient threshold, or is a duplicate.
    Mislocalized,
    /// Overlaps an instance of another category in the same group.
    SimilarCategory,
    Background,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DetectionOutcome {
    TruePositive,
    FalsePositive(FalsePositiveKind),
}

impl DetectionOutcome {
    pub fn fp_kind(self) -> Option<FalsePositiveKind> {
        match self {
            DetectionOutcome::TruePositive => None,
            DetectionOutcome::FalsePositive(k) => Some(k),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnoseConfig {
    pub strict: f64,
    pub lenient: f64,
    /// Threshold for the pixel precision / pixel recall APs.
    pub pixel_threshold: f64,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self { strict: 0.5, lenient: 0.1, pixel_threshold: 0.67 }
    }
}

fn region() -> MatchCriterion {
    MatchCriterion::Overlap(OverlapKind::Region)
}

/// Per-category state shared by the classification and the oracles.
struct CategoryMatch<'a> {
    dets: Vec<usize>,
    gts: Vec<&'a GroundTruthInstance>,
    /// Strict-threshold TP flag per entry of `dets`.
    strict_tp: Vec<bool>,
    lenient_tp: Vec<bool>,
    /// Best overlap with any same-category instance in the image.
    best_overlap: Vec<f64>,
    /// Instances claimed at the strict threshold.
    strict_taken: Vec<bool>,
}

fn match_categories<'a>(
    dets: &[Detection],
    gts: &'a [GroundTruthInstance],
    cfg: &DiagnoseConfig,
) -> Result<BTreeMap<u32, CategoryMatch<'a>>> {
    let mut out = BTreeMap::new();
    let cats: BTreeSet<u32> = dets.iter().map(|d| d.category_id).collect();
    for cat in cats {
        let idx: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].category_id == cat).collect();
        let cat_dets: Vec<&Detection> = idx.iter().map(|&i| &dets[i]).collect();
        let cat_gts: Vec<&GroundTruthInstance> = gts.iter().filter(|g| g.category_id == cat).collect();
        let table = AffinityTable::new(&cat_dets, &cat_gts, region())?;
        let strict = table.assign(cfg.strict);
        let lenient = table.assign(cfg.lenient);
        let mut best_overlap = vec![0.0; idx.len()];
        let mut strict_taken = vec![false; cat_gts.len()];
        for e in &strict.entries {
            if let Some(g) = e.gt {
                strict_taken[g] = true;
            }
        }
        // for TPs `affinity` is the matched overlap; recompute the maximum
        let full = table.assign(f64::INFINITY);
        for e in &full.entries {
            best_overlap[e.detection] = e.affinity;
        }
        out.insert(
            cat,
            CategoryMatch {
                strict_tp: strict.labels(),
                lenient_tp: lenient.labels(),
                dets: idx,
                gts: cat_gts,
                best_overlap,
                strict_taken,
            },
        );
    }
    Ok(out)
}

/// Labels every detection as a true positive or one kind of false positive.
///
/// Every category among the detections and the ground truth must have a group.
pub fn classify_false_positives(
    dets: &[Detection],
    gts: &[GroundTruthInstance],
    groups: &CategoryGroups,
    cfg: &DiagnoseConfig,
) -> Result<Vec<DetectionOutcome>> {
    let all_cats = dets.iter().map(|d| d.category_id).chain(gts.iter().map(|g| g.category_id));
    if let Some(category) = groups.missing(all_cats).next() {
        return Err(Error::MissingGroup { category });
    }
    let gts_by_image = by_image(gts, |g| g.image_id.as_str());
    let mut out = vec![DetectionOutcome::TruePositive; dets.len()];
    for (cat, m) in match_categories(dets, gts, cfg)? {
        for (k, &i) in m.dets.iter().enumerate() {
            if m.strict_tp[k] {
                continue;
            }
            let kind = if m.lenient_tp[k] || m.best_overlap[k] > cfg.lenient {
                FalsePositiveKind::Mislocalized
            } else {
                let d = &dets[i];
                let mut similar = false;
                for &g in gts_by_image.get(d.image_id.as_str()).into_iter().flatten() {
                    let g = &gts[g];
                    if g.category_id != cat
                        && groups.same_group(cat, g.category_id)
                        && d.mask.overlap(&g.mask)? > cfg.lenient
                    {
                        similar = true;
                        break;
                    }
                }
                if similar {
                    FalsePositiveKind::SimilarCategory
                } else {
                    FalsePositiveKind::Background
                }
            };
            out[i] = DetectionOutcome::FalsePositive(kind);
        }
    }
    Ok(out)
}

/// Mislocalized flags without needing category groups.
fn mislocalized(dets: &[Detection], gts: &[GroundTruthInstance], cfg: &DiagnoseConfig) -> Result<Vec<bool>> {
    let mut out = vec![false; dets.len()];
    for m in match_categories(dets, gts, cfg)?.values() {
        for (k, &i) in m.dets.iter().enumerate() {
            out[i] = !m.strict_tp[k] && (m.lenient_tp[k] || m.best_overlap[k] > cfg.lenient);
        }
    }
    Ok(out)
}

/// Detections with the mislocalized ones removed.
pub fn remove_mislocalized(dets: &[Detection], gts: &[GroundTruthInstance], cfg: &DiagnoseConfig) -> Result<Vec<Detection>> {
    let flags = mislocalized(dets, gts, cfg)?;
    Ok(dets.iter().zip(flags).filter(|(_, m)| !m).map(|(d, _)| d.clone()).collect())
}

/// Detections with mislocalizations fixed: in ranking order, each mislocalized
/// detection takes the mask of its best-overlapping instance (overlap above the
/// lenient threshold) among those not matched at the strict threshold and not
/// already taken by an earlier correction. A mislocalized detection with no
/// such instance is a duplicate and is dropped.
pub fn correct_mislocalized(dets: &[Detection], gts: &[GroundTruthInstance], cfg: &DiagnoseConfig) -> Result<Vec<Detection>> {
    let flags = mislocalized(dets, gts, cfg)?;
    let mut out: Vec<Option<Detection>> = dets.iter().map(|d| Some(d.clone())).collect();
    for m in match_categories(dets, gts, cfg)?.values() {
        let mut claimed = m.strict_taken.clone();
        let cat_dets: Vec<&Detection> = m.dets.iter().map(|&i| &dets[i]).collect();
        for k in rank_order(&cat_dets) {
            let i = m.dets[k];
            if !flags[i] {
                continue;
            }
            let d = &dets[i];
            let mut target: Option<(usize, f64)> = None;
            for (g, gt) in m.gts.iter().enumerate() {
                if claimed[g] || gt.image_id != d.image_id {
                    continue;
                }
                let o = d.mask.overlap(&gt.mask)?;
                let better = match target {
                    None => o > cfg.lenient,
                    Some((bg, bo)) => o > bo || (o == bo && gt.instance_id < m.gts[bg].instance_id),
                };
                if better {
                    target = Some((g, o));
                }
            }
            match target {
                Some((g, _)) => {
                    claimed[g] = true;
                    if let Some(fixed) = out[i].as_mut() {
                        fixed.mask = m.gts[g].mask.clone();
                    }
                }
                None => out[i] = None,
            }
        }
    }
    Ok(out.into_iter().flatten().collect())
}

pub fn ap_remove_mislocalized(dets: &[Detection], gts: &[GroundTruthInstance], cfg: &DiagnoseConfig) -> Result<EvalReport> {
    evaluate(&remove_mislocalized(dets, gts, cfg)?, gts, &[cfg.strict], region())
}

pub fn ap_correct_mislocalized(dets: &[Detection], gts: &[GroundTruthInstance], cfg: &DiagnoseConfig) -> Result<EvalReport> {
    evaluate(&correct_mislocalized(dets, gts, cfg)?, gts, &[cfg.strict], region())
}

/// Best AP reachable with perfect localization; the correct-mislocalized oracle.
pub fn ap_upper_bound(dets: &[Detection], gts: &[GroundTruthInstance], cfg: &DiagnoseConfig) -> Result<EvalReport> {
    ap_correct_mislocalized(dets, gts, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PixelCriterion {
    Precision,
    Recall,
}

/// AP where a detection may claim an instance iff its pixel precision (or
/// recall) with it exceeds `threshold`.
pub fn ap_pixelwise(
    dets: &[Detection],
    gts: &[GroundTruthInstance],
    criterion: PixelCriterion,
    threshold: f64,
) -> Result<EvalReport> {
    let c = match criterion {
        PixelCriterion::Precision => MatchCriterion::PixelPrecision,
        PixelCriterion::Recall => MatchCriterion::PixelRecall,
    };
    evaluate(dets, gts, &[threshold], c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryDiagnosis {
    pub category_id: u32,
    pub ap: f64,
    pub ap_remove: f64,
    pub ap_correct: f64,
    pub ap_upper: f64,
    /// `ap_upper - ap`.
    pub loss_misloc: f64,
    pub ap_remove_similar: f64,
    pub ap_remove_background: f64,
    pub ap_pp: f64,
    pub ap_pr: f64,
    pub n_misloc: usize,
    pub n_similar: usize,
    pub n_background: usize,
    pub baseline_curve: PrCurve,
    pub remove_curve: PrCurve,
    pub correct_curve: PrCurve,
}

impl CategoryDiagnosis {
    /// Positive when the detector overshoots (pixel recall AP is higher).
    pub fn pp_minus_pr(&self) -> f64 {
        self.ap_pp - self.ap_pr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticReport {
    pub config: DiagnoseConfig,
    /// Categories with ground truth, ascending id.
    pub categories: Vec<CategoryDiagnosis>,
    /// Outcome for each input detection.
    pub outcomes: Vec<DetectionOutcome>,
}

impl DiagnosticReport {
    pub fn mean(&self, f: impl Fn(&CategoryDiagnosis) -> f64) -> f64 {
        if self.categories.is_empty() {
            return 0.0;
        }
        self.categories.iter().map(f).sum::<f64>() / self.categories.len() as f64
    }
}

fn without_kind(dets: &[Detection], outcomes: &[DetectionOutcome], kind: FalsePositiveKind) -> Vec<Detection> {
    dets.iter()
        .zip(outcomes)
        .filter(|(_, o)| o.fp_kind() != Some(kind))
        .map(|(d, _)| d.clone())
        .collect()
}

/// Runs every analysis and gathers per-category numbers.
pub fn diagnose(
    dets: &[Detection],
    gts: &[GroundTruthInstance],
    groups: &CategoryGroups,
    cfg: &DiagnoseConfig,
) -> Result<DiagnosticReport> {
    let outcomes = classify_false_positives(dets, gts, groups, cfg)?;
    let strict = [cfg.strict];
    let baseline = evaluate(dets, gts, &strict, region())?;
    let removed = ap_remove_mislocalized(dets, gts, cfg)?;
    let corrected = ap_correct_mislocalized(dets, gts, cfg)?;
    let no_similar = evaluate(&without_kind(dets, &outcomes, FalsePositiveKind::SimilarCategory), gts, &strict, region())?;
    let no_background = evaluate(&without_kind(dets, &outcomes, FalsePositiveKind::Background), gts, &strict, region())?;
    let pp = ap_pixelwise(dets, gts, PixelCriterion::Precision, cfg.pixel_threshold)?;
    let pr = ap_pixelwise(dets, gts, PixelCriterion::Recall, cfg.pixel_threshold)?;

    let mut categories = Vec::with_capacity(baseline.categories.len());
    for base in &baseline.categories {
        let cat = base.category_id;
        let ap_of = |r: &EvalReport| r.category(cat).map_or(0.0, |c| c.ap[0]);
        let curve_of = |r: &EvalReport| r.category(cat).map(|c| c.curves[0].clone()).unwrap_or_else(empty_curve);
        let count = |kind| {
            dets.iter()
                .zip(&outcomes)
                .filter(|(d, o)| d.category_id == cat && o.fp_kind() == Some(kind))
                .count()
        };
        let ap_correct = ap_of(&corrected);
        categories.push(CategoryDiagnosis {
            category_id: cat,
            ap: base.ap[0],
            ap_remove: ap_of(&removed),
            ap_correct,
            ap_upper: ap_correct,
            loss_misloc: ap_correct - base.ap[0],
            ap_remove_similar: ap_of(&no_similar),
            ap_remove_background: ap_of(&no_background),
            ap_pp: ap_of(&pp),
            ap_pr: ap_of(&pr),
            n_misloc: count(FalsePositiveKind::Mislocalized),
            n_similar: count(FalsePositiveKind::SimilarCategory),
            n_background: count(FalsePositiveKind::Background),
            baseline_curve: base.curves[0].clone(),
            remove_curve: curve_of(&removed),
            correct_curve: curve_of(&corrected),
        });
    }
    Ok(DiagnosticReport { config: *cfg, categories, outcomes })
}

fn empty_curve() -> PrCurve {
    PrCurve { scores: Vec::new(), precision: Vec::new(), recall: Vec::new(), ap: 0.0 }
}
