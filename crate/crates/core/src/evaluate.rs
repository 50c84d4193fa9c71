//! Matching detections to ground truth, PR curves and average precision.
//!
//! A detection is a true positive when its affinity (mask IoU, box IoU, or a
//! pixel precision/recall criterion) with a still-unmatched instance of the
//! same category and image is strictly above the threshold. Detections are
//! visited in ranking order and take the best available instance, so a second
//! detection on an already-claimed instance counts as a false positive.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;
use core::borrow::Borrow;

use crate::data::{by_image, rank_order, BoxDetection, Candidate, Detection, GroundTruthInstance};
use crate::error::{Error, Result};
use crate::geom::{OverlapKind, PixelBox};
use crate::mask::BinaryMask;

/// Overlap thresholds averaged into AP_vol.
pub const VOL_THRESHOLDS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Box-to-candidate overlap required when turning box detections into regions.
pub const UPPER_BOUND_BOX_OVERLAP: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatchCriterion {
    Overlap(OverlapKind),
    /// Fraction of the detection inside the instance.
    PixelPrecision,
    /// Fraction of the instance covered by the detection.
    PixelRecall,
}

impl MatchCriterion {
    pub fn affinity(self, det: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
        match self {
            MatchCriterion::Overlap(kind) => kind.between(det, gt),
            MatchCriterion::PixelPrecision => det.pixel_precision(gt),
            MatchCriterion::PixelRecall => det.pixel_recall(gt),
        }
    }
}

impl From<OverlapKind> for MatchCriterion {
    fn from(kind: OverlapKind) -> Self {
        MatchCriterion::Overlap(kind)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchEntry {
    /// Index into the detections that were matched.
    pub detection: usize,
    pub score: f64,
    /// Index into the ground truth, for true positives.
    pub gt: Option<usize>,
    /// Affinity with the matched instance, or the best affinity with any
    /// same-image instance for false positives.
    pub affinity: f64,
}

impl MatchEntry {
    pub fn is_tp(&self) -> bool {
        self.gt.is_some()
    }
}

/// Per-detection outcome, in ranking order.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub entries: Vec<MatchEntry>,
    pub num_gt: usize,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.entries.iter().filter(|e| e.is_tp()).count()
    }

    /// TP flags indexed like the input detections.
    pub fn labels(&self) -> Vec<bool> {
        let mut out = vec![false; self.entries.len()];
        for e in &self.entries {
            out[e.detection] = e.is_tp();
        }
        out
    }
}

/// Affinities between each detection and every same-image instance, computed
/// once and reusable across thresholds.
#[derive(Debug, Clone)]
pub struct AffinityTable {
    order: Vec<usize>,
    scores: Vec<f64>,
    pairs: Vec<Vec<(usize, f64)>>,
    instance_ids: Vec<u64>,
}

impl AffinityTable {
    pub fn new<D, G>(dets: &[D], gts: &[G], criterion: MatchCriterion) -> Result<Self>
    where
        D: Borrow<Detection>,
        G: Borrow<GroundTruthInstance>,
    {
        let gts_by_image = by_image(gts, |g| g.borrow().image_id.as_str());
        let mut pairs = Vec::with_capacity(dets.len());
        for d in dets {
            let d = d.borrow();
            let mut row = Vec::new();
            for &g in gts_by_image.get(d.image_id.as_str()).into_iter().flatten() {
                row.push((g, criterion.affinity(&d.mask, &gts[g].borrow().mask)?));
            }
            pairs.push(row);
        }
        Ok(Self {
            order: rank_order(dets),
            scores: dets.iter().map(|d| d.borrow().score).collect(),
            pairs,
            instance_ids: gts.iter().map(|g| g.borrow().instance_id).collect(),
        })
    }

    pub fn num_gt(&self) -> usize {
        self.instance_ids.len()
    }

    /// Greedy assignment at `threshold`.
    pub fn assign(&self, threshold: f64) -> MatchResult {
        let mut taken = vec![false; self.num_gt()];
        let mut entries = Vec::with_capacity(self.order.len());
        for &i in &self.order {
            let mut best: Option<(usize, f64)> = None;
            for &(g, a) in &self.pairs[i] {
                if taken[g] || a <= threshold {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bg, ba)) => a > ba || (a == ba && self.instance_ids[g] < self.instance_ids[bg]),
                };
                if better {
                    best = Some((g, a));
                }
            }
            let entry = match best {
                Some((g, a)) => {
                    taken[g] = true;
                    MatchEntry { detection: i, score: self.scores[i], gt: Some(g), affinity: a }
                }
                None => MatchEntry {
                    detection: i,
                    score: self.scores[i],
                    gt: None,
                    affinity: self.pairs[i].iter().map(|&(_, a)| a).fold(0.0, f64::max),
                },
            };
            entries.push(entry);
        }
        MatchResult { entries, num_gt: self.num_gt() }
    }
}

/// Matches detections of one category against instances of that category.
pub fn match_detections<D, G>(dets: &[D], gts: &[G], threshold: f64, criterion: MatchCriterion) -> Result<MatchResult>
where
    D: Borrow<Detection>,
    G: Borrow<GroundTruthInstance>,
{
    Ok(AffinityTable::new(dets, gts, criterion)?.assign(threshold))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub scores: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub ap: f64,
}

/// Precision/recall at every rank and the all-points interpolated AP.
///
/// AP is the area under the precision envelope (the running maximum of
/// precision from the right). Recall only grows at true positives, by exactly
/// `1/num_gt`, so the area is the mean envelope precision over the true
/// positive ranks, scaled by the recall they reach. Returns `None` when the
/// category has no ground truth.
pub fn pr_and_ap(m: &MatchResult) -> Option<PrCurve> {
    if m.num_gt == 0 {
        return None;
    }
    let n = m.entries.len();
    let mut precision = Vec::with_capacity(n);
    let mut recall = Vec::with_capacity(n);
    let mut tp = 0usize;
    for (i, e) in m.entries.iter().enumerate() {
        tp += usize::from(e.is_tp());
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / m.num_gt as f64);
    }
    let mut envelope = 0.0f64;
    let mut area = 0.0;
    for (e, p) in m.entries.iter().zip(&precision).rev() {
        envelope = envelope.max(*p);
        if e.is_tp() {
            area += envelope;
        }
    }
    Some(PrCurve {
        scores: m.entries.iter().map(|e| e.score).collect(),
        precision,
        recall,
        ap: area / m.num_gt as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryEval {
    pub category_id: u32,
    pub num_gt: usize,
    pub num_det: usize,
    /// AP at each report threshold.
    pub ap: Vec<f64>,
    /// Mean of `ap`.
    pub ap_vol: f64,
    pub curves: Vec<PrCurve>,
    pub matches: Vec<MatchResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub criterion: MatchCriterion,
    pub thresholds: Vec<f64>,
    /// Categories with at least one ground-truth instance, ascending id.
    pub categories: Vec<CategoryEval>,
    /// Mean over categories, per threshold.
    pub mean_ap: Vec<f64>,
    pub mean_ap_vol: f64,
    /// Categories that have detections but no ground truth; not scored.
    pub absent: Vec<u32>,
}

impl EvalReport {
    pub fn category(&self, id: u32) -> Option<&CategoryEval> {
        self.categories.iter().find(|c| c.category_id == id)
    }
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len();
    if n == 0 {
        return 0.0;
    }
    xs.sum::<f64>() / n as f64
}

/// Per-category AP at each threshold, with category means.
pub fn evaluate(
    dets: &[Detection],
    gts: &[GroundTruthInstance],
    thresholds: &[f64],
    criterion: MatchCriterion,
) -> Result<EvalReport> {
    let mut dets_by_cat: BTreeMap<u32, Vec<&Detection>> = BTreeMap::new();
    for d in dets {
        dets_by_cat.entry(d.category_id).or_default().push(d);
    }
    let mut gts_by_cat: BTreeMap<u32, Vec<&GroundTruthInstance>> = BTreeMap::new();
    for g in gts {
        gts_by_cat.entry(g.category_id).or_default().push(g);
    }
    let absent = dets_by_cat.keys().filter(|c| !gts_by_cat.contains_key(c)).copied().collect();

    let mut categories = Vec::with_capacity(gts_by_cat.len());
    for (&cat, cat_gts) in &gts_by_cat {
        let cat_dets = dets_by_cat.get(&cat).map(Vec::as_slice).unwrap_or(&[]);
        let table = AffinityTable::new(cat_dets, cat_gts, criterion)?;
        let matches: Vec<MatchResult> = thresholds.iter().map(|&t| table.assign(t)).collect();
        let curves: Vec<PrCurve> = matches.iter().filter_map(pr_and_ap).collect();
        let ap: Vec<f64> = curves.iter().map(|c| c.ap).collect();
        categories.push(CategoryEval {
            category_id: cat,
            num_gt: cat_gts.len(),
            num_det: cat_dets.len(),
            ap_vol: mean(ap.iter().copied()),
            ap,
            curves,
            matches,
        });
    }
    let mean_ap = (0..thresholds.len()).map(|t| mean(categories.iter().map(|c| c.ap[t]))).collect();
    let mean_ap_vol = mean(categories.iter().map(|c| c.ap_vol));
    Ok(EvalReport { criterion, thresholds: thresholds.to_vec(), categories, mean_ap, mean_ap_vol, absent })
}

/// AP^r: mask-overlap AP at a single threshold.
pub fn ap_r(dets: &[Detection], gts: &[GroundTruthInstance], threshold: f64) -> Result<EvalReport> {
    evaluate(dets, gts, &[threshold], MatchCriterion::Overlap(OverlapKind::Region))
}

/// AP^b: box-overlap AP with boxes taken from the masks.
pub fn ap_b(dets: &[Detection], gts: &[GroundTruthInstance], threshold: f64) -> Result<EvalReport> {
    evaluate(dets, gts, &[threshold], MatchCriterion::Overlap(OverlapKind::Box))
}

/// AP averaged over the nine thresholds 0.1 .. 0.9.
pub fn ap_vol(dets: &[Detection], gts: &[GroundTruthInstance], kind: OverlapKind) -> Result<EvalReport> {
    evaluate(dets, gts, &VOL_THRESHOLDS, MatchCriterion::Overlap(kind))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CategoryIu {
    pub category_id: u32,
    pub intersection: u64,
    pub union: u64,
    pub iu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelIuReport {
    /// Categories with a non-empty union, ascending id.
    pub categories: Vec<CategoryIu>,
    pub mean_iu: f64,
}

fn image_dims<'a>(
    dets: &'a [Detection],
    gts: &'a [GroundTruthInstance],
) -> Result<BTreeMap<&'a str, (u32, u32)>> {
    let mut dims: BTreeMap<&str, (u32, u32)> = BTreeMap::new();
    let all = dets.iter().map(|d| (d.image_id.as_str(), &d.mask)).chain(gts.iter().map(|g| (g.image_id.as_str(), &g.mask)));
    for (img, m) in all {
        let seen = *dims.entry(img).or_insert(m.dims());
        if seen != m.dims() {
            return Err(Error::DimensionMismatch { expected: seen, found: m.dims() });
        }
    }
    Ok(dims)
}

/// Pastes detections into one category label per pixel and scores it.
///
/// Detections scoring below their category's threshold are dropped (categories
/// missing from `thresholds` keep everything). The rest are painted in
/// increasing rank so the best-ranked detection owns contested pixels.
/// Intersections and unions are summed over all images before dividing.
pub fn paste_and_pixel_iu(
    dets: &[Detection],
    gts: &[GroundTruthInstance],
    thresholds: &BTreeMap<u32, f64>,
) -> Result<PixelIuReport> {
    let dims = image_dims(dets, gts)?;
    let dets_by_image = by_image(dets, |d| d.image_id.as_str());
    let gts_by_image = by_image(gts, |g| g.image_id.as_str());
    let mut inter: BTreeMap<u32, u64> = BTreeMap::new();
    let mut union: BTreeMap<u32, u64> = BTreeMap::new();

    for (img, &(w, h)) in &dims {
        let n = w as usize * h as usize;
        let mut pred = vec![0u32; n];
        let mut truth = vec![0u32; n];
        if let Some(idx) = dets_by_image.get(img) {
            let kept: Vec<&Detection> = idx
                .iter()
                .map(|&i| &dets[i])
                .filter(|d| thresholds.get(&d.category_id).is_none_or(|t| d.score >= *t))
                .collect();
            for i in rank_order(&kept).into_iter().rev() {
                paint(&mut pred, &kept[i].mask, kept[i].category_id);
            }
        }
        for &g in gts_by_image.get(img).into_iter().flatten() {
            paint(&mut truth, &gts[g].mask, gts[g].category_id);
        }
        for (&p, &t) in pred.iter().zip(&truth) {
            if p == t {
                if p != 0 {
                    *inter.entry(p).or_default() += 1;
                    *union.entry(p).or_default() += 1;
                }
            } else {
                for c in [p, t] {
                    if c != 0 {
                        *union.entry(c).or_default() += 1;
                    }
                }
            }
        }
    }
    let categories: Vec<CategoryIu> = union
        .iter()
        .map(|(&c, &u)| {
            let i = inter.get(&c).copied().unwrap_or(0);
            CategoryIu { category_id: c, intersection: i, union: u, iu: i as f64 / u as f64 }
        })
        .collect();
    let mean_iu = mean(categories.iter().map(|c| c.iu));
    Ok(PixelIuReport { categories, mean_iu })
}

fn paint(labels: &mut [u32], mask: &BinaryMask, category: u32) {
    for (s, e) in mask.spans() {
        labels[s as usize..e as usize].fill(category);
    }
}

/// Picks per-category paste thresholds from `grid` by one pass of coordinate
/// ascent on mean IU, categories in ascending id. Ties keep the lower value.
pub fn select_paste_thresholds(
    dets: &[Detection],
    gts: &[GroundTruthInstance],
    grid: &[f64],
) -> Result<BTreeMap<u32, f64>> {
    let Some(&lowest) = grid.iter().min_by(|a, b| a.total_cmp(b)) else {
        return Err(Error::InvalidConfig("threshold grid is empty"));
    };
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cats: BTreeSet<u32> = dets.iter().map(|d| d.category_id).collect();
    let mut chosen: BTreeMap<u32, f64> = cats.iter().map(|&c| (c, lowest)).collect();
    for &c in &cats {
        let mut best = (f64::NEG_INFINITY, lowest);
        for &t in &sorted {
            chosen.insert(c, t);
            let iu = paste_and_pixel_iu(dets, gts, &chosen)?.mean_iu;
            if iu > best.0 {
                best = (iu, t);
            }
        }
        chosen.insert(c, best.1);
    }
    Ok(chosen)
}

/// Converts box detections into region detections using the best candidate.
///
/// The pool for a box is every candidate in the same image whose tight box
/// overlaps it by more than 0.7; the member with the highest mask overlap with
/// any same-category instance is kept. Boxes with an empty pool are dropped.
pub fn box_to_region_upper_bound(
    box_dets: &[BoxDetection],
    candidates: &[Candidate],
    gts: &[GroundTruthInstance],
) -> Result<Vec<Detection>> {
    let cands_by_image = by_image(candidates, |c| c.image_id.as_str());
    let gts_by_image = by_image(gts, |g| g.image_id.as_str());
    let boxes: Vec<Option<PixelBox>> = candidates.iter().map(|c| c.mask.bbox().ok()).collect();
    let mut out = Vec::new();
    for det in box_dets {
        let mut best: Option<(f64, u64, usize)> = None;
        for &ci in cands_by_image.get(det.image_id.as_str()).into_iter().flatten() {
            let Some(b) = boxes[ci] else { continue };
            if b.iou(&det.bbox) <= UPPER_BOUND_BOX_OVERLAP {
                continue;
            }
            let cand = &candidates[ci];
            let mut quality = 0.0f64;
            for &g in gts_by_image.get(det.image_id.as_str()).into_iter().flatten() {
                if gts[g].category_id == det.category_id {
                    quality = quality.max(cand.mask.overlap(&gts[g].mask)?);
                }
            }
            let better = match best {
                None => true,
                Some((q, id, _)) => quality > q || (quality == q && cand.candidate_id < id),
            };
            if better {
                best = Some((quality, cand.candidate_id, ci));
            }
        }
        if let Some((_, id, ci)) = best {
            out.push(Detection {
                image_id: det.image_id.clone(),
                category_id: det.category_id,
                score: det.score,
                mask: candidates[ci].mask.clone(),
                source_candidate_id: Some(id),
            });
        }
    }
    Ok(out)
}
