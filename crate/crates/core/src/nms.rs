//! Strict region non-maximum suppression and the per-category detection cap.

use alloc::vec::Vec;

use crate::data::{rank_order, Detection};
use crate::error::Result;
use crate::geom::OverlapKind;

/// Default cap on detections kept per category over a whole dataset.
pub const DEFAULT_TOP_K: usize = 20_000;

/// Greedy suppression over detections of one image and category.
///
/// Detections are visited in ranking order and kept iff their overlap with
/// every already-kept detection is at most `threshold`. At threshold 0 this
/// rejects anything sharing a single pixel with a better detection. Returns
/// indices into `dets`, in ranking order.
pub fn region_nms_indices(dets: &[Detection], threshold: f64, mode: OverlapKind) -> Result<Vec<usize>> {
    let mut kept: Vec<usize> = Vec::new();
    for i in rank_order(dets) {
        let mut keep = true;
        for &k in &kept {
            let suppressed = match (mode, threshold <= 0.0) {
                // exact integer test, immune to rounding in the IoU quotient
                (OverlapKind::Region, true) => dets[i].mask.intersection_area(&dets[k].mask)? > 0,
                _ => mode.between(&dets[i].mask, &dets[k].mask)? > threshold,
            };
            if suppressed {
                keep = false;
                break;
            }
        }
        if keep {
            kept.push(i);
        }
    }
    Ok(kept)
}

pub fn region_nms(dets: &[Detection], threshold: f64, mode: OverlapKind) -> Result<Vec<Detection>> {
    Ok(region_nms_indices(dets, threshold, mode)?.into_iter().map(|i| dets[i].clone()).collect())
}

/// The `k` highest-scoring detections; equal scores keep their input order.
pub fn cap_top_k(dets: &[Detection], k: usize) -> Vec<Detection> {
    if dets.len() <= k {
        return dets.to_vec();
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order.truncate(k);
    order.into_iter().map(|i| dets[i].clone()).collect()
}
