//! Report files: CSV tables for people and plots, JSONL records for programs.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use sds_core::diagnose::{DetectionOutcome, DiagnosticReport, FalsePositiveKind};
use sds_core::evaluate::{EvalReport, PixelIuReport, PrCurve};
use sds_core::{Detection, GroundTruthInstance};
use serde_json::json;

fn csv_writer(path: &Path) -> anyhow::Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn num(x: f64) -> String {
    format!("{x}")
}

/// One row per category with its AP at each threshold and the mean over
/// thresholds, then a `mean` row.
pub fn write_eval_csv(path: &Path, report: &EvalReport) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["category".to_string(), "num_gt".into(), "num_det".into()];
    header.extend(report.thresholds.iter().map(|t| format!("ap@{t}")));
    header.push("ap_vol".into());
    w.write_record(&header)?;
    for c in &report.categories {
        let mut row = vec![c.category_id.to_string(), c.num_gt.to_string(), c.num_det.to_string()];
        row.extend(c.ap.iter().copied().map(num));
        row.push(num(c.ap_vol));
        w.write_record(&row)?;
    }
    let mut row = vec!["mean".to_string(), String::new(), String::new()];
    row.extend(report.mean_ap.iter().copied().map(num));
    row.push(num(report.mean_ap_vol));
    w.write_record(&row)?;
    w.flush()?;
    Ok(())
}

/// Positions of each category's members in the original slice, in input
/// order. Match entries index into these per-category lists.
fn category_positions<T>(items: &[T], category: impl Fn(&T) -> u32) -> BTreeMap<u32, Vec<usize>> {
    let mut out: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        out.entry(category(it)).or_default().push(i);
    }
    out
}

/// Every match decision as a JSON line, plus one `ap` line per category and threshold.
pub fn write_match_records(
    path: &Path,
    report: &EvalReport,
    dets: &[Detection],
    gts: &[GroundTruthInstance],
) -> anyhow::Result<()> {
    let det_pos = category_positions(dets, |d| d.category_id);
    let gt_pos = category_positions(gts, |g| g.category_id);
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for c in &report.categories {
        let dp = det_pos.get(&c.category_id).map(Vec::as_slice).unwrap_or(&[]);
        let gp = &gt_pos[&c.category_id];
        for ((t, m), ap) in report.thresholds.iter().zip(&c.matches).zip(&c.ap) {
            writeln!(w, "{}", json!({"kind": "ap", "category_id": c.category_id, "threshold": t, "ap": ap, "num_gt": m.num_gt}))?;
            for (rank, e) in m.entries.iter().enumerate() {
                let d = &dets[dp[e.detection]];
                let rec = json!({
                    "kind": "match",
                    "category_id": c.category_id,
                    "threshold": t,
                    "rank": rank,
                    "detection": dp[e.detection],
                    "image_id": d.image_id,
                    "score": e.score,
                    "instance_id": e.gt.map(|g| gts[gp[g]].instance_id),
                    "affinity": e.affinity,
                });
                writeln!(w, "{rec}")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn curve_rows(w: &mut csv::Writer<fs::File>, lead: &[String], curve: &PrCurve) -> anyhow::Result<()> {
    for (i, ((s, p), r)) in curve.scores.iter().zip(&curve.precision).zip(&curve.recall).enumerate() {
        let mut row = lead.to_vec();
        row.extend([(i + 1).to_string(), num(*s), num(*p), num(*r)]);
        w.write_record(&row)?;
    }
    Ok(())
}

/// `(score, precision, recall)` at every rank, per category and threshold.
pub fn write_pr_csv(path: &Path, report: &EvalReport) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["category", "threshold", "rank", "score", "precision", "recall"])?;
    for c in &report.categories {
        for (t, curve) in report.thresholds.iter().zip(&c.curves) {
            curve_rows(&mut w, &[c.category_id.to_string(), num(*t)], curve)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_pixel_iu_csv(path: &Path, report: &PixelIuReport, thresholds: &BTreeMap<u32, f64>) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["category", "score_threshold", "intersection", "union", "iu"])?;
    for c in &report.categories {
        let t = thresholds.get(&c.category_id).copied().unwrap_or(f64::NEG_INFINITY);
        w.write_record([c.category_id.to_string(), num(t), c.intersection.to_string(), c.union.to_string(), num(c.iu)])?;
    }
    w.write_record(["mean".to_string(), String::new(), String::new(), String::new(), num(report.mean_iu)])?;
    w.flush()?;
    Ok(())
}

pub fn write_diagnostics_csv(path: &Path, report: &DiagnosticReport) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "category", "AP", "AP_remove", "AP_correct", "AP_upper", "loss_misloc", "AP_pp", "AP_pr", "n_misloc", "n_similar",
        "n_background",
    ])?;
    for c in &report.categories {
        w.write_record([
            c.category_id.to_string(),
            num(c.ap),
            num(c.ap_remove),
            num(c.ap_correct),
            num(c.ap_upper),
            num(c.loss_misloc),
            num(c.ap_pp),
            num(c.ap_pr),
            c.n_misloc.to_string(),
            c.n_similar.to_string(),
            c.n_background.to_string(),
        ])?;
    }
    let sum = |f: fn(&sds_core::diagnose::CategoryDiagnosis) -> usize| report.categories.iter().map(f).sum::<usize>().to_string();
    w.write_record([
        "mean".to_string(),
        num(report.mean(|c| c.ap)),
        num(report.mean(|c| c.ap_remove)),
        num(report.mean(|c| c.ap_correct)),
        num(report.mean(|c| c.ap_upper)),
        num(report.mean(|c| c.loss_misloc)),
        num(report.mean(|c| c.ap_pp)),
        num(report.mean(|c| c.ap_pr)),
        sum(|c| c.n_misloc),
        sum(|c| c.n_similar),
        sum(|c| c.n_background),
    ])?;
    w.flush()?;
    Ok(())
}

/// Baseline, remove and correct PR curves per category.
pub fn write_diagnostic_curves(path: &Path, report: &DiagnosticReport) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["category", "curve", "rank", "score", "precision", "recall"])?;
    for c in &report.categories {
        for (name, curve) in [("baseline", &c.baseline_curve), ("remove", &c.remove_curve), ("correct", &c.correct_curve)] {
            curve_rows(&mut w, &[c.category_id.to_string(), name.into()], curve)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn outcome_name(o: DetectionOutcome) -> &'static str {
    match o {
        DetectionOutcome::TruePositive => "true_positive",
        DetectionOutcome::FalsePositive(FalsePositiveKind::Mislocalized) => "mislocalized",
        DetectionOutcome::FalsePositive(FalsePositiveKind::SimilarCategory) => "similar_category",
        DetectionOutcome::FalsePositive(FalsePositiveKind::Background) => "background",
    }
}

pub fn write_outcomes(path: &Path, report: &DiagnosticReport, dets: &[Detection]) -> anyhow::Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for (i, (o, d)) in report.outcomes.iter().zip(dets).enumerate() {
        let rec = json!({
            "kind": "outcome",
            "detection": i,
            "image_id": d.image_id,
            "category_id": d.category_id,
            "score": d.score,
            "outcome": outcome_name(*o),
        });
        writeln!(w, "{rec}")?;
    }
    w.flush()?;
    Ok(())
}
