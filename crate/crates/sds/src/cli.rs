//! The `sds` command line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sds_core::classify::TrainingConfig;
use sds_core::diagnose::{diagnose, DiagnoseConfig};
use sds_core::evaluate::{
    box_to_region_upper_bound, evaluate, paste_and_pixel_iu, select_paste_thresholds, MatchCriterion, VOL_THRESHOLDS,
};
use sds_core::refine::RefineConfig;
use sds_core::OverlapKind;
use serde_json::{json, Value};

use crate::format::{self, load_dataset, save_dataset, FeatureStorage, FormatError};
use crate::models;
use crate::pipeline::{self, ScoreConfig};
use crate::report;
use crate::synth;

#[derive(Debug, Parser)]
#[command(name = "sds", version, about = "Simultaneous detection and segmentation toolkit", args_override_self = true)]
struct Cli {
    /// Record file whose `config` records supply default flag values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-category and per-detection work.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Train region classifiers.
    Train(TrainArgs),
    /// Train region refiners.
    TrainRefiner(TrainRefinerArgs),
    /// Score candidates, suppress and write detections.
    Score(ScoreArgs),
    /// Refine detection masks.
    Refine(RefineArgs),
    /// Evaluate detections.
    Eval(EvalArgs),
    /// Error analysis of detections.
    Diagnose(DiagnoseArgs),
    /// Turn box detections into region detections via the best candidate.
    UpperBound(UpperBoundArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    images: usize,
    #[arg(long, default_value_t = 3)]
    shapes: usize,
    #[arg(long, default_value_t = 3)]
    categories: u32,
    #[arg(long, default_value_t = 64)]
    width: u32,
    #[arg(long, default_value_t = 64)]
    height: u32,
    /// Superpixel tile size.
    #[arg(long, default_value_t = 4)]
    tile: u32,
    /// Write the refinement benchmark instead; its detections go to `detections.jsonl`.
    #[arg(long)]
    refinement: bool,
    /// Padding of the refinement benchmark's feature grids.
    #[arg(long, default_value_t = 16)]
    padding: u32,
    /// Store features in the binary sidecar instead of inline.
    #[arg(long)]
    sidecar: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Region,
    Box,
}

impl From<Kind> for OverlapKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Region => OverlapKind::Region,
            Kind::Box => OverlapKind::Box,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Train one category and write the model to `--out`; otherwise train all
    /// and write `model_<category>.json` files into the `--out` directory.
    #[arg(long)]
    category: Option<u32>,
    #[arg(long, value_enum, default_value_t = Kind::Region)]
    label_kind: Kind,
    #[arg(long, default_value_t = 1e-4)]
    lambda: f64,
    #[arg(long, default_value_t = 3500)]
    max_epochs: usize,
    #[arg(long, default_value_t = 1e-10)]
    tolerance: f64,
    #[arg(long, default_value_t = 0.5)]
    positive_overlap: f64,
    #[arg(long, default_value_t = 0.2)]
    negative_overlap: f64,
    #[arg(long)]
    standardize: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainRefinerArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    category: Option<u32>,
    #[arg(long, default_value_t = 16)]
    padding: u32,
    /// Superpixel acceptance threshold.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 1e-3)]
    lambda: f64,
    #[arg(long, default_value_t = 300)]
    max_epochs: usize,
    /// Fit one superpixel stage on all categories.
    #[arg(long)]
    share_stage2: bool,
    /// Directory receiving `refiner_<category>.json` files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    models: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    nms_threshold: f64,
    #[arg(long, value_enum, default_value_t = Kind::Region)]
    nms_mode: Kind,
    #[arg(long, default_value_t = sds_core::nms::DEFAULT_TOP_K)]
    top_k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RefineArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    dets: PathBuf,
    #[arg(long)]
    refiner: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Metric {
    Apr,
    Apb,
    Aprvol,
    Apbvol,
    Pixeliu,
}

#[derive(Debug, Clone, PartialEq)]
struct Thresholds(Vec<f64>);

fn parse_thresholds(s: &str) -> Result<Thresholds, String> {
    let values = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err("expected a comma-separated list of numbers".into());
    }
    Ok(Thresholds(values))
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    dets: PathBuf,
    #[arg(long, value_enum, default_value_t = Metric::Apr)]
    metric: Metric,
    /// Overlap thresholds for `apr` and `apb` (default 0.5).
    #[arg(long, value_parser = parse_thresholds)]
    thresholds: Option<Thresholds>,
    /// Score thresholds for pasting. Several values are swept per category on
    /// the validation split.
    #[arg(long, value_parser = parse_thresholds)]
    paste_thresholds: Option<Thresholds>,
    #[arg(long)]
    validation_dataset: Option<PathBuf>,
    #[arg(long)]
    validation_dets: Option<PathBuf>,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    dets: PathBuf,
    /// File of `group` records; defaults to the dataset's own.
    #[arg(long)]
    groups: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    strict: f64,
    #[arg(long, default_value_t = 0.1)]
    lenient: f64,
    #[arg(long, default_value_t = 0.67)]
    pixel_threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct UpperBoundArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    boxdets: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

const SUBCOMMANDS: [&str; 8] = ["synth", "train", "train-refiner", "score", "refine", "eval", "diagnose", "upper-bound"];

/// Turns the `config` records of a file into flags.
fn config_flags(path: &Path) -> anyhow::Result<Vec<OsString>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let locus = format!("{}:{}", path.display(), i + 1);
        let value: Value = serde_json::from_str(line).with_context(|| format!("{locus}: schema violation"))?;
        let Value::Object(map) = value else {
            bail!("{locus}: schema violation: expected an object");
        };
        if map.get("kind").and_then(Value::as_str) != Some("config") {
            bail!("{locus}: schema violation: expected kind \"config\"");
        }
        for (key, v) in map.iter().filter(|(k, _)| k.as_str() != "kind") {
            let flag = format!("--{}", key.replace('_', "-"));
            match v {
                Value::Bool(true) => out.push(flag.into()),
                Value::Bool(false) | Value::Null => {}
                Value::Number(n) => out.extend([flag.into(), n.to_string().into()]),
                Value::String(s) => out.extend([flag.into(), s.into()]),
                Value::Array(items) => {
                    let joined: Vec<String> = items.iter().map(|x| x.to_string().trim_matches('"').to_string()).collect();
                    out.extend([flag.into(), joined.join(",").into()]);
                }
                Value::Object(_) => bail!("{locus}: schema violation: nested object for {key}"),
            }
        }
    }
    Ok(out)
}

/// Inserts config-file flags right after the subcommand so that flags given
/// on the command line come later and win.
fn expand_config(args: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let mut config = None;
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            config = args.get(i + 1).map(PathBuf::from);
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        }
    }
    let Some(path) = config else {
        return Ok(args);
    };
    let Some(pos) = args.iter().position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref())) else {
        return Ok(args);
    };
    let mut out = args[..=pos].to_vec();
    out.extend(config_flags(&path)?);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// The single-line JSON record printed for a failed run.
pub fn error_record(err: &anyhow::Error) -> Value {
    let mut rec = json!({"kind": "error", "code": "error", "message": one_line(&format!("{err:#}"))});
    if let Some(f) = err.chain().find_map(|e| e.downcast_ref::<FormatError>()) {
        rec["code"] = f.code().into();
        if let Some(l) = f.locus() {
            rec["file"] = l.file.display().to_string().into();
            rec["line"] = l.line.into();
        }
    } else if err.chain().any(|e| e.downcast_ref::<sds_core::Error>().is_some()) {
        rec["code"] = "invalid_input".into();
    }
    rec
}

/// Parses `args` (program name first), runs the command and reports errors
/// as one JSON line on stderr.
pub fn main_with(args: impl IntoIterator<Item = OsString>) -> ExitCode {
    let args = match expand_config(args.into_iter().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rec = json!({"kind": "error", "code": "usage", "message": one_line(&e.render().to_string())});
            eprintln!("{rec}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.threads == 0 {
        bail!("--threads must be at least 1");
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build()?;
    pool.install(|| match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::TrainRefiner(a) => cmd_train_refiner(a),
        Command::Score(a) => cmd_score(a),
        Command::Refine(a) => cmd_refine(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::UpperBound(a) => cmd_upper_bound(a),
    })
}

fn summary(value: Value) {
    println!("{value}");
}

fn cmd_synth(a: SynthArgs) -> anyhow::Result<()> {
    if a.images == 0 || a.shapes == 0 || a.categories == 0 {
        bail!("--images, --shapes and --categories must be at least 1");
    }
    let storage = if a.sidecar { FeatureStorage::Sidecar } else { FeatureStorage::Inline };
    let mut ds = if a.refinement {
        if a.width / a.tile.max(1) < 10 || a.height / a.tile.max(1) < 10 {
            bail!("the refinement benchmark needs at least 10 tiles per side");
        }
        synth::refinement_benchmark(&synth::RefineBenchConfig {
            seed: a.seed,
            images: a.images,
            categories: a.categories,
            width: a.width,
            height: a.height,
            tile: a.tile,
            padding: a.padding,
        })
    } else {
        if a.width < 8 || a.height < 8 || a.tile == 0 {
            bail!("images must be at least 8x8 and tiles at least 1");
        }
        synth::generate(&synth::SynthConfig {
            seed: a.seed,
            images: a.images,
            shapes: a.shapes,
            categories: a.categories,
            width: a.width,
            height: a.height,
            tile: a.tile,
            ..Default::default()
        })
    };
    let dets = std::mem::take(&mut ds.detections);
    save_dataset(&a.out, &ds, storage)?;
    if a.refinement {
        format::save_detections(&a.out.join("detections.jsonl"), &dets)?;
    }
    summary(json!({"images": a.images, "instances": ds.instances.len(), "candidates": ds.candidates.len()}));
    Ok(())
}

fn categories_for(ds: &format::Dataset, only: Option<u32>) -> anyhow::Result<Vec<u32>> {
    match only {
        Some(c) => Ok(vec![c]),
        None => {
            let cats = ds.categories();
            if cats.is_empty() {
                bail!("dataset has no instances");
            }
            Ok(cats)
        }
    }
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let cfg = TrainingConfig {
        lambda: a.lambda,
        max_epochs: a.max_epochs,
        tolerance: a.tolerance,
        seed: a.seed,
        positive_overlap: a.positive_overlap,
        negative_overlap: a.negative_overlap,
        label_overlap: a.label_kind.into(),
        standardize: a.standardize,
    };
    let cats = categories_for(&ds, a.category)?;
    let trained = pipeline::train_categories(&ds, &cats, &cfg)?;
    let mut stats = Vec::new();
    for (c, t) in &trained {
        let path = if a.category.is_some() {
            a.out.clone()
        } else {
            fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
            models::model_path(&a.out, *c)
        };
        models::save_model(&path, &t.model)?;
        stats.push(json!({"category": c, "positives": t.positives.len(), "discarded": t.discarded.len(), "negatives": t.negatives}));
    }
    summary(Value::Array(stats));
    Ok(())
}

fn cmd_train_refiner(a: TrainRefinerArgs) -> anyhow::Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let mut cfg = RefineConfig { padding: a.padding, threshold: a.threshold, ..Default::default() };
    cfg.training.lambda = a.lambda;
    cfg.training.max_epochs = a.max_epochs;
    let cats = categories_for(&ds, a.category)?;
    let refiners = pipeline::train_refiners(&ds, &cats, &cfg, a.share_stage2)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for r in &refiners {
        models::save_refiner(&models::refiner_path(&a.out, r.category_id()), r)?;
    }
    summary(json!({"refiners": refiners.len()}));
    Ok(())
}

fn cmd_score(a: ScoreArgs) -> anyhow::Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let models = models::load_model_dir(&a.models)?;
    let cfg = ScoreConfig { nms_threshold: a.nms_threshold, nms_mode: a.nms_mode.into(), top_k: a.top_k };
    let dets = pipeline::score_candidates(&ds, &models, &cfg)?;
    format::save_detections(&a.out, &dets)?;
    summary(json!({"detections": dets.len()}));
    Ok(())
}

fn cmd_refine(a: RefineArgs) -> anyhow::Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let dets = format::load_detections(&a.dets)?;
    let refiners: Vec<_> = models::load_refiner_dir(&a.refiner)?.into_iter().map(|(_, r)| r).collect();
    let out = pipeline::refine_detections(&ds, &dets, &refiners)?;
    format::save_detections(&a.out, &out)?;
    summary(json!({"detections": out.len()}));
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let dets = format::load_detections(&a.dets)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    if a.metric == Metric::Pixeliu {
        return eval_pixel_iu(&a, &ds, &dets);
    }
    let (kind, vol) = match a.metric {
        Metric::Apr => (OverlapKind::Region, false),
        Metric::Apb => (OverlapKind::Box, false),
        Metric::Aprvol => (OverlapKind::Region, true),
        Metric::Apbvol => (OverlapKind::Box, true),
        Metric::Pixeliu => unreachable!("handled above"),
    };
    let thresholds = match (&a.thresholds, vol) {
        (Some(_), true) => bail!("--thresholds does not apply to volume metrics"),
        (Some(t), false) => t.0.clone(),
        (None, true) => VOL_THRESHOLDS.to_vec(),
        (None, false) => vec![0.5],
    };
    let rep = evaluate(&dets, &ds.instances, &thresholds, MatchCriterion::Overlap(kind))?;
    report::write_eval_csv(&a.out.join("eval.csv"), &rep)?;
    report::write_match_records(&a.out.join("matches.jsonl"), &rep, &dets, &ds.instances)?;
    report::write_pr_csv(&a.out.join("pr_curves.csv"), &rep)?;
    summary(json!({"thresholds": rep.thresholds, "mean_ap": rep.mean_ap, "mean_ap_vol": rep.mean_ap_vol}));
    Ok(())
}

fn eval_pixel_iu(a: &EvalArgs, ds: &format::Dataset, dets: &[sds_core::Detection]) -> anyhow::Result<()> {
    let grid = a.paste_thresholds.as_ref().map_or_else(|| vec![f64::NEG_INFINITY], |t| t.0.clone());
    let thresholds: BTreeMap<u32, f64> = if grid.len() == 1 {
        ds.categories().into_iter().chain(dets.iter().map(|d| d.category_id)).map(|c| (c, grid[0])).collect()
    } else {
        let (Some(vd), Some(vdets)) = (&a.validation_dataset, &a.validation_dets) else {
            bail!("sweeping several --paste-thresholds needs --validation-dataset and --validation-dets");
        };
        let val = load_dataset(vd)?;
        select_paste_thresholds(&format::load_detections(vdets)?, &val.instances, &grid)?
    };
    let rep = paste_and_pixel_iu(dets, &ds.instances, &thresholds)?;
    report::write_pixel_iu_csv(&a.out.join("pixel_iu.csv"), &rep, &thresholds)?;
    summary(json!({"mean_iu": rep.mean_iu}));
    Ok(())
}

fn cmd_diagnose(a: DiagnoseArgs) -> anyhow::Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let dets = format::load_detections(&a.dets)?;
    let groups = match &a.groups {
        Some(p) => format::Dataset::from_records(format::read_records(p)?)?.groups,
        None => ds.groups.clone(),
    };
    let cfg = DiagnoseConfig { strict: a.strict, lenient: a.lenient, pixel_threshold: a.pixel_threshold };
    let rep = diagnose(&dets, &ds.instances, &groups, &cfg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    report::write_diagnostics_csv(&a.out.join("diagnostics.csv"), &rep)?;
    report::write_diagnostic_curves(&a.out.join("diagnostic_curves.csv"), &rep)?;
    report::write_outcomes(&a.out.join("outcomes.jsonl"), &rep, &dets)?;
    summary(json!({
        "ap": rep.mean(|c| c.ap),
        "ap_remove": rep.mean(|c| c.ap_remove),
        "ap_correct": rep.mean(|c| c.ap_correct),
    }));
    Ok(())
}

fn cmd_upper_bound(a: UpperBoundArgs) -> anyhow::Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let boxes = format::Dataset::from_records(format::read_records(&a.boxdets)?)?.box_detections;
    let dets = box_to_region_upper_bound(&boxes, &ds.candidates, &ds.instances)?;
    format::save_detections(&a.out, &dets)?;
    summary(json!({"boxes": boxes.len(), "detections": dets.len()}));
    Ok(())
}
