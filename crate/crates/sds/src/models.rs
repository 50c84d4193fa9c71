//! Model files: a linear model is `{"w": [..], "b": .., "lambda": .., "kind": "svm"|"logistic"}`.
//! A refiner file holds the 100 coarse cell models (row-major), the
//! superpixel-stage model, its threshold and the padding.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use sds_core::classify::{LinearModel, ModelKind};
use sds_core::grid::GRID_CELLS;
use sds_core::refine::{CoarseMaskModel, Refiner, SuperpixelStageModel};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelWire {
    pub w: Vec<f64>,
    pub b: f64,
    pub lambda: f64,
    pub kind: KindWire,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindWire {
    Svm,
    Logistic,
}

impl From<&LinearModel> for ModelWire {
    fn from(m: &LinearModel) -> Self {
        ModelWire {
            w: m.weights.clone(),
            b: m.bias,
            lambda: m.lambda,
            kind: match m.kind {
                ModelKind::Svm => KindWire::Svm,
                ModelKind::Logistic => KindWire::Logistic,
            },
        }
    }
}

impl From<ModelWire> for LinearModel {
    fn from(w: ModelWire) -> Self {
        LinearModel {
            weights: w.w,
            bias: w.b,
            lambda: w.lambda,
            kind: match w.kind {
                KindWire::Svm => ModelKind::Svm,
                KindWire::Logistic => ModelKind::Logistic,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RefinerWire {
    category_id: u32,
    feature_dim: usize,
    padding: u32,
    threshold: f64,
    cells: Vec<ModelWire>,
    stage2: ModelWire,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{}: schema violation", path.display()))
}

pub fn save_model(path: &Path, model: &LinearModel) -> anyhow::Result<()> {
    write_json(path, &ModelWire::from(model))
}

pub fn load_model(path: &Path) -> anyhow::Result<LinearModel> {
    let model: LinearModel = read_json::<ModelWire>(path)?.into();
    if !model.is_finite() {
        bail!("{}: model has non-finite parameters", path.display());
    }
    Ok(model)
}

pub fn save_refiner(path: &Path, r: &Refiner) -> anyhow::Result<()> {
    let wire = RefinerWire {
        category_id: r.coarse.category_id,
        feature_dim: r.coarse.feature_dim,
        padding: r.coarse.padding,
        threshold: r.stage2.threshold,
        cells: r.coarse.cells.iter().map(ModelWire::from).collect(),
        stage2: (&r.stage2.model).into(),
    };
    write_json(path, &wire)
}

pub fn load_refiner(path: &Path) -> anyhow::Result<Refiner> {
    let w: RefinerWire = read_json(path)?;
    if w.cells.len() != GRID_CELLS {
        bail!("{}: expected {GRID_CELLS} cell models, found {}", path.display(), w.cells.len());
    }
    if w.stage2.w.len() != 2 {
        bail!("{}: superpixel stage takes 2 inputs, model has {}", path.display(), w.stage2.w.len());
    }
    let cells: Vec<LinearModel> = w.cells.into_iter().map(Into::into).collect();
    if let Some(c) = cells.iter().find(|c| c.dim() != w.feature_dim + GRID_CELLS) {
        bail!("{}: cell model has dimension {}, expected {}", path.display(), c.dim(), w.feature_dim + GRID_CELLS);
    }
    Ok(Refiner {
        coarse: CoarseMaskModel { category_id: w.category_id, feature_dim: w.feature_dim, padding: w.padding, cells },
        stage2: SuperpixelStageModel { model: w.stage2.into(), threshold: w.threshold },
    })
}

pub fn model_path(dir: &Path, category: u32) -> PathBuf {
    dir.join(format!("model_{category}.json"))
}

pub fn refiner_path(dir: &Path, category: u32) -> PathBuf {
    dir.join(format!("refiner_{category}.json"))
}

/// All `model_<c>.json` files in a directory, by category.
pub fn load_model_dir(dir: &Path) -> anyhow::Result<Vec<(u32, LinearModel)>> {
    load_dir(dir, "model_", load_model)
}

pub fn load_refiner_dir(dir: &Path) -> anyhow::Result<Vec<(u32, Refiner)>> {
    load_dir(dir, "refiner_", load_refiner)
}

fn load_dir<T>(dir: &Path, prefix: &str, load: fn(&Path) -> anyhow::Result<T>) -> anyhow::Result<Vec<(u32, T)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let Some(id) = name.strip_prefix(prefix).and_then(|n| n.strip_suffix(".json")) else {
            continue;
        };
        let Ok(category) = id.parse::<u32>() else {
            continue;
        };
        out.push((category, load(&path)?));
    }
    out.sort_by_key(|(c, _)| *c);
    if out.is_empty() {
        bail!("{}: no {prefix}<category>.json files", dir.display());
    }
    Ok(out)
}
