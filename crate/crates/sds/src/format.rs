//! The line-delimited dataset container and the binary feature sidecar.
//!
//! Every line is one JSON object tagged by `"kind"`. Masks use the wire form
//! `{"w": .., "h": .., "runs": [..]}`. A dataset directory holds
//! `dataset.jsonl` and, optionally, `features.bin` with its index
//! `features.idx.jsonl`.
//!
//! Files written by this module are canonical: records appear in the order
//! groups, instances, candidates, superpixels, features, detections, box
//! detections, and loading then saving a canonical file reproduces it byte
//! for byte.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use sds_core::{
    BinaryMask, BoxDetection, Candidate, CategoryGroups, Detection, FeatureTable, GroundTruthInstance, PixelBox,
    RegionRef, SuperpixelMap,
};
use serde::{Deserialize, Serialize};

pub const CONTAINER_FILE: &str = "dataset.jsonl";
pub const SIDECAR_FILE: &str = "features.bin";
pub const SIDECAR_INDEX_FILE: &str = "features.idx.jsonl";

const SIDECAR_MAGIC: &[u8; 4] = b"SDSF";
const SIDECAR_VERSION: u32 = 1;

/// File and 1-based line of a record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Locus {
    pub file: PathBuf,
    pub line: usize,
}

impl fmt::Display for Locus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.file.display(), self.line)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{}: {error}", path.display())]
    Io { path: PathBuf, error: std::io::Error },
    #[error("{locus}: schema violation: {message}")]
    Schema { locus: Locus, message: String },
    #[error("{locus}: invalid mask: {error}")]
    Mask { locus: Locus, error: sds_core::Error },
    #[error("{locus}: {message}")]
    Invalid { locus: Locus, message: String },
    #[error("{locus}: feature row for {image_id} {region} has no matching record")]
    Dangling { locus: Locus, image_id: String, region: RegionRef },
    #[error("{locus}: feature row for {image_id} {region} has length {found}, expected {expected}")]
    FeatureLength { locus: Locus, image_id: String, region: RegionRef, expected: usize, found: usize },
    #[error("{}: sidecar: {message}", path.display())]
    Sidecar { path: PathBuf, message: String },
}

impl FormatError {
    /// Short machine-readable name of the failure class.
    pub fn code(&self) -> &'static str {
        match self {
            FormatError::Io { .. } => "io",
            FormatError::Schema { .. } => "schema",
            FormatError::Mask { .. } => "mask",
            FormatError::Invalid { .. } => "invalid",
            FormatError::Dangling { .. } => "dangling_feature",
            FormatError::FeatureLength { .. } => "feature_length",
            FormatError::Sidecar { .. } => "sidecar",
        }
    }

    pub fn locus(&self) -> Option<&Locus> {
        match self {
            FormatError::Schema { locus, .. }
            | FormatError::Mask { locus, .. }
            | FormatError::Invalid { locus, .. }
            | FormatError::Dangling { locus, .. }
            | FormatError::FeatureLength { locus, .. } => Some(locus),
            FormatError::Io { .. } | FormatError::Sidecar { .. } => None,
        }
    }
}

pub type Result<T, E = FormatError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |error| FormatError::Io { path: path.to_path_buf(), error }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskWire {
    pub w: u32,
    pub h: u32,
    pub runs: Vec<u32>,
}

impl From<&BinaryMask> for MaskWire {
    fn from(m: &BinaryMask) -> Self {
        MaskWire { w: m.width(), h: m.height(), runs: m.runs().to_vec() }
    }
}

impl MaskWire {
    pub fn to_mask(&self) -> sds_core::Result<BinaryMask> {
        BinaryMask::from_runs(self.w, self.h, self.runs.clone())
    }
}

/// One line of a container file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Record {
    Group {
        category_id: u32,
        group: String,
    },
    Instance {
        image_id: String,
        instance_id: u64,
        category_id: u32,
        mask: MaskWire,
    },
    Candidate {
        image_id: String,
        candidate_id: u64,
        mask: MaskWire,
    },
    Superpixels {
        image_id: String,
        w: u32,
        h: u32,
        labels: Vec<u32>,
    },
    Feature {
        image_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        candidate_id: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        instance_id: Option<u64>,
        values: Vec<f64>,
    },
    Detection {
        image_id: String,
        category_id: u32,
        score: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        candidate_id: Option<u64>,
        mask: MaskWire,
    },
    BoxDetection {
        image_id: String,
        category_id: u32,
        score: f64,
        /// `[x0, y0, x1, y1]`, inclusive.
        bbox: [u32; 4],
    },
    /// Sidecar index entry: which matrix row holds a region's features.
    FeatureRow {
        image_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        candidate_id: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        instance_id: Option<u64>,
        row: u64,
    },
}

fn region_of(candidate_id: Option<u64>, instance_id: Option<u64>) -> Option<RegionRef> {
    match (candidate_id, instance_id) {
        (Some(c), None) => Some(RegionRef::Candidate(c)),
        (None, Some(i)) => Some(RegionRef::Instance(i)),
        _ => None,
    }
}

fn region_ids(r: RegionRef) -> (Option<u64>, Option<u64>) {
    match r {
        RegionRef::Candidate(c) => (Some(c), None),
        RegionRef::Instance(i) => (None, Some(i)),
    }
}

/// Reads every record of a container file with its locus. Blank lines are skipped.
pub fn read_records(path: &Path) -> Result<Vec<(Locus, Record)>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let locus = Locus { file: path.to_path_buf(), line: i + 1 };
        match serde_json::from_str::<Record>(&line) {
            Ok(r) => out.push((locus, r)),
            Err(e) => return Err(FormatError::Schema { locus, message: e.to_string() }),
        }
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| FormatError::Io { path: path.to_path_buf(), error: e.into() })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Everything a dataset file can hold.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub groups: CategoryGroups,
    pub instances: Vec<GroundTruthInstance>,
    pub candidates: Vec<Candidate>,
    pub superpixels: BTreeMap<String, SuperpixelMap>,
    pub features: FeatureTable,
    pub detections: Vec<Detection>,
    pub box_detections: Vec<BoxDetection>,
}

impl Dataset {
    /// Category ids that occur in instances, in ascending order.
    pub fn categories(&self) -> Vec<u32> {
        self.instances.iter().map(|g| g.category_id).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn to_records(&self, with_features: bool) -> Vec<Record> {
        let mut out = Vec::new();
        for (category_id, group) in self.groups.iter() {
            out.push(Record::Group { category_id, group: group.into() });
        }
        for g in &self.instances {
            out.push(Record::Instance {
                image_id: g.image_id.clone(),
                instance_id: g.instance_id,
                category_id: g.category_id,
                mask: (&g.mask).into(),
            });
        }
        for c in &self.candidates {
            out.push(Record::Candidate { image_id: c.image_id.clone(), candidate_id: c.candidate_id, mask: (&c.mask).into() });
        }
        for (image_id, sp) in &self.superpixels {
            out.push(Record::Superpixels {
                image_id: image_id.clone(),
                w: sp.width(),
                h: sp.height(),
                labels: sp.labels().to_vec(),
            });
        }
        if with_features {
            for (image_id, region, values) in self.features.iter() {
                let (candidate_id, instance_id) = region_ids(region);
                out.push(Record::Feature { image_id: image_id.into(), candidate_id, instance_id, values: values.to_vec() });
            }
        }
        out.extend(self.detections.iter().map(detection_record));
        for b in &self.box_detections {
            out.push(Record::BoxDetection {
                image_id: b.image_id.clone(),
                category_id: b.category_id,
                score: b.score,
                bbox: [b.bbox.x0, b.bbox.y0, b.bbox.x1, b.bbox.y1],
            });
        }
        out
    }

    /// Builds and validates a dataset from records.
    pub fn from_records(records: Vec<(Locus, Record)>) -> Result<Self> {
        let mut b = Builder::default();
        for (locus, r) in records {
            b.push(locus, r)?;
        }
        b.finish()
    }
}

pub fn detection_record(d: &Detection) -> Record {
    Record::Detection {
        image_id: d.image_id.clone(),
        category_id: d.category_id,
        score: d.score,
        candidate_id: d.source_candidate_id,
        mask: (&d.mask).into(),
    }
}

#[derive(Default)]
struct Builder {
    ds: Dataset,
    instance_keys: BTreeSet<(String, u64)>,
    candidate_keys: BTreeSet<(String, u64)>,
    features: Vec<(Locus, String, RegionRef, Vec<f64>)>,
}

fn invalid(locus: &Locus, message: impl Into<String>) -> FormatError {
    FormatError::Invalid { locus: locus.clone(), message: message.into() }
}

fn mask_of(locus: &Locus, wire: &MaskWire, what: &str) -> Result<BinaryMask> {
    let m = wire.to_mask().map_err(|error| FormatError::Mask { locus: locus.clone(), error })?;
    if m.is_empty() {
        return Err(invalid(locus, format!("{what} mask is empty")));
    }
    Ok(m)
}

fn finite_score(locus: &Locus, score: f64) -> Result<f64> {
    if score.is_finite() {
        Ok(score)
    } else {
        Err(invalid(locus, "score is not finite"))
    }
}

impl Builder {
    fn push(&mut self, locus: Locus, r: Record) -> Result<()> {
        match r {
            Record::Group { category_id, group } => {
                if self.ds.groups.group_of(category_id).is_some() {
                    return Err(invalid(&locus, format!("category {category_id} assigned to two groups")));
                }
                self.ds.groups.insert(category_id, group);
            }
            Record::Instance { image_id, instance_id, category_id, mask } => {
                if category_id == 0 {
                    return Err(invalid(&locus, "category ids start at 1"));
                }
                let mask = mask_of(&locus, &mask, "instance")?;
                if !self.instance_keys.insert((image_id.clone(), instance_id)) {
                    return Err(invalid(&locus, format!("duplicate instance {instance_id} in image {image_id}")));
                }
                self.ds.instances.push(GroundTruthInstance { image_id, instance_id, category_id, mask });
            }
            Record::Candidate { image_id, candidate_id, mask } => {
                let mask = mask_of(&locus, &mask, "candidate")?;
                if !self.candidate_keys.insert((image_id.clone(), candidate_id)) {
                    return Err(invalid(&locus, format!("duplicate candidate {candidate_id} in image {image_id}")));
                }
                self.ds.candidates.push(Candidate { image_id, candidate_id, mask });
            }
            Record::Superpixels { image_id, w, h, labels } => {
                let sp = SuperpixelMap::new(w, h, labels).map_err(|error| FormatError::Mask { locus: locus.clone(), error })?;
                if self.ds.superpixels.insert(image_id.clone(), sp).is_some() {
                    return Err(invalid(&locus, format!("second superpixel map for image {image_id}")));
                }
            }
            Record::Feature { image_id, candidate_id, instance_id, values } => {
                let region = region_of(candidate_id, instance_id)
                    .ok_or_else(|| invalid(&locus, "feature needs exactly one of candidate_id, instance_id"))?;
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(invalid(&locus, "feature values must be finite"));
                }
                self.features.push((locus, image_id, region, values));
            }
            Record::Detection { image_id, category_id, score, candidate_id, mask } => {
                let score = finite_score(&locus, score)?;
                let mask = mask_of(&locus, &mask, "detection")?;
                self.ds.detections.push(Detection { image_id, category_id, score, mask, source_candidate_id: candidate_id });
            }
            Record::BoxDetection { image_id, category_id, score, bbox: [x0, y0, x1, y1] } => {
                let score = finite_score(&locus, score)?;
                if x0 > x1 || y0 > y1 {
                    return Err(invalid(&locus, "box corners out of order"));
                }
                self.ds.box_detections.push(BoxDetection { image_id, category_id, score, bbox: PixelBox::new(x0, y0, x1, y1) });
            }
            Record::FeatureRow { .. } => {
                return Err(FormatError::Schema { locus, message: "feature_row records belong in a sidecar index".into() });
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<Dataset> {
        let dim = self.features.first().map_or(0, |f| f.3.len());
        let mut table = FeatureTable::new(dim);
        for (locus, image_id, region, values) in self.features {
            let known = match region {
                RegionRef::Candidate(c) => self.candidate_keys.contains(&(image_id.clone(), c)),
                RegionRef::Instance(i) => self.instance_keys.contains(&(image_id.clone(), i)),
            };
            if !known {
                return Err(FormatError::Dangling { locus, image_id, region });
            }
            if values.len() != dim {
                return Err(FormatError::FeatureLength { locus, image_id, region, expected: dim, found: values.len() });
            }
            if table.get(&image_id, region).is_some() {
                return Err(invalid(&locus, format!("second feature row for {image_id} {region}")));
            }
            table.insert(&image_id, region, values).expect("length checked");
        }
        self.ds.features = table;
        Ok(self.ds)
    }
}

/// How `save_dataset` stores features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureStorage {
    #[default]
    Inline,
    Sidecar,
}

/// Loads a dataset directory (container plus optional sidecar) or a single container file.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    if !path.is_dir() {
        return Dataset::from_records(read_records(path)?);
    }
    let mut records = read_records(&path.join(CONTAINER_FILE))?;
    let index = path.join(SIDECAR_INDEX_FILE);
    if index.exists() {
        records.extend(read_sidecar(&path.join(SIDECAR_FILE), &index)?);
    }
    Dataset::from_records(records)
}

pub fn save_dataset(dir: &Path, ds: &Dataset, storage: FeatureStorage) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_records(&dir.join(CONTAINER_FILE), &ds.to_records(storage == FeatureStorage::Inline))?;
    if storage == FeatureStorage::Sidecar && !ds.features.is_empty() {
        write_sidecar(&dir.join(SIDECAR_FILE), &dir.join(SIDECAR_INDEX_FILE), &ds.features)?;
    }
    Ok(())
}

pub fn load_detections(path: &Path) -> Result<Vec<Detection>> {
    Ok(Dataset::from_records(read_records(path)?)?.detections)
}

pub fn save_detections(path: &Path, dets: &[Detection]) -> Result<()> {
    write_records(path, &dets.iter().map(detection_record).collect::<Vec<_>>())
}

/// Writes features as a little-endian f32 matrix plus an index of rows.
///
/// Values are narrowed to f32, so only f32-representable features survive
/// the trip exactly.
pub fn write_sidecar(matrix: &Path, index: &Path, features: &FeatureTable) -> Result<()> {
    let file = fs::File::create(matrix).map_err(io_err(matrix))?;
    let mut w = BufWriter::new(file);
    let dim = u32::try_from(features.dim())
        .map_err(|_| FormatError::Sidecar { path: matrix.into(), message: "dimension exceeds u32".into() })?;
    let mut header = Vec::with_capacity(20);
    header.extend_from_slice(SIDECAR_MAGIC);
    header.extend_from_slice(&SIDECAR_VERSION.to_le_bytes());
    header.extend_from_slice(&dim.to_le_bytes());
    header.extend_from_slice(&(features.len() as u64).to_le_bytes());
    w.write_all(&header).map_err(io_err(matrix))?;
    let mut rows = Vec::with_capacity(features.len());
    for (row, (image_id, region, values)) in features.iter().enumerate() {
        for v in values {
            w.write_all(&(*v as f32).to_le_bytes()).map_err(io_err(matrix))?;
        }
        let (candidate_id, instance_id) = region_ids(region);
        rows.push(Record::FeatureRow { image_id: image_id.into(), candidate_id, instance_id, row: row as u64 });
    }
    w.flush().map_err(io_err(matrix))?;
    write_records(index, &rows)
}

/// Reads a sidecar back as feature records located at their index lines.
pub fn read_sidecar(matrix: &Path, index: &Path) -> Result<Vec<(Locus, Record)>> {
    let bad = |message: &str| FormatError::Sidecar { path: matrix.into(), message: message.into() };
    let mut bytes = Vec::new();
    fs::File::open(matrix).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(io_err(matrix))?;
    if bytes.len() < 20 || &bytes[..4] != SIDECAR_MAGIC {
        return Err(bad("missing SDSF header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    if u32_at(4) != SIDECAR_VERSION {
        return Err(bad("unsupported version"));
    }
    let dim = u32_at(8) as usize;
    let n = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let expected = (n as u128) * (dim as u128) * 4 + 20;
    if bytes.len() as u128 != expected {
        return Err(bad(&format!("expected {expected} bytes for {n} rows of {dim}, found {}", bytes.len())));
    }
    let body = &bytes[20..];
    let mut out = Vec::new();
    for (locus, rec) in read_records(index)? {
        let Record::FeatureRow { image_id, candidate_id, instance_id, row } = rec else {
            return Err(FormatError::Schema { locus, message: "index files hold only feature_row records".into() });
        };
        if row >= n {
            return Err(invalid(&locus, format!("row {row} out of range for {n} rows")));
        }
        let start = row as usize * dim * 4;
        let values = body[start..start + dim * 4]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        out.push((locus, Record::Feature { image_id, candidate_id, instance_id, values }));
    }
    Ok(out)
}
