//! Records shared by every stage: annotations, candidates, detections, features.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geom::PixelBox;
use crate::mask::BinaryMask;

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthInstance {
    pub image_id: String,
    pub instance_id: u64,
    pub category_id: u32,
    pub mask: BinaryMask,
}

/// A category-independent region proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub image_id: String,
    pub candidate_id: u64,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: String,
    pub category_id: u32,
    pub score: f64,
    pub mask: BinaryMask,
    pub source_candidate_id: Option<u64>,
}

impl Detection {
    /// Ranking order used everywhere: higher score first, then lower candidate id.
    /// Detections without a candidate id sort after those with one.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| {
                let key = |d: &Self| d.source_candidate_id.unwrap_or(u64::MAX);
                key(self).cmp(&key(other))
            })
    }
}

/// Indices of `dets` in ranking order (stable for full ties).
pub fn rank_order<D: core::borrow::Borrow<Detection>>(dets: &[D]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[a].borrow().rank_cmp(dets[b].borrow()));
    order
}

/// A box-only detection, e.g. from a classical detector.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDetection {
    pub image_id: String,
    pub category_id: u32,
    pub score: f64,
    pub bbox: PixelBox,
}

/// Which region a feature row describes.
///
/// Ground-truth regions carry feature rows too, since the first training
/// round uses them directly as positives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RegionRef {
    Instance(u64),
    Candidate(u64),
}

impl core::fmt::Display for RegionRef {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            RegionRef::Instance(id) => write!(f, "instance {id}"),
            RegionRef::Candidate(id) => write!(f, "candidate {id}"),
        }
    }
}

/// Dense feature vectors of a common dimension, keyed by image and region.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    dim: usize,
    rows: BTreeMap<String, BTreeMap<RegionRef, Vec<f64>>>,
}

impl FeatureTable {
    pub fn new(dim: usize) -> Self {
        Self { dim, rows: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&mut self, image_id: &str, region: RegionRef, row: Vec<f64>) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::LengthMismatch { expected: self.dim, found: row.len() });
        }
        self.rows.entry(image_id.into()).or_default().insert(region, row);
        Ok(())
    }

    /// A zero-dimensional table answers every lookup with the empty row.
    pub fn get(&self, image_id: &str, region: RegionRef) -> Option<&[f64]> {
        if self.dim == 0 {
            return Some(&[]);
        }
        self.rows.get(image_id)?.get(&region).map(Vec::as_slice)
    }

    pub fn require(&self, image_id: &str, region: RegionRef) -> Result<&[f64]> {
        self.get(image_id, region).ok_or_else(|| Error::MissingFeature {
            image_id: image_id.into(),
            region: format!("{region}"),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, RegionRef, &[f64])> {
        self.rows
            .iter()
            .flat_map(|(img, m)| m.iter().map(move |(r, v)| (img.as_str(), *r, v.as_slice())))
    }
}

/// Category id to group label ("animals", "transport", ...).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CategoryGroups {
    groups: BTreeMap<u32, String>,
}

impl CategoryGroups {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, category_id: u32, group: impl Into<String>) {
        self.groups.insert(category_id, group.into());
    }

    pub fn group_of(&self, category_id: u32) -> Option<&str> {
        self.groups.get(&category_id).map(String::as_str)
    }

    pub fn same_group(&self, a: u32, b: u32) -> bool {
        matches!((self.group_of(a), self.group_of(b)), (Some(x), Some(y)) if x == y)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &str)> {
        self.groups.iter().map(|(c, g)| (*c, g.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Categories from `categories` with no group assignment.
    pub fn missing<'a>(&'a self, categories: impl IntoIterator<Item = u32> + 'a) -> impl Iterator<Item = u32> + 'a {
        categories.into_iter().filter(|c| !self.groups.contains_key(c))
    }
}

/// Ground truth grouped by image, preserving input order within an image.
pub(crate) fn by_image<'a, T, F>(items: &'a [T], image_of: F) -> BTreeMap<&'a str, Vec<usize>>
where
    F: Fn(&'a T) -> &'a str,
{
    let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        out.entry(image_of(item)).or_default().push(i);
    }
    out
}
