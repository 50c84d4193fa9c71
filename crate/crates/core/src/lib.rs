//! Kernels for simultaneous detection and segmentation (SDS).
//!
//! Everything here is pure computation over in-memory values: run-length
//! masks and their overlap arithmetic, convex linear classifiers, strict
//! region NMS, top-down region refinement, AP^r / AP^b style evaluation and
//! the error diagnostics built on top of it.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the synthetic
//! data generator and the command-line tool live in `sds-tools`.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod classify;
pub mod data;
pub mod diagnose;
mod error;
pub mod evaluate;
pub mod geom;
pub mod grid;
pub mod mask;
pub mod nms;
pub mod refine;

pub use data::{
    BoxDetection, Candidate, CategoryGroups, Detection, FeatureTable, GroundTruthInstance,
    RegionRef,
};
pub use error::{Error, Result};
pub use geom::{OverlapKind, PixelBox};
pub use grid::{GridMask, SuperpixelMap, GRID_SIZE};
pub use mask::BinaryMask;
