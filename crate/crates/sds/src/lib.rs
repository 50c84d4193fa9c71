//! File formats, synthetic data, pipeline drivers and reports around `sds-core`.

pub mod cli;
pub mod format;
pub mod models;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use format::{load_dataset, save_dataset, Dataset, FeatureStorage, FormatError, Locus, Record};
