//! Convex linear classifiers and the two-round region classifier.

mod model;
pub mod objective;
mod optim;
mod region;
mod train;

pub use model::{score, LinearModel, ModelKind, TrainingConfig};
pub use region::{train_region_classifier, PositiveChoice, RegionTraining};
pub use train::{train_logistic, train_svm, Fit};
