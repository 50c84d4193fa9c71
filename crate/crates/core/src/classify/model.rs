use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geom::OverlapKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Svm,
    Logistic,
}

/// `w . x + b`, plus the regularization strength it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
    pub kind: ModelKind,
}

impl LinearModel {
    pub fn zeros(dim: usize, kind: ModelKind) -> Self {
        Self { weights: alloc::vec![0.0; dim], bias: 0.0, lambda: 0.0, kind }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::LengthMismatch { expected: self.weights.len(), found: x.len() });
        }
        Ok(self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias)
    }

    /// `sigmoid(w . x + b)`.
    pub fn predict_prob(&self, x: &[f64]) -> Result<f64> {
        self.decision(x).map(sigmoid)
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Scores every row with `w . x + b`.
pub fn score(model: &LinearModel, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    rows.iter().map(|r| model.decision(r)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    /// L2 strength on the weights (the bias is not regularized).
    pub lambda: f64,
    pub max_epochs: usize,
    /// Gradient-norm stopping threshold.
    pub tolerance: f64,
    /// Kept for reproducibility records. The full-batch trainers draw no random numbers.
    pub seed: u64,
    pub positive_overlap: f64,
    pub negative_overlap: f64,
    pub label_overlap: OverlapKind,
    /// Standardize each feature dimension before fitting; weights are mapped back afterwards.
    pub standardize: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            max_epochs: 3500,
            tolerance: 1e-10,
            seed: 0,
            positive_overlap: 0.5,
            negative_overlap: 0.2,
            label_overlap: OverlapKind::Region,
            standardize: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig("lambda must be positive"));
        }
        if !(0.0 <= self.negative_overlap
            && self.negative_overlap < self.positive_overlap
            && self.positive_overlap <= 1.0)
        {
            return Err(Error::InvalidConfig(
                "overlap thresholds must satisfy 0 <= negative < positive <= 1",
            ));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be positive"));
        }
        Ok(())
    }
}
