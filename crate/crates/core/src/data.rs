use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{norm2, Matrix};

/// One labelled point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: usize,
}

/// A labelled dataset with a fixed input dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<Sample>,
    dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let dim = samples
            .first()
            .map(|s| s.x.len())
            .ok_or_else(|| invalid("dataset is empty"))?;
        if dim == 0 {
            return Err(invalid("input dimension must be positive"));
        }
        for s in &samples {
            if s.x.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "dataset row",
                    expected: dim,
                    actual: s.x.len(),
                });
            }
            if s.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("dataset features"));
            }
        }
        Ok(Dataset { samples, dim })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `1 + max label`.
    pub fn num_classes(&self) -> usize {
        self.samples.iter().map(|s| s.y).max().map_or(0, |m| m + 1)
    }

    /// `max_i ‖x_i‖_2`.
    pub fn max_norm(&self) -> f64 {
        self.samples.iter().map(|s| norm2(&s.x)).fold(0.0, f64::max)
    }

    /// Data matrix with the points as columns (d × n).
    pub fn data_matrix(&self) -> Matrix {
        let cols: Vec<Vec<f64>> = self.samples.iter().map(|s| s.x.clone()).collect();
        Matrix::from_columns(&cols).expect("validated dataset")
    }

    /// Labels mapped to ±1 (label 1 → +1, everything else → −1).
    pub fn binary_signs(&self) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| if s.y == 1 { 1.0 } else { -1.0 })
            .collect()
    }
}
