//! Supervised datasets of `(x, y)` pairs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Vector;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset is empty")]
    Empty,
    #[error("sample {index}: {message}")]
    Inconsistent { index: usize, message: String },
    #[error("dataset file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vector,
    pub y: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    input_dim: usize,
    output_dim: usize,
}

/// On-disk layout: parallel arrays of feature and target rows.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self, DatasetError> {
        let first = samples.first().ok_or(DatasetError::Empty)?;
        let (input_dim, output_dim) = (first.x.dim(), first.y.dim());
        for (index, s) in samples.iter().enumerate() {
            if s.x.dim() != input_dim || s.y.dim() != output_dim {
                return Err(DatasetError::Inconsistent {
                    index,
                    message: format!(
                        "shape ({}, {}) differs from ({input_dim}, {output_dim})",
                        s.x.dim(),
                        s.y.dim()
                    ),
                });
            }
        }
        Ok(Self {
            samples,
            input_dim,
            output_dim,
        })
    }

    pub fn from_rows(xs: Vec<Vec<f64>>, ys: Vec<Vec<f64>>) -> Result<Self, DatasetError> {
        if xs.len() != ys.len() {
            return Err(DatasetError::Inconsistent {
                index: xs.len().min(ys.len()),
                message: format!("{} inputs but {} targets", xs.len(), ys.len()),
            });
        }
        let samples = xs
            .into_iter()
            .zip(ys)
            .enumerate()
            .map(|(index, (x, y))| {
                let bad = |e: crate::linalg::LinalgError| DatasetError::Inconsistent {
                    index,
                    message: e.to_string(),
                };
                Ok(Sample {
                    x: Vector::new(x).map_err(bad)?,
                    y: Vector::new(y).map_err(bad)?,
                })
            })
            .collect::<Result<Vec<_>, DatasetError>>()?;
        Self::new(samples)
    }

    /// One-dimensional regression data from scalar pairs.
    pub fn from_scalar_pairs(points: &[(f64, f64)]) -> Result<Self, DatasetError> {
        Self::from_rows(
            points.iter().map(|p| vec![p.0]).collect(),
            points.iter().map(|p| vec![p.1]).collect(),
        )
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

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    pub fn from_json(text: &str) -> Result<Self, DatasetError> {
        let file: DatasetFile = serde_json::from_str(text)?;
        Self::from_rows(file.x, file.y)
    }

    pub fn to_json(&self) -> String {
        let file = DatasetFile {
            x: self.samples.iter().map(|s| s.x.as_slice().to_vec()).collect(),
            y: self.samples.iter().map(|s| s.y.as_slice().to_vec()).collect(),
        };
        serde_json::to_string_pretty(&file).expect("dataset serialization is infallible")
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Sample;
    type IntoIter = std::slice::Iter<'a, Sample>;
    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}
