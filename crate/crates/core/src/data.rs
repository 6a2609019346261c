//! Ragged functional data: each curve is a list of `(time, value)` pairs on `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{input, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub id: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Curve {
    pub fn new(id: impl Into<String>, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if times.len() != values.len() {
            return input(format!(
                "curve {id}: {} times but {} values",
                times.len(),
                values.len()
            ));
        }
        for &t in &times {
            if !(0.0..=1.0).contains(&t) {
                return input(format!("curve {id}: time {t} outside [0, 1]"));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return input(format!("curve {id}: non-finite observation"));
        }
        Ok(Self { id, times, values })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FunctionalDataset {
    pub curves: Vec<Curve>,
}

impl FunctionalDataset {
    pub fn new(curves: Vec<Curve>) -> Self {
        Self { curves }
    }

    pub fn n_curves(&self) -> usize {
        self.curves.len()
    }

    pub fn n_observations(&self) -> usize {
        self.curves.iter().map(Curve::len).sum()
    }

    /// All observation times, curve by curve.
    pub fn pooled_times(&self) -> Vec<f64> {
        self.curves.iter().flat_map(|c| c.times.iter().copied()).collect()
    }

    pub fn pooled_values(&self) -> Vec<f64> {
        self.curves.iter().flat_map(|c| c.values.iter().copied()).collect()
    }

    /// Subset of curves by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            curves: indices.iter().map(|&i| self.curves[i].clone()).collect(),
        }
    }
}
