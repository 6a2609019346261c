//! The self-contained `model.json` file.

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use ndarray::Array2;
use opcov::covest::{CovarianceEstimate, CvResult};
use opcov::meanfit::MeanEstimate;
use opcov::spectral::GramFactor;
use opcov::{KernelSpec, Penalty};
use serde::{Deserialize, Serialize};

use crate::io::{write_json, TimeRescale};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    /// Rank of `B` at relative tolerance 1e-10; the number of eigenfunctions.
    pub rank: usize,
    /// Rank at the reporting tolerance 1e-6.
    pub numerical_rank: usize,
    pub gram_rank: usize,
    pub n_curves: usize,
    pub n_observations: usize,
    pub dropped_curves: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub kernel: KernelSpec,
    pub penalty: Penalty,
    pub lambda: f64,
    /// Pooled observation times of the fitted curves, on `[0, 1]`.
    pub anchor_points: Vec<f64>,
    pub curve_sizes: Vec<usize>,
    /// Coefficient matrix, row-major, full symmetric.
    pub b: Vec<Vec<f64>>,
    /// Rows of the `q × N` pseudoinverse of the Gram factor.
    pub m_pinv: Vec<Vec<f64>>,
    pub mean: MeanEstimate,
    pub time_rescale: Option<TimeRescale>,
    pub quad_nodes: usize,
    pub cv: Option<CvResult>,
    pub diagnostics: Diagnostics,
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<Array2<f64>> {
    ensure!(rows.iter().all(|r| r.len() == ncols), "{what}: ragged rows");
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Array2::from_shape_vec((rows.len(), ncols), flat)?)
}

impl ModelFile {
    pub fn new(
        est: &CovarianceEstimate,
        mean: MeanEstimate,
        time_rescale: Option<TimeRescale>,
        quad_nodes: usize,
        cv: Option<CvResult>,
        diagnostics: Diagnostics,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kernel: est.spec,
            penalty: est.penalty,
            lambda: est.lambda_used,
            anchor_points: est.anchor_points.to_vec(),
            curve_sizes: est.factor.curve_sizes(),
            b: rows(&est.b),
            m_pinv: rows(&est.factor.m_pinv),
            mean,
            time_rescale,
            quad_nodes,
            cv,
            diagnostics,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let model: Self = serde_json::from_str(&text).with_context(|| format!("{} is not a model file", path.display()))?;
        if model.format_version != FORMAT_VERSION {
            bail!("{}: unsupported format_version {}", path.display(), model.format_version);
        }
        Ok(model)
    }

    /// Rebuild the evaluable estimate.
    pub fn estimate(&self) -> Result<CovarianceEstimate> {
        let n = self.anchor_points.len();
        let q = self.m_pinv.len();
        let m_pinv = from_rows(&self.m_pinv, n, "m_pinv")?;
        let b = from_rows(&self.b, q, "b")?;
        ensure!(b.nrows() == q, "b is {}x{} but the factor has rank {q}", b.nrows(), b.ncols());
        let factor = GramFactor::from_pinv(m_pinv, &self.curve_sizes)?;
        Ok(CovarianceEstimate {
            b,
            factor: Arc::new(factor),
            spec: self.kernel,
            anchor_points: Arc::new(self.anchor_points.clone()),
            penalty: self.penalty,
            lambda_used: self.lambda,
            iterations: self.diagnostics.iterations,
            converged: self.diagnostics.converged,
            objective: self.diagnostics.objective,
            objective_trace: Vec::new(),
            theta_trace: Vec::new(),
        })
    }

    /// Model-scale coordinate to the user's time units.
    pub fn display_time(&self, u: f64) -> f64 {
        self.time_rescale.map_or(u, |r| r.to_original(u))
    }

    /// User time units to the model's `[0, 1]`.
    pub fn model_time(&self, t: f64) -> f64 {
        self.time_rescale.map_or(t, |r| r.to_unit(t))
    }
}
