//! Smoothing-spline mean estimation in the kernel's RKHS with the smoothing
//! parameter chosen by generalized cross-validation (GCV).
//!
//! For pooled observations `(tᵢ, yᵢ)`, `i = 1..N`, the estimate is
//! `μ̂(t) = Σ cᵢ K(t, tᵢ)` with `c = (K̃ + NλI)⁻¹ y`. All grid values are
//! scored from a single eigendecomposition of `K̃`.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::FunctionalDataset;
use crate::error::{input, Error, Result};
use crate::kernel::{self, gram, KernelSpec};
use crate::spectral::{sym_eig, SymEig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub anchor_points: Vec<f64>,
    pub coefficients: Vec<f64>,
    /// Selected smoothing parameter; `None` for the zero mean.
    pub gcv_lambda: Option<f64>,
    pub gcv_score: Option<f64>,
}

impl MeanEstimate {
    /// The identically zero mean function.
    pub fn zero() -> Self {
        Self {
            anchor_points: Vec::new(),
            coefficients: Vec::new(),
            gcv_lambda: None,
            gcv_score: None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coefficients.iter().all(|&c| c == 0.0)
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return input(format!("mean evaluated at {t}, outside [0, 1]"));
        }
        Ok(self
            .anchor_points
            .iter()
            .zip(&self.coefficients)
            .map(|(&a, &c)| c * kernel::sobolev2(t, a))
            .sum())
    }

    pub fn eval_many(&self, ts: &[f64]) -> Result<Vec<f64>> {
        ts.iter().map(|&t| self.eval(t)).collect()
    }
}

pub fn eval_mean(est: &MeanEstimate, t: f64) -> Result<f64> {
    est.eval(t)
}

/// 40 values log-spaced over `[1e-10, 1]`.
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-10, 1.0, 40)
}

pub fn log_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..k)
        .map(|i| (a + (b - a) * i as f64 / (k - 1) as f64).exp())
        .collect()
}

/// Pools every observation of every curve and smooths them jointly.
pub fn fit_mean(data: &FunctionalDataset, spec: &KernelSpec, lambda_grid: &[f64]) -> Result<MeanEstimate> {
    let t = data.pooled_times();
    let y = data.pooled_values();
    fit_smoother(&t, &y, spec, lambda_grid)
}

pub fn fit_smoother(times: &[f64], values: &[f64], spec: &KernelSpec, lambda_grid: &[f64]) -> Result<MeanEstimate> {
    if times.len() < 2 {
        return input(format!("mean smoothing needs at least 2 observations, got {}", times.len()));
    }
    let k = gram(spec, times)?;
    let eig = sym_eig(&k)?;
    fit_smoother_with_eig(times, values, &eig, lambda_grid)
}

/// Same as [`fit_smoother`] with a precomputed eigendecomposition of the
/// Gram matrix at `times`.
pub fn fit_smoother_with_eig(
    times: &[f64],
    values: &[f64],
    eig: &SymEig,
    lambda_grid: &[f64],
) -> Result<MeanEstimate> {
    let n = times.len();
    if n < 2 {
        return input(format!("mean smoothing needs at least 2 observations, got {n}"));
    }
    if values.len() != n || eig.dim() != n {
        return input("times, values and Gram eigendecomposition disagree in size");
    }
    if lambda_grid.is_empty() {
        return input("empty smoothing parameter grid");
    }
    if let Some(l) = lambda_grid.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return input(format!("smoothing parameters must be positive, got {l}"));
    }
    let y = ArrayView1::from(values);
    let proj = eig.vectors.t().dot(&y);
    let spectrum = eig.values.mapv(|v| v.max(0.0));

    let mut best: Option<(f64, f64)> = None;
    for &lambda in lambda_grid {
        let score = gcv_from_spectrum(&spectrum, &proj, &y, n as f64 * lambda);
        if !score.is_finite() {
            continue;
        }
        let better = match best {
            None => true,
            Some((bs, bl)) => score < bs || (score == bs && lambda > bl),
        };
        if better {
            best = Some((score, lambda));
        }
    }
    let (score, lambda) = best.ok_or_else(|| Error::Numerical("GCV undefined at every grid value".into()))?;
    let shift = n as f64 * lambda;
    let scaled = Array1::from_iter(proj.iter().zip(&spectrum).map(|(&p, &l)| p / (l + shift)));
    let c = eig.vectors.dot(&scaled);
    Ok(MeanEstimate {
        anchor_points: times.to_vec(),
        coefficients: c.to_vec(),
        gcv_lambda: Some(lambda),
        gcv_score: Some(score),
    })
}

/// `N‖(I − A)y‖² / tr(I − A)²` with `A = K̃(K̃ + shift·I)⁻¹`, from the spectrum
/// of `K̃` and the projections `Pᵀy`.
fn gcv_from_spectrum(spectrum: &Array1<f64>, proj: &Array1<f64>, y: &ArrayView1<f64>, shift: f64) -> f64 {
    let n = y.len() as f64;
    let mut trace_resid = 0.0;
    // ‖(I − A)y‖² = Σ (shift / (λ + shift))² (Pᵀy)², P orthogonal.
    let mut rss = 0.0;
    for (&l, &p) in spectrum.iter().zip(proj) {
        let keep = shift / (l + shift);
        trace_resid += keep;
        rss += (keep * p).powi(2);
    }
    if trace_resid <= 1e-12 * n {
        return f64::INFINITY;
    }
    n * rss / (trace_resid * trace_resid)
}

/// GCV score at one smoothing parameter.
pub fn gcv(times: &[f64], values: &[f64], spec: &KernelSpec, lambda: f64) -> Result<f64> {
    let k = gram(spec, times)?;
    let eig = sym_eig(&k)?;
    let y = ArrayView1::from(values);
    let proj = eig.vectors.t().dot(&y);
    Ok(gcv_from_spectrum(
        &eig.values.mapv(|v| v.max(0.0)),
        &proj,
        &y,
        times.len() as f64 * lambda,
    ))
}
