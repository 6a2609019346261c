use std::sync::Arc;

use ndarray::{Array1, Array2};

use crate::error::{input, Error, Result};
use crate::kernel::{cross_gram, symmetrize, KernelSpec};
use crate::spectral::{GramFactor, Penalty};

/// Estimated variances below this are treated as zero by [`correlation`].
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// A fitted covariance `C(s,t) = z(s)ᵀ (M⁺)ᵀ B M⁺ z(t)`, where
/// `z(t) = [K(t, T̃_i)]` over the anchor points.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub b: Array2<f64>,
    pub factor: Arc<GramFactor>,
    pub spec: KernelSpec,
    pub anchor_points: Arc<Vec<f64>>,
    pub penalty: Penalty,
    pub lambda_used: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value of the returned iterate.
    pub objective: f64,
    /// Objective at `B₀` followed by one entry per iteration.
    pub objective_trace: Vec<f64>,
    pub theta_trace: Vec<f64>,
}

impl CovarianceEstimate {
    /// Rows `M⁺ z(t)` for each `t`, as a `len × q` matrix.
    pub fn features(&self, ts: &[f64]) -> Result<Array2<f64>> {
        let z = cross_gram(&self.spec, ts, &self.anchor_points)?;
        Ok(z.dot(&self.factor.m_pinv.t()))
    }

    pub fn eval(&self, s: f64, t: f64) -> Result<f64> {
        // Fixed argument order keeps the result exactly symmetric.
        let (s, t) = if s <= t { (s, t) } else { (t, s) };
        let y = self.features(&[s, t])?;
        let ys = y.row(0);
        let yt = y.row(1);
        Ok(ys.dot(&self.b.dot(&yt)))
    }

    /// `[C(gᵢ, gⱼ)]` over the given points, exactly symmetric.
    pub fn grid(&self, points: &[f64]) -> Result<Array2<f64>> {
        let y = self.features(points)?;
        Ok(symmetrize(y.dot(&self.b).dot(&y.t())))
    }

    /// `M B Mᵀ`, the estimate at pairs of anchor points.
    pub fn anchor_matrix(&self) -> Array2<f64> {
        let m = &self.factor.m;
        symmetrize(m.dot(&self.b).dot(&m.t()))
    }

    /// `C(t, t)` at each point.
    pub fn variances(&self, points: &[f64]) -> Result<Array1<f64>> {
        let y = self.features(points)?;
        let yb = y.dot(&self.b);
        Ok((&yb * &y).sum_axis(ndarray::Axis(1)))
    }
}

pub fn evaluate(est: &CovarianceEstimate, s: f64, t: f64) -> Result<f64> {
    est.eval(s, t)
}

/// `C(s,t) / √(C(s,s) C(t,t))`.
pub fn correlation(est: &CovarianceEstimate, s: f64, t: f64) -> Result<f64> {
    let (s, t) = if s <= t { (s, t) } else { (t, s) };
    let y = est.features(&[s, t])?;
    let by = est.b.dot(&y.t());
    let css = y.row(0).dot(&by.column(0));
    let ctt = y.row(1).dot(&by.column(1));
    let cst = y.row(0).dot(&by.column(1));
    for (point, v) in [(s, css), (t, ctt)] {
        if !(v > VARIANCE_FLOOR) {
            return Err(Error::DegenerateVariance { t: point, variance: v });
        }
    }
    if s == t {
        return Ok(1.0);
    }
    Ok(cst / (css * ctt).sqrt())
}

/// Correlation grid from a covariance grid; `None` where a variance is below
/// the floor.
pub fn correlation_grid(cov: &Array2<f64>) -> Result<Array2<Option<f64>>> {
    let n = cov.nrows();
    if n != cov.ncols() {
        return input("covariance grid must be square");
    }
    let d: Vec<f64> = cov.diag().to_vec();
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        if d[i] > VARIANCE_FLOOR && d[j] > VARIANCE_FLOOR {
            Some(if i == j { 1.0 } else { cov[[i, j]] / (d[i] * d[j]).sqrt() })
        } else {
            None
        }
    }))
}
