//! L² eigen-decomposition of a fitted covariance, numerical rank, and
//! functional principal component scores.
//!
//! With `ψ(t) = M⁺ z(t)` the estimate is `C(s,t) = ψ(s)ᵀ B ψ(t)`. If
//! `R = ∫ ψ ψᵀ` then the nonzero L² eigenvalues of `C` are those of
//! `R^{1/2} B R^{1/2} = V diag(ζ) Vᵀ`, with eigenfunctions
//! `φ_k = ψᵀ R^{-1/2} V_k`.

use std::sync::Arc;

use ndarray::{s, Array1, Array2, Axis};
use rayon::prelude::*;

use crate::covest::CovarianceEstimate;
use crate::data::FunctionalDataset;
use crate::error::{input, Error, Result};
use crate::kernel::{cross_gram, KernelSpec};
use crate::meanfit::{fit_smoother, MeanEstimate};
use crate::quadrature::QuadratureRule;
use crate::spectral::sym_eig;

/// Default relative tolerance of [`numerical_rank`].
pub const DEFAULT_NUMERICAL_RANK_TOL: f64 = 1e-6;

/// Eigenvalues below this fraction of the largest magnitude are treated as
/// zero and their eigenpairs dropped.
const ZERO_EIGENVALUE_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct EigenSystem {
    /// `ζ_k`, descending.
    pub values: Vec<f64>,
    /// `N × K`; column `k` gives `φ_k(t) = U_kᵀ z(t)`.
    pub coeffs: Array2<f64>,
    /// Cumulative fraction of the positive eigenvalue mass.
    pub fve: Vec<f64>,
    pub spec: KernelSpec,
    pub anchor_points: Arc<Vec<f64>>,
}

impl EigenSystem {
    pub fn n_components(&self) -> usize {
        self.values.len()
    }

    /// `[φ_k(t_i)]` as a `len × K` matrix.
    pub fn eval_functions(&self, ts: &[f64]) -> Result<Array2<f64>> {
        Ok(cross_gram(&self.spec, ts, &self.anchor_points)?.dot(&self.coeffs))
    }

    /// Number of components needed to reach the given fraction of variance.
    pub fn components_for_fve(&self, fraction: f64) -> usize {
        self.fve.iter().position(|&f| f >= fraction).map_or(self.fve.len(), |k| k + 1)
    }
}

/// Gauss–Legendre nodes per panel of [`anchor_rule`]. Between anchors each
/// `ψ_j ψ_k` is a polynomial of degree at most 8, which 5 nodes integrate
/// exactly.
const EXACT_PANEL_NODES: usize = 5;

/// Nodes per block when accumulating `R`, bounding the `block × N` kernel
/// matrix held at once.
const R_BLOCK: usize = 2048;

/// Composite rule split at every anchor point, on which `R = ∫ψψᵀ` and
/// `∫ψ` are exact up to rounding.
pub fn anchor_rule(est: &CovarianceEstimate) -> Result<QuadratureRule> {
    QuadratureRule::composite(&est.anchor_points, EXACT_PANEL_NODES)
}

/// L² eigenpairs of the estimate whose eigenvalues are nonzero, with `R`
/// integrated exactly on [`anchor_rule`]. Since `R` then carries only
/// rounding error, its pseudo-inverse square root cuts at `q·ε` relative.
pub fn l2_eigen(est: &CovarianceEstimate) -> Result<EigenSystem> {
    let tol = est.b.nrows().max(1) as f64 * f64::EPSILON;
    l2_eigen_with(est, &anchor_rule(est)?, tol)
}

/// As [`l2_eigen`], integrating on `rule` and with the relative cutoff for
/// the pseudo-inverse square root of `R`.
pub fn l2_eigen_with(est: &CovarianceEstimate, rule: &QuadratureRule, rel_tol: f64) -> Result<EigenSystem> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return input(format!("rank tolerance must lie in (0, 1), got {rel_tol}"));
    }
    let q = est.b.nrows();
    let mut r = Array2::zeros((q, q));
    let mut psi_integral = Array1::zeros(q);
    for (nodes, weights) in rule.nodes().chunks(R_BLOCK).zip(rule.weights().chunks(R_BLOCK)) {
        let y = est.features(nodes)?;
        let w = Array1::from(weights.to_vec());
        let wy = &y * &w.view().insert_axis(Axis(1));
        r += &y.t().dot(&wy);
        psi_integral += &wy.sum_axis(Axis(0));
    }
    let r = crate::kernel::symmetrize(r);

    let r_eig = sym_eig(&r)?;
    let rmax = r_eig.values[0];
    if !(rmax > 0.0) || q == 0 {
        return Err(Error::DegenerateEstimate("L2 Gram of the basis is numerically zero".into()));
    }
    let cut = rel_tol * rmax;
    let root = r_eig.values.mapv(|v| if v > cut { v.sqrt() } else { 0.0 });
    let inv_root = r_eig.values.mapv(|v| if v > cut { 1.0 / v.sqrt() } else { 0.0 });
    let r_half = r_eig.reconstruct_with(&root);
    let r_neg_half = r_eig.reconstruct_with(&inv_root);

    let core = crate::kernel::symmetrize(r_half.dot(&est.b).dot(&r_half));
    let ce = sym_eig(&core)?;
    let scale = ce.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let keep: Vec<usize> = (0..q).filter(|&k| scale > 0.0 && ce.values[k].abs() > ZERO_EIGENVALUE_TOL * scale).collect();

    let mut basis = Array2::zeros((q, keep.len()));
    for (c, &k) in keep.iter().enumerate() {
        basis.column_mut(c).assign(&ce.vectors.column(k));
    }
    let mut g = r_neg_half.dot(&basis);
    let mut coeffs = est.factor.m_pinv.t().dot(&g);

    // Fix signs: ∫φ ≥ 0, or the largest-magnitude coefficient positive when
    // the integral vanishes.
    let integrals = psi_integral.dot(&g);
    for c in 0..keep.len() {
        let flip = if integrals[c].abs() >= 1e-10 {
            integrals[c] < 0.0
        } else {
            let col = coeffs.column(c);
            let big = col.iter().fold(0.0f64, |m, &v| if v.abs() > m.abs() { v } else { m });
            big < 0.0
        };
        if flip {
            g.column_mut(c).mapv_inplace(|v| -v);
            coeffs.column_mut(c).mapv_inplace(|v| -v);
        }
    }

    let values: Vec<f64> = keep.iter().map(|&k| ce.values[k]).collect();
    let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
    let mut acc = 0.0;
    let fve = values
        .iter()
        .map(|v| {
            acc += v.max(0.0);
            if total > 0.0 { (acc / total).min(1.0) } else { 0.0 }
        })
        .collect();
    Ok(EigenSystem {
        values,
        coeffs,
        fve,
        spec: est.spec,
        anchor_points: Arc::clone(&est.anchor_points),
    })
}

/// Count of eigenvalues of `B̂` whose magnitude exceeds
/// `rel_tol · max(largest magnitude, 1e-300)`.
pub fn numerical_rank(est: &CovarianceEstimate, rel_tol: f64) -> Result<usize> {
    matrix_rank(&est.b, rel_tol)
}

/// Numerical rank of a symmetric matrix, by the rule of [`numerical_rank`].
pub fn matrix_rank(b: &Array2<f64>, rel_tol: f64) -> Result<usize> {
    if !(rel_tol >= 0.0) {
        return input(format!("rank tolerance must be non-negative, got {rel_tol}"));
    }
    if b.is_empty() {
        return Ok(0);
    }
    let e = sym_eig(b)?;
    let top = e.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    Ok(e.values.iter().filter(|v| v.abs() > rel_tol * top).count())
}

/// Scores on the first `k` eigenfunctions for each curve.
///
/// Each curve is pre-smoothed on its own with the GCV smoothing spline over
/// `presmooth_grid`, and `∫ (X̂_i − μ̂) φ_j` is computed on `rule`. Curves with
/// fewer than two observations, or whose smoothing fails, get `None`.
pub fn fpc_scores(
    data: &FunctionalDataset,
    mean: &MeanEstimate,
    sys: &EigenSystem,
    k: usize,
    rule: &QuadratureRule,
    presmooth_grid: &[f64],
) -> Result<Vec<Option<Vec<f64>>>> {
    if k == 0 || k > sys.n_components() {
        return input(format!("asked for {k} scores but the estimate has {} eigenfunctions", sys.n_components()));
    }
    let nodes = rule.nodes();
    let phi = sys.eval_functions(nodes)?.slice(s![.., ..k]).to_owned();
    let mu = Array1::from(mean.eval_many(nodes)?);
    let weights = Array1::from(rule.weights().to_vec());
    let weighted_phi = &phi * &weights.view().insert_axis(Axis(1));

    Ok(data
        .curves
        .par_iter()
        .map(|c| {
            if c.len() < 2 {
                return None;
            }
            let smooth = match fit_smoother(&c.times, &c.values, &sys.spec, presmooth_grid) {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("curve {} could not be smoothed: {e}", c.id);
                    return None;
                }
            };
            let x = Array1::from(smooth.eval_many(nodes).ok()?);
            let centred = x - &mu;
            Some(centred.dot(&weighted_phi).to_vec())
        })
        .collect())
}
