//! Accelerated proximal gradient with backtracking on the `svec` coordinates
//! of the coefficient matrix.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::design::DesignCache;
use super::estimate::CovarianceEstimate;
use crate::error::{input, Error, Result};
use crate::spectral::{prox, svec, svec_inv, Penalty};

/// Consecutive iterations whose relative objective change is below
/// tolerance before stopping. A single small change also happens where the
/// accelerated sequence turns around.
const STALL_WINDOW: usize = 5;

/// Backtracking attempts per outer iteration before giving up.
const MAX_BACKTRACKS: usize = 200;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    pub penalty: Penalty,
    pub lambda: f64,
    /// Starting point; zero when absent.
    #[serde(skip)]
    pub b0: Option<Array2<f64>>,
    /// Initial Lipschitz estimate.
    pub l_hat: f64,
    /// Backtracking growth factor, `> 1`.
    pub eta: f64,
    /// Per-iteration Lipschitz decay, in `(0, 1)`.
    pub alpha: f64,
    pub max_iter: usize,
    /// Stop when the relative change of the objective falls below this.
    pub rel_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            penalty: Penalty::TracePsd,
            lambda: 1e-4,
            b0: None,
            l_hat: 1.0,
            eta: 2.0,
            alpha: 0.9,
            max_iter: 2000,
            rel_tol: 1e-7,
        }
    }
}

impl FitOptions {
    pub fn new(penalty: Penalty, lambda: f64) -> Self {
        Self {
            penalty,
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return input(format!("lambda must be finite and non-negative, got {}", self.lambda));
        }
        if !(self.l_hat > 0.0 && self.l_hat.is_finite()) {
            return input(format!("initial Lipschitz estimate must be positive, got {}", self.l_hat));
        }
        if !(self.eta > 1.0) {
            return input(format!("eta must exceed 1, got {}", self.eta));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return input(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.rel_tol >= 0.0) {
            return input(format!("rel_tol must be non-negative, got {}", self.rel_tol));
        }
        Ok(())
    }
}

/// Minimize `ℓ̃(B) + λ·pen(B)` (plus the PSD indicator for constrained
/// penalties) over symmetric `B`.
///
/// The gradient of `ℓ̃` is affine, so the gradient at the extrapolated point
/// `e_k` is recovered from those at `b_k` and `b̄_k`; each backtracking trial
/// costs one gradient evaluation and one eigendecomposition. The iterate with
/// the smallest objective seen is returned.
pub fn apg_fit(cache: &DesignCache, opts: &FitOptions) -> Result<CovarianceEstimate> {
    opts.validate()?;
    let q = cache.rank();
    let penalty = opts.penalty;
    let lambda = opts.lambda;

    let b0 = match &opts.b0 {
        Some(b) if b.dim() != (q, q) => {
            return input(format!("initial matrix is {:?}, expected {q}x{q}", b.dim()));
        }
        Some(b) => b.clone(),
        None => Array2::zeros((q, q)),
    };
    let pen0 = penalty.value(&b0)?;
    if !pen0.is_finite() {
        return input("initial matrix is outside the feasible set of the penalty");
    }
    let mut b = svec(&b0)?;
    let (loss0, grad0) = cache.eval_svec(&b);
    let obj0 = loss0 + lambda * pen0;
    if !obj0.is_finite() {
        return Err(Error::NonFinite { iteration: 0 });
    }

    let mut b_bar = b.clone();
    let mut grad_b = grad0;
    let mut grad_b_bar = grad_b.clone();
    let mut obj_b = obj0;

    let mut best_obj = obj0;
    let mut best_b = b0;
    let mut objective_trace = vec![obj0];
    let mut theta_trace = Vec::new();

    let mut theta_prev = f64::INFINITY;
    let mut l_prev = opts.l_hat;
    let mut converged = false;
    let mut calm = 0;
    let mut iterations = 0;

    for k in 0..opts.max_iter {
        let mut l_k = opts.alpha * l_prev;
        let mut backtracks = 0;
        let (theta, b_next, mat_next, pen_next, loss_next, grad_next) = loop {
            let theta = if theta_prev.is_infinite() {
                1.0
            } else {
                2.0 / (1.0 + (1.0 + 4.0 * l_k / (l_prev * theta_prev * theta_prev)).sqrt())
            };
            let e = &b * (1.0 - theta) + &b_bar * theta;
            let grad_e = &grad_b * (1.0 - theta) + &grad_b_bar * theta;
            let step = &e - &(&grad_e / l_k);
            let proxed = prox(penalty, &svec_inv(&step)?, lambda / l_k)?;
            let b_next = svec(&proxed.matrix)?;
            let (loss_next, grad_next) = cache.eval_svec(&b_next);

            let diff: Array1<f64> = &e - &b_next;
            let denom = diff.dot(&diff);
            let l_est = if denom > 0.0 {
                2.0 * diff.dot(&(&grad_next - &grad_e)).abs() / denom
            } else {
                0.0
            };
            if !l_est.is_finite() || !loss_next.is_finite() {
                return Err(Error::NonFinite { iteration: k });
            }
            if l_k >= l_est {
                break (theta, b_next, proxed.matrix, proxed.penalty, loss_next, grad_next);
            }
            l_k = (opts.eta * l_k).max(l_est);
            backtracks += 1;
            if backtracks > MAX_BACKTRACKS {
                return Err(Error::Numerical(format!(
                    "backtracking did not settle at iteration {k} (L = {l_k:e})"
                )));
            }
        };
        theta_trace.push(theta);

        b_bar = (&b_next - &(&b * (1.0 - theta))) / theta;
        grad_b_bar = (&grad_next - &(&grad_b * (1.0 - theta))) / theta;
        b = b_next;
        grad_b = grad_next;

        let obj_next = loss_next + lambda * pen_next;
        if !obj_next.is_finite() {
            return Err(Error::NonFinite { iteration: k });
        }
        objective_trace.push(obj_next);
        iterations = k + 1;
        if obj_next < best_obj {
            best_obj = obj_next;
            best_b = mat_next;
        }
        let change = (obj_next - obj_b).abs() / obj_b.abs().max(f64::MIN_POSITIVE);
        obj_b = obj_next;
        theta_prev = theta;
        l_prev = l_k;
        calm = if change < opts.rel_tol { calm + 1 } else { 0 };
        if calm >= STALL_WINDOW {
            converged = true;
            break;
        }
    }

    Ok(CovarianceEstimate {
        b: best_b,
        factor: Arc::clone(&cache.factor),
        spec: cache.spec,
        anchor_points: Arc::clone(&cache.anchor_points),
        penalty,
        lambda_used: lambda,
        iterations,
        converged,
        objective: best_obj,
        objective_trace,
        theta_trace,
    })
}
