//! Reproducing kernel of the second-order Sobolev–Hilbert space on `[0, 1]`
//! equipped with `‖g‖² = (∫g)² + (∫g′)² + ∫(g″)²`.
//!
//! The kernel is `K(s,t) = 1 + k₁(s)k₁(t) + k₂(s)k₂(t) − k₄(|s−t|)` with the
//! scaled Bernoulli polynomials `k_r = B_r / r!`.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::quadrature::QuadratureRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelSpec {
    order: u32,
}

impl KernelSpec {
    /// Only `order == 2` is supported.
    pub fn new(order: u32) -> Result<Self> {
        if order != 2 {
            return input(format!("only the second-order Sobolev kernel is implemented, got order {order}"));
        }
        Ok(Self { order })
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn eval(&self, s: f64, t: f64) -> Result<f64> {
        kernel_eval(self, s, t)
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self { order: 2 }
    }
}

#[inline]
pub(crate) fn k1(x: f64) -> f64 {
    x - 0.5
}

#[inline]
pub(crate) fn k2(x: f64) -> f64 {
    let a = k1(x);
    0.5 * (a * a - 1.0 / 12.0)
}

#[inline]
pub(crate) fn k4(x: f64) -> f64 {
    let a2 = k1(x) * k1(x);
    (a2 * a2 - 0.5 * a2 + 7.0 / 240.0) / 24.0
}

/// Kernel value without domain checks.
#[inline]
pub(crate) fn sobolev2(s: f64, t: f64) -> f64 {
    1.0 + k1(s) * k1(t) + k2(s) * k2(t) - k4((s - t).abs())
}

fn check_domain(points: &[f64]) -> Result<()> {
    match points.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        Some(t) => input(format!("point {t} outside the kernel domain [0, 1]")),
        None => Ok(()),
    }
}

pub fn kernel_eval(_spec: &KernelSpec, s: f64, t: f64) -> Result<f64> {
    check_domain(&[s, t])?;
    Ok(sobolev2(s, t))
}

/// `[K(pᵢ, pⱼ)]`, exactly symmetric.
pub fn gram(_spec: &KernelSpec, points: &[f64]) -> Result<Array2<f64>> {
    if points.is_empty() {
        return input("gram matrix of an empty point list");
    }
    check_domain(points)?;
    let n = points.len();
    let mut g = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = sobolev2(points[i], points[j]);
            g[[i, j]] = v;
            g[[j, i]] = v;
        }
    }
    Ok(g)
}

/// `[K(rowsᵢ, colsⱼ)]`.
pub fn cross_gram(_spec: &KernelSpec, rows: &[f64], cols: &[f64]) -> Result<Array2<f64>> {
    check_domain(rows)?;
    check_domain(cols)?;
    let mut g = Array2::zeros((rows.len(), cols.len()));
    Zip::indexed(&mut g).for_each(|(i, j), v| *v = sobolev2(rows[i], cols[j]));
    Ok(g)
}

/// `[∫ K(s,pᵢ) K(s,pⱼ) ds]` approximated with `rule`.
pub fn l2_cross_gram(spec: &KernelSpec, points: &[f64], rule: &QuadratureRule) -> Result<Array2<f64>> {
    if points.is_empty() {
        return input("L2 cross gram of an empty point list");
    }
    let z = cross_gram(spec, rule.nodes(), points)?;
    let mut wz = z.clone();
    for (mut row, &w) in wz.rows_mut().into_iter().zip(rule.weights()) {
        row *= w;
    }
    let q = z.t().dot(&wz);
    Ok(symmetrize(q))
}

pub(crate) fn symmetrize(mut a: Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
    a
}
