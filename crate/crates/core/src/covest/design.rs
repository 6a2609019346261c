use std::ops::Range;
use std::sync::Arc;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2};

use crate::data::FunctionalDataset;
use crate::error::{input, Result};
use crate::kernel::{gram, KernelSpec};
use crate::meanfit::MeanEstimate;
use crate::spectral::{factor_from_eig, svec, svec_inv, svec_len, sym_eig, GramFactor, SymEig};

/// Largest `svec` dimension for which the Hessian is stored explicitly.
const MAX_DENSE_HESSIAN_DIM: usize = 2000;

/// The loss written as an explicit quadratic in `b = svec(B)`:
/// `ℓ̃ = c (zz − 2 linᵀb + 2 bᵀ H b)` with `H = Σ_i Σ_{j<k} x_ijk x_ijkᵀ`,
/// `x_ijk = svec(sym(m_ij m_ikᵀ))`. Sums are unnormalized so that curve
/// subsets can be formed by addition and subtraction.
#[derive(Debug, Clone)]
struct Quadratic {
    h: Array2<f64>,
    lin_per_curve: Vec<Array1<f64>>,
    zz_per_curve: Vec<f64>,
    lin: Array1<f64>,
    zz: f64,
}

/// Rows `x_ijk`, `j < k`, of one curve.
fn pair_rows(mi: ArrayView2<'_, f64>) -> Array2<f64> {
    let (m, q) = mi.dim();
    let mut x = Array2::zeros((m * m.saturating_sub(1) / 2, svec_len(q)));
    let mut r = 0;
    for j in 0..m {
        for k in (j + 1)..m {
            let (a, b) = (mi.row(j), mi.row(k));
            let mut row = x.row_mut(r);
            let mut idx = 0;
            for col in 0..q {
                row[idx] = a[col] * b[col];
                idx += 1;
                for rw in (col + 1)..q {
                    row[idx] = std::f64::consts::FRAC_1_SQRT_2 * (a[rw] * b[col] + b[rw] * a[col]);
                    idx += 1;
                }
            }
            r += 1;
        }
    }
    x
}

fn accumulate_hessian(h: &mut Array2<f64>, mi: ArrayView2<'_, f64>, sign: f64) {
    let x = pair_rows(mi);
    general_mat_mul(sign, &x.t(), &x, 1.0, h);
}

fn curve_linear(mi: ArrayView2<'_, f64>, z: &Array2<f64>) -> (Array1<f64>, f64) {
    let mut rz = z.clone();
    for j in 0..rz.nrows() {
        rz[[j, j]] = 0.0;
    }
    let zz = rz.iter().map(|v| v * v).sum();
    let proj = mi.t().dot(&rz).dot(&mi);
    (svec(&proj).expect("square by construction"), zz)
}

fn use_dense_hessian(n_points: usize, q: usize) -> bool {
    let d = svec_len(q);
    d <= MAX_DENSE_HESSIAN_DIM && d * d <= 4 * n_points * q * q
}

/// Everything the loss needs: centred cross products per curve and the rows
/// of the Gram factor belonging to those curves.
///
/// A design built from data covers every retained curve. [`DesignCache::subset`]
/// restricts it to a set of curves while keeping the shared factor, which is
/// how cross-validation folds are formed.
#[derive(Debug, Clone)]
pub struct DesignCache {
    pub factor: Arc<GramFactor>,
    pub spec: KernelSpec,
    /// Pooled observation times of all retained curves (the factor's anchors).
    pub anchor_points: Arc<Vec<f64>>,
    /// `Z_i = [(Y_ij − μ̂(T_ij))(Y_ik − μ̂(T_ik))]`; diagonals are never read.
    pub z_blocks: Vec<Array2<f64>>,
    /// `1 / Σ m_i (m_i − 1)` over the curves in this design.
    pub normalizer: f64,
    pub curve_ids: Vec<String>,
    /// Curves discarded for having fewer than two observations.
    pub dropped_curves: usize,
    rows: Array2<f64>,
    offsets: Vec<usize>,
    /// Index of each curve in the full design.
    members: Vec<usize>,
    quad: Option<Quadratic>,
}

impl DesignCache {
    pub fn n_curves(&self) -> usize {
        self.z_blocks.len()
    }

    /// Dimension `q` of the coefficient matrix.
    pub fn rank(&self) -> usize {
        self.factor.rank()
    }

    pub fn n_pairs(&self) -> usize {
        self.z_blocks.iter().map(|z| z.nrows() * (z.nrows() - 1)).sum()
    }

    pub fn curve_range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// The block `M_i` of curve `i`.
    pub fn curve_block(&self, i: usize) -> ArrayView2<'_, f64> {
        self.rows.slice(s![self.curve_range(i), ..])
    }

    /// Indices of this design's curves within the full design.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    /// Restrict to the given curves (indices into this design).
    pub fn subset(&self, curves: &[usize]) -> DesignCache {
        self.subset_inner(curves, true)
    }

    /// As [`DesignCache::subset`], for designs only evaluated a few times.
    pub(crate) fn subset_for_scoring(&self, curves: &[usize]) -> DesignCache {
        self.subset_inner(curves, false)
    }

    fn subset_inner(&self, curves: &[usize], keep_quadratic: bool) -> DesignCache {
        let total: usize = curves.iter().map(|&i| self.curve_range(i).len()).sum();
        let mut rows = Array2::zeros((total, self.rank()));
        let mut offsets = vec![0];
        let mut z_blocks = Vec::with_capacity(curves.len());
        for &i in curves {
            let start = *offsets.last().unwrap();
            let len = self.curve_range(i).len();
            rows.slice_mut(s![start..start + len, ..]).assign(&self.curve_block(i));
            offsets.push(start + len);
            z_blocks.push(self.z_blocks[i].clone());
        }
        let pairs: usize = z_blocks.iter().map(|z| z.nrows() * (z.nrows() - 1)).sum();
        let quad = match &self.quad {
            Some(parent) if keep_quadratic => Some(self.sub_quadratic(parent, curves)),
            _ => None,
        };
        DesignCache {
            factor: Arc::clone(&self.factor),
            spec: self.spec,
            anchor_points: Arc::clone(&self.anchor_points),
            z_blocks,
            normalizer: if pairs > 0 { 1.0 / pairs as f64 } else { 0.0 },
            curve_ids: curves.iter().map(|&i| self.curve_ids[i].clone()).collect(),
            dropped_curves: 0,
            rows,
            offsets,
            members: curves.iter().map(|&i| self.members[i]).collect(),
            quad,
        }
    }

    fn sub_quadratic(&self, parent: &Quadratic, curves: &[usize]) -> Quadratic {
        let mut inside = vec![false; self.n_curves()];
        for &i in curves {
            inside[i] = true;
        }
        // Build from whichever side has fewer curves.
        let h = if 2 * curves.len() <= self.n_curves() {
            let mut h = Array2::zeros(parent.h.dim());
            for &i in curves {
                accumulate_hessian(&mut h, self.curve_block(i), 1.0);
            }
            h
        } else {
            let mut h = parent.h.clone();
            for i in (0..self.n_curves()).filter(|&i| !inside[i]) {
                accumulate_hessian(&mut h, self.curve_block(i), -1.0);
            }
            h
        };
        let lin_per_curve: Vec<Array1<f64>> = curves.iter().map(|&i| parent.lin_per_curve[i].clone()).collect();
        let zz_per_curve: Vec<f64> = curves.iter().map(|&i| parent.zz_per_curve[i]).collect();
        let mut lin = Array1::zeros(h.nrows());
        for l in &lin_per_curve {
            lin += l;
        }
        Quadratic { h, zz: zz_per_curve.iter().sum(), lin, lin_per_curve, zz_per_curve }
    }

    /// Loss and gradient in `svec` coordinates.
    pub(crate) fn eval_svec(&self, b: &Array1<f64>) -> (f64, Array1<f64>) {
        match &self.quad {
            Some(quad) => {
                let hb = quad.h.dot(b);
                let c = self.normalizer;
                let loss = c * (quad.zz - 2.0 * quad.lin.dot(b) + 2.0 * b.dot(&hb));
                let grad = (hb * 4.0 - &quad.lin * 2.0) * c;
                (loss, grad)
            }
            None => {
                let (loss, grad) = self.eval(&svec_inv(b).expect("svec length matches q"));
                (loss, svec(&grad).expect("square by construction"))
            }
        }
    }

    fn attach_quadratic(&mut self, force: bool) {
        if !force && !use_dense_hessian(self.rows.nrows(), self.rank()) {
            return;
        }
        let d = svec_len(self.rank());
        let mut h = Array2::zeros((d, d));
        let mut lin = Array1::zeros(d);
        let mut lin_per_curve = Vec::with_capacity(self.n_curves());
        let mut zz_per_curve = Vec::with_capacity(self.n_curves());
        for i in 0..self.n_curves() {
            let mi = self.curve_block(i);
            accumulate_hessian(&mut h, mi, 1.0);
            let (l, zz) = curve_linear(mi, &self.z_blocks[i]);
            lin += &l;
            lin_per_curve.push(l);
            zz_per_curve.push(zz);
        }
        let zz = zz_per_curve.iter().sum();
        self.quad = Some(Quadratic { h, lin_per_curve, zz_per_curve, lin, zz });
    }

    /// Loss and gradient without shape checks.
    pub(crate) fn eval(&self, b: &Array2<f64>) -> (f64, Array2<f64>) {
        let q = self.rank();
        let w = self.rows.dot(b);
        let mut resid_rows = Array2::zeros((self.rows.nrows(), q));
        let mut loss = 0.0;
        for (i, z) in self.z_blocks.iter().enumerate() {
            let r = self.curve_range(i);
            let mi = self.rows.slice(s![r.clone(), ..]);
            let mut fitted = w.slice(s![r.clone(), ..]).dot(&mi.t());
            fitted -= z;
            for j in 0..fitted.nrows() {
                fitted[[j, j]] = 0.0;
            }
            loss += fitted.iter().map(|v| v * v).sum::<f64>();
            resid_rows.slice_mut(s![r, ..]).assign(&fitted.dot(&mi));
        }
        let grad = self.rows.t().dot(&resid_rows) * (2.0 * self.normalizer);
        (loss * self.normalizer, crate::kernel::symmetrize(grad))
    }
}

/// `ℓ̃(B) = c Σ_i ‖ρ(Z_i − M_i B M_iᵀ)‖²_F` and its gradient
/// `2c Σ_i M_iᵀ ρ(M_i B M_iᵀ − Z_i) M_i`, where `ρ` zeroes the diagonal.
pub fn loss_and_grad(cache: &DesignCache, b: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    let q = cache.rank();
    if b.dim() != (q, q) {
        return input(format!("coefficient matrix is {:?}, design expects {q}x{q}", b.dim()));
    }
    Ok(cache.eval(b))
}

/// Spectral radius of `∇ℓ̃(0)`: the smallest trace penalty that makes zero
/// optimal over the PSD cone.
pub fn lambda_max(cache: &DesignCache) -> Result<f64> {
    let q = cache.rank();
    let (_, g) = cache.eval(&Array2::zeros((q, q)));
    let eig = sym_eig(&g)?;
    Ok(eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

/// Assemble the design from data. Curves with fewer than two observations are
/// dropped and counted.
pub fn build_design(
    data: &FunctionalDataset,
    mean: &MeanEstimate,
    spec: &KernelSpec,
    rel_tol: f64,
) -> Result<DesignCache> {
    build_design_with_eig(data, mean, spec, rel_tol, None)
}

/// As [`build_design`], optionally reusing an eigendecomposition of the Gram
/// matrix at the retained curves' pooled times.
pub fn build_design_with_eig(
    data: &FunctionalDataset,
    mean: &MeanEstimate,
    spec: &KernelSpec,
    rel_tol: f64,
    gram_eig: Option<&SymEig>,
) -> Result<DesignCache> {
    let retained: Vec<_> = data.curves.iter().filter(|c| c.len() >= 2).collect();
    let dropped = data.n_curves() - retained.len();
    if retained.is_empty() {
        return input("loss undefined: m(m-1) = 0 for every curve");
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} curve(s) with fewer than two observations");
    }
    let anchors: Vec<f64> = retained.iter().flat_map(|c| c.times.iter().copied()).collect();
    let sizes: Vec<usize> = retained.iter().map(|c| c.len()).collect();

    let owned;
    let eig = match gram_eig {
        Some(e) => {
            if e.dim() != anchors.len() {
                return input(format!(
                    "Gram eigendecomposition has order {} but there are {} pooled times",
                    e.dim(),
                    anchors.len()
                ));
            }
            e
        }
        None => {
            owned = sym_eig(&gram(spec, &anchors)?)?;
            &owned
        }
    };
    let factor = factor_from_eig(eig, &sizes, rel_tol)?;

    let mut z_blocks = Vec::with_capacity(retained.len());
    for c in &retained {
        let resid: Vec<f64> = c
            .times
            .iter()
            .zip(&c.values)
            .map(|(&t, &y)| Ok(y - mean.eval(t)?))
            .collect::<Result<_>>()?;
        let m = resid.len();
        z_blocks.push(Array2::from_shape_fn((m, m), |(j, k)| resid[j] * resid[k]));
    }
    let pairs: usize = sizes.iter().map(|&m| m * (m - 1)).sum();
    let mut offsets = vec![0];
    for &m in &sizes {
        offsets.push(offsets.last().unwrap() + m);
    }
    let mut cache = DesignCache {
        rows: factor.m.clone(),
        factor: Arc::new(factor),
        spec: *spec,
        anchor_points: Arc::new(anchors),
        z_blocks,
        normalizer: 1.0 / pairs as f64,
        curve_ids: retained.iter().map(|c| c.id.clone()).collect(),
        dropped_curves: dropped,
        offsets,
        members: (0..retained.len()).collect(),
        quad: None,
    };
    cache.attach_quadratic(false);
    Ok(cache)
}
