//! Symmetric-matrix utilities: eigendecomposition, the `svec` isometry, the
//! proximal operators used by the solver, and rank-revealing Gram factors.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};

/// Eigenpairs of a symmetric matrix, values sorted descending. Column `k` of
/// `vectors` pairs with `values[k]`; its largest-magnitude entry is positive.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

impl SymEig {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `P · diag(f(λ)) · Pᵀ`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Array2<f64> {
        let scaled = Array1::from_iter(self.values.iter().map(|&v| f(v)));
        self.reconstruct_with(&scaled)
    }

    pub fn reconstruct_with(&self, values: &Array1<f64>) -> Array2<f64> {
        let mut pd = self.vectors.clone();
        for (mut col, &v) in pd.axis_iter_mut(Axis(1)).zip(values.iter()) {
            col *= v;
        }
        crate::kernel::symmetrize(pd.dot(&self.vectors.t()))
    }

    pub fn reconstruct(&self) -> Array2<f64> {
        self.reconstruct_with(&self.values)
    }
}

/// Eigendecomposition of a symmetric matrix (LAPACK `dsyevd`). Only the lower
/// triangle is read.
pub fn sym_eig(a: &Array2<f64>) -> Result<SymEig> {
    let n = a.nrows();
    if n != a.ncols() {
        return input(format!("eigendecomposition of a non-square {}x{} matrix", n, a.ncols()));
    }
    if n == 0 {
        return Ok(SymEig {
            values: Array1::zeros(0),
            vectors: Array2::zeros((0, 0)),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("eigendecomposition of a non-finite matrix".into()));
    }
    let n_i = i32::try_from(n).map_err(|_| Error::Input(format!("matrix of order {n} too large")))?;

    // Row-major lower triangle is the column-major upper triangle.
    let mut buf: Vec<f64> = a.iter().copied().collect();
    let mut w = vec![0.0; n];
    let jobz = b'V' as std::ffi::c_char;
    let uplo = b'U' as std::ffi::c_char;
    let mut info = 0;
    let mut work_q = [0.0f64];
    let mut iwork_q = [0i32];
    // SAFETY: buffers are sized per the dsyevd contract; the first call is a
    // workspace query.
    unsafe {
        lapack_sys::dsyevd_(
            &jobz, &uplo, &n_i, buf.as_mut_ptr(), &n_i, w.as_mut_ptr(),
            work_q.as_mut_ptr(), &-1, iwork_q.as_mut_ptr(), &-1, &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Numerical(format!("dsyevd workspace query failed (info = {info})")));
    }
    let lwork = work_q[0] as i32;
    let liwork = iwork_q[0];
    let mut work = vec![0.0f64; lwork.max(1) as usize];
    let mut iwork = vec![0i32; liwork.max(1) as usize];
    unsafe {
        lapack_sys::dsyevd_(
            &jobz, &uplo, &n_i, buf.as_mut_ptr(), &n_i, w.as_mut_ptr(),
            work.as_mut_ptr(), &lwork, iwork.as_mut_ptr(), &liwork, &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Numerical(format!("dsyevd failed to converge (info = {info})")));
    }

    // Column-major eigenvectors read row-major: row k is eigenvector k.
    let rows = Array2::from_shape_vec((n, n), buf).expect("buffer has n*n entries");
    let mut values = Array1::zeros(n);
    let mut vectors = Array2::zeros((n, n));
    for k in 0..n {
        let src = n - 1 - k;
        values[k] = w[src];
        let v = rows.row(src);
        let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        vectors.column_mut(k).assign(&(&v * sign));
    }
    Ok(SymEig { values, vectors })
}

/// Length of `svec` for a `q × q` matrix.
pub fn svec_len(q: usize) -> usize {
    q * (q + 1) / 2
}

/// `[B₁₁, √2B₂₁, …, √2B_q1, B₂₂, √2B₃₂, …, B_qq]`. Preserves inner products:
/// `⟨svec A, svec B⟩ = tr(AB)`.
pub fn svec(b: &Array2<f64>) -> Result<Array1<f64>> {
    let q = b.nrows();
    if q != b.ncols() {
        return input(format!("svec of a non-square {}x{} matrix", q, b.ncols()));
    }
    let mut out = Array1::zeros(svec_len(q));
    let mut idx = 0;
    for j in 0..q {
        out[idx] = b[[j, j]];
        idx += 1;
        for i in (j + 1)..q {
            out[idx] = std::f64::consts::SQRT_2 * b[[i, j]];
            idx += 1;
        }
    }
    Ok(out)
}

pub fn svec_inv(v: &Array1<f64>) -> Result<Array2<f64>> {
    let len = v.len();
    let q = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    if svec_len(q) != len {
        return input(format!("svec length {len} is not a triangular number"));
    }
    let mut b = Array2::zeros((q, q));
    let mut idx = 0;
    for j in 0..q {
        b[[j, j]] = v[idx];
        idx += 1;
        for i in (j + 1)..q {
            let x = v[idx] / std::f64::consts::SQRT_2;
            b[[i, j]] = x;
            b[[j, i]] = x;
            idx += 1;
        }
    }
    Ok(b)
}

/// Spectral penalty together with whether the PSD constraint is imposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Penalty {
    /// Trace norm over the PSD cone.
    TracePsd,
    /// Trace norm, no constraint.
    TraceSym,
    /// Squared Hilbert–Schmidt norm over the PSD cone.
    HsPsd,
    /// Squared Hilbert–Schmidt norm, no constraint.
    HsSym,
}

impl Penalty {
    pub const ALL: [Penalty; 4] = [Penalty::TracePsd, Penalty::TraceSym, Penalty::HsPsd, Penalty::HsSym];

    pub fn is_psd(self) -> bool {
        matches!(self, Penalty::TracePsd | Penalty::HsPsd)
    }

    pub fn is_trace(self) -> bool {
        matches!(self, Penalty::TracePsd | Penalty::TraceSym)
    }

    pub fn name(self) -> &'static str {
        match self {
            Penalty::TracePsd => "trace_psd",
            Penalty::TraceSym => "trace_sym",
            Penalty::HsPsd => "hs_psd",
            Penalty::HsSym => "hs_sym",
        }
    }

    /// Penalty value from eigenvalues. Does not add the PSD indicator.
    pub fn value_from_eigenvalues(self, values: impl IntoIterator<Item = f64>) -> f64 {
        if self.is_trace() {
            values.into_iter().map(f64::abs).sum()
        } else {
            values.into_iter().map(|v| v * v).sum()
        }
    }

    /// Penalty value of an arbitrary symmetric matrix; `+∞` if a PSD variant
    /// is handed an indefinite matrix.
    pub fn value(self, b: &Array2<f64>) -> Result<f64> {
        match self {
            Penalty::HsSym => Ok(b.iter().map(|v| v * v).sum()),
            _ => {
                let eig = sym_eig(b)?;
                let scale = eig.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                if self.is_psd() && eig.values.iter().any(|&v| v < -1e-10 * scale) {
                    return Ok(f64::INFINITY);
                }
                Ok(self.value_from_eigenvalues(eig.values.iter().copied()))
            }
        }
    }
}

impl std::fmt::Display for Penalty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Penalty {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Penalty::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown penalty '{s}'")))
    }
}

/// Result of a proximal step: the minimizer and its eigenvalues (when known).
#[derive(Debug, Clone)]
pub struct ProxOutput {
    pub matrix: Array2<f64>,
    /// Penalty of `matrix`, without the multiplier.
    pub penalty: f64,
}

fn check_nu(nu: f64) -> Result<()> {
    if !(nu >= 0.0 && nu.is_finite()) {
        return input(format!("proximal parameter must be finite and non-negative, got {nu}"));
    }
    Ok(())
}

/// `argmin_D ½‖D − B‖²_F + ν·pen(D)` for the chosen penalty.
pub fn prox(penalty: Penalty, b: &Array2<f64>, nu: f64) -> Result<ProxOutput> {
    check_nu(nu)?;
    if b.nrows() != b.ncols() {
        return input(format!("prox of a non-square {}x{} matrix", b.nrows(), b.ncols()));
    }
    if penalty == Penalty::HsSym {
        let matrix = b / (1.0 + 2.0 * nu);
        let pen = matrix.iter().map(|v| v * v).sum();
        return Ok(ProxOutput { matrix, penalty: pen });
    }
    let eig = sym_eig(b)?;
    let shrink = |x: f64| -> f64 {
        match penalty {
            Penalty::TracePsd => (x - nu).max(0.0),
            Penalty::TraceSym => x.signum() * (x.abs() - nu).max(0.0),
            Penalty::HsPsd => x.max(0.0) / (1.0 + 2.0 * nu),
            Penalty::HsSym => unreachable!(),
        }
    };
    let values = eig.values.mapv(shrink);
    let pen = penalty.value_from_eigenvalues(values.iter().copied());
    // Skip the O(q³) rebuild when everything was thresholded away.
    let matrix = if values.iter().all(|&v| v == 0.0) {
        Array2::zeros(b.raw_dim())
    } else {
        eig.reconstruct_with(&values)
    };
    Ok(ProxOutput { matrix, penalty: pen })
}

pub fn prox_trace_psd(b: &Array2<f64>, nu: f64) -> Result<Array2<f64>> {
    Ok(prox(Penalty::TracePsd, b, nu)?.matrix)
}

pub fn prox_trace_sym(b: &Array2<f64>, nu: f64) -> Result<Array2<f64>> {
    Ok(prox(Penalty::TraceSym, b, nu)?.matrix)
}

pub fn prox_hs_psd(b: &Array2<f64>, nu: f64) -> Result<Array2<f64>> {
    Ok(prox(Penalty::HsPsd, b, nu)?.matrix)
}

pub fn prox_hs_sym(b: &Array2<f64>, nu: f64) -> Result<Array2<f64>> {
    Ok(prox(Penalty::HsSym, b, nu)?.matrix)
}

/// Default relative eigenvalue cutoff for Gram factorization.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Rank-revealing factor `M` of a Gram matrix `K̃ ≈ M Mᵀ`, with rows grouped
/// by curve.
#[derive(Debug, Clone)]
pub struct GramFactor {
    /// `N × q`.
    pub m: Array2<f64>,
    /// Moore–Penrose pseudoinverse of `m`, `q × N`.
    pub m_pinv: Array2<f64>,
    /// Retained eigenvalues of `K̃`, descending.
    pub kept_eigenvalues: Vec<f64>,
    curve_offsets: Vec<usize>,
}

impl GramFactor {
    pub fn rank(&self) -> usize {
        self.m.ncols()
    }

    pub fn n_points(&self) -> usize {
        self.m.nrows()
    }

    pub fn n_curves(&self) -> usize {
        self.curve_offsets.len() - 1
    }

    pub fn curve_range(&self, i: usize) -> Range<usize> {
        self.curve_offsets[i]..self.curve_offsets[i + 1]
    }

    /// Rows of `M` belonging to curve `i` (the block `M_i`).
    pub fn curve_block(&self, i: usize) -> ArrayView2<'_, f64> {
        self.m.slice(s![self.curve_range(i), ..])
    }

    pub fn curve_sizes(&self) -> Vec<usize> {
        self.curve_offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Rebuild a factor from its pseudoinverse, whose rows are `λ_k^{-1/2} p_kᵀ`.
    pub fn from_pinv(m_pinv: Array2<f64>, curve_sizes: &[usize]) -> Result<Self> {
        let (q, n) = m_pinv.dim();
        if curve_sizes.iter().sum::<usize>() != n {
            return input(format!("curve sizes do not sum to the {n} columns of the pseudoinverse"));
        }
        let mut m = m_pinv.t().to_owned();
        let mut kept_eigenvalues = Vec::with_capacity(q);
        for k in 0..q {
            let sq: f64 = m_pinv.row(k).iter().map(|v| v * v).sum();
            if !(sq > 0.0 && sq.is_finite()) {
                return input(format!("row {k} of the pseudoinverse is degenerate"));
            }
            m.column_mut(k).mapv_inplace(|v| v / sq);
            kept_eigenvalues.push(1.0 / sq);
        }
        let mut curve_offsets = vec![0];
        for &sz in curve_sizes {
            curve_offsets.push(curve_offsets.last().unwrap() + sz);
        }
        Ok(GramFactor { m, m_pinv, kept_eigenvalues, curve_offsets })
    }
}

/// Factor `K̃` by eigendecomposition, keeping eigenpairs above
/// `rel_tol · λ_max`.
pub fn factor_gram(ktilde: &Array2<f64>, curve_sizes: &[usize], rel_tol: f64) -> Result<GramFactor> {
    let n = ktilde.nrows();
    if n != ktilde.ncols() {
        return input("Gram matrix must be square");
    }
    let eig = sym_eig(ktilde)?;
    factor_from_eig(&eig, curve_sizes, rel_tol)
}

pub fn factor_from_eig(eig: &SymEig, curve_sizes: &[usize], rel_tol: f64) -> Result<GramFactor> {
    let n = eig.dim();
    if curve_sizes.iter().sum::<usize>() != n {
        return input(format!(
            "curve sizes sum to {} but the Gram matrix has order {n}",
            curve_sizes.iter().sum::<usize>()
        ));
    }
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return input(format!("rank tolerance must lie in (0, 1), got {rel_tol}"));
    }
    if n == 0 {
        return input("Gram matrix is empty");
    }
    let lmax = eig.values[0];
    let lmin = eig.values[n - 1];
    if !(lmax > 0.0) {
        return Err(Error::Numerical(format!("Gram matrix has no positive eigenvalue (max {lmax:e})")));
    }
    if lmin < -1e-6 * lmax {
        return Err(Error::Numerical(format!(
            "not a Gram matrix: eigenvalue {lmin:e} against maximum {lmax:e}"
        )));
    }
    let q = eig.values.iter().take_while(|&&v| v > rel_tol * lmax).count();
    let mut m = eig.vectors.slice(s![.., ..q]).to_owned();
    let mut m_pinv = Array2::zeros((q, n));
    for k in 0..q {
        let root = eig.values[k].sqrt();
        m_pinv.row_mut(k).assign(&(&m.column(k) / root));
        m.column_mut(k).mapv_inplace(|v| v * root);
    }
    let mut curve_offsets = Vec::with_capacity(curve_sizes.len() + 1);
    curve_offsets.push(0);
    for &sz in curve_sizes {
        curve_offsets.push(curve_offsets.last().unwrap() + sz);
    }
    Ok(GramFactor {
        m,
        m_pinv,
        kept_eigenvalues: eig.values.iter().take(q).copied().collect(),
        curve_offsets,
    })
}

/// Frobenius norm.
pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}
