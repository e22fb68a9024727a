//! Small dense complex matrices and subspaces of `C^N`.
//!
//! Everything here targets desk-scale sizes (`N <= 8`). Storage and the
//! underlying decompositions come from `nalgebra`; this module adds the
//! conventions the rest of the crate relies on: ascending eigenvalues,
//! descending singular values, scale-floored rank thresholds and
//! orthonormal subspace bases.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

/// Hermiticity tolerance for matrices that are Hermitian by construction.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Inputs to [`hermitian_eig`] may carry this much relative asymmetry
/// (accumulated rounding from products) before they are rejected.
const HERMITIAN_INPUT_TOL: f64 = 1e-8;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn zeros(rows: usize, cols: usize) -> CMatrix {
    CMatrix::zeros(rows, cols)
}

pub fn real_diag(diag: &[f64]) -> CMatrix {
    let n = diag.len();
    CMatrix::from_fn(n, n, |i, j| if i == j { c(diag[i], 0.0) } else { C64::default() })
}

/// `(M + M*) / 2`.
pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * c(0.5, 0.0)
}

/// `||M - M*||_F`.
pub fn hermitian_defect(m: &CMatrix) -> f64 {
    (m - m.adjoint()).norm()
}

pub fn is_hermitian(m: &CMatrix, rel_tol: f64) -> bool {
    m.is_square() && hermitian_defect(m) <= rel_tol * (1.0 + m.norm())
}

/// Largest singular value.
pub fn spectral_norm(m: &CMatrix) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

#[derive(Debug, Clone)]
pub struct HermitianEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector for `values[i]`.
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn reconstruct(&self) -> CMatrix {
        let n = self.vectors.nrows();
        let mut m = zeros(n, n);
        for (i, &mu) in self.values.iter().enumerate() {
            let v = self.vectors.column(i);
            m += (&v * v.adjoint()) * c(mu, 0.0);
        }
        m
    }
}

pub fn hermitian_eig(m: &CMatrix) -> Result<HermitianEigen> {
    if !m.is_square() {
        return Err(Error::contract(format!(
            "hermitian_eig needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !is_hermitian(m, HERMITIAN_INPUT_TOL) {
        return Err(Error::contract(format!(
            "hermitian_eig input is not Hermitian (defect {:.3e})",
            hermitian_defect(m)
        )));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(HermitianEigen { values: vec![], vectors: zeros(0, 0) });
    }
    let eig = hermitian_part(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, col| eig.eigenvectors[(r, order[col])]);
    Ok(HermitianEigen { values, vectors })
}

/// Full singular value decomposition `M = U diag(sigma) V*`, sigma descending.
///
/// `v` is always `cols x cols` so that right null vectors are available
/// even for wide matrices.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: CMatrix,
    pub sigma: Vec<f64>,
    pub v: CMatrix,
}

pub fn svd(m: &CMatrix) -> Svd {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Svd { u: zeros(rows, 0), sigma: vec![], v: identity(cols) };
    }
    // pad wide inputs with zero rows so the right factor is square
    let work = if rows < cols {
        let mut p = zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let dec = work.svd(true, true);
    let u_full = dec.u.expect("svd computed with u");
    let v_t = dec.v_t.expect("svd computed with v_t");
    let p = dec.singular_values.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| dec.singular_values[b].total_cmp(&dec.singular_values[a]));
    let sigma: Vec<f64> = order.iter().map(|&i| dec.singular_values[i]).collect();
    let v = CMatrix::from_fn(cols, p, |r, col| v_t[(order[col], r)].conj());
    let u = CMatrix::from_fn(rows, p, |r, col| u_full[(r, order[col])]);
    let sigma = if rows < cols { sigma } else { sigma[..cols.min(p)].to_vec() };
    Svd { u, sigma, v }
}

/// Singular values in descending order (length `min(rows, cols)`).
pub fn singular_values(m: &CMatrix) -> Vec<f64> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return vec![];
    }
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s.truncate(rows.min(cols));
    s
}

/// Orthonormal basis of a subspace of `C^N`, stored as the columns of an
/// `N x k` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    basis: CMatrix,
}

impl SubspaceBasis {
    /// Takes columns that are already orthonormal.
    pub fn from_orthonormal(basis: CMatrix) -> Self {
        SubspaceBasis { basis }
    }

    /// Column span of `vectors`, orthonormalised. Directions with singular
    /// value below `1e-10 * sigma_max` are dropped.
    pub fn span(vectors: &CMatrix) -> Self {
        range_basis(vectors, 1e-10)
    }

    /// Span of the given vectors (each of length `ambient`).
    pub fn span_of(ambient: usize, vectors: &[Vec<C64>]) -> Self {
        let m = CMatrix::from_fn(ambient, vectors.len(), |r, col| vectors[col][r]);
        Self::span(&m)
    }

    pub fn full(n: usize) -> Self {
        SubspaceBasis { basis: identity(n) }
    }

    pub fn zero(n: usize) -> Self {
        SubspaceBasis { basis: zeros(n, 0) }
    }

    /// `span(e_i)` with a 0-based coordinate index.
    pub fn coordinate(n: usize, i: usize) -> Self {
        let mut b = zeros(n, 1);
        b[(i, 0)] = c(1.0, 0.0);
        SubspaceBasis { basis: b }
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.basis
    }

    pub fn into_matrix(self) -> CMatrix {
        self.basis
    }

    pub fn vectors(&self) -> Vec<Vec<C64>> {
        (0..self.dim()).map(|j| self.basis.column(j).iter().copied().collect()).collect()
    }

    /// `||E* E - I||_F`.
    pub fn gram_defect(&self) -> f64 {
        (self.basis.adjoint() * &self.basis - identity(self.dim())).norm()
    }
}

fn range_basis(m: &CMatrix, rel_tol: f64) -> SubspaceBasis {
    let n = m.nrows();
    if m.ncols() == 0 {
        return SubspaceBasis::zero(n);
    }
    let d = svd(m);
    let smax = d.sigma.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return SubspaceBasis::zero(n);
    }
    let r = d.sigma.iter().filter(|&&s| s > rel_tol * smax).count();
    SubspaceBasis { basis: d.u.columns(0, r).into_owned() }
}

/// Right null space: directions `h` with `||M h|| <= tol * max(sigma_max, 1) * ||h||`.
pub fn null_space(m: &CMatrix, tol: f64) -> SubspaceBasis {
    let d = svd(m);
    let n = m.ncols();
    let scale = d.sigma.first().copied().unwrap_or(0.0).max(1.0);
    // singular values beyond min(rows, cols) are structurally zero
    let mut sig = d.sigma.clone();
    sig.resize(n, 0.0);
    let keep: Vec<usize> = (0..n).filter(|&i| sig[i] <= tol * scale).collect();
    let basis = CMatrix::from_fn(n, keep.len(), |r, col| d.v[(r, keep[col])]);
    SubspaceBasis { basis }
}

/// The `k` right singular directions belonging to the smallest singular values.
pub fn smallest_right_singular(m: &CMatrix, k: usize) -> SubspaceBasis {
    let d = svd(m);
    let n = m.ncols();
    let k = k.min(n);
    SubspaceBasis { basis: d.v.columns(n - k, k).into_owned() }
}

/// Orthogonal projector onto `span(E)`.
pub fn projector(e: &SubspaceBasis) -> CMatrix {
    let b = e.matrix();
    hermitian_part(&(b * b.adjoint()))
}

/// `C^N minus span(E)` (orthogonal complement).
pub fn subspace_complement(e: &SubspaceBasis) -> SubspaceBasis {
    let n = e.ambient_dim();
    if e.dim() == 0 {
        return SubspaceBasis::full(n);
    }
    if e.dim() >= n {
        return SubspaceBasis::zero(n);
    }
    let q = identity(n) - projector(e);
    let eig = hermitian_eig(&q).expect("complementary projector is Hermitian");
    let keep = n - e.dim();
    SubspaceBasis { basis: eig.vectors.columns(n - keep, keep).into_owned() }
}

/// Orthonormal basis of `M(span E)`. Directions mapped below `1e-10 * ||M||` are dropped.
pub fn subspace_image(m: &CMatrix, e: &SubspaceBasis) -> SubspaceBasis {
    let n = m.nrows();
    if e.dim() == 0 {
        return SubspaceBasis::zero(n);
    }
    let norm_m = spectral_norm(m);
    if norm_m == 0.0 {
        return SubspaceBasis::zero(n);
    }
    let img = m * e.matrix();
    let d = svd(&img);
    let r = d.sigma.iter().filter(|&&s| s > 1e-10 * norm_m).count();
    SubspaceBasis { basis: d.u.columns(0, r).into_owned() }
}

/// Cosines of the principal angles between `span A` and `span B`, descending.
pub fn principal_cosines(a: &SubspaceBasis, b: &SubspaceBasis) -> Vec<f64> {
    if a.dim() == 0 || b.dim() == 0 {
        return vec![];
    }
    let prod = a.matrix().adjoint() * b.matrix();
    singular_values(&prod).into_iter().map(|s| s.min(1.0)).collect()
}

/// Number of principal angles with cosine above `1 - tol`.
pub fn intersection_dim(a: &SubspaceBasis, b: &SubspaceBasis, tol: f64) -> usize {
    principal_cosines(a, b).into_iter().filter(|&cs| cs > 1.0 - tol).count()
}

/// Largest principal angle between two subspaces; `pi/2` if dimensions differ.
///
/// Computed from sines, `||(I - P_A) B||_2`, which stays accurate for
/// nearly coincident subspaces.
pub fn max_principal_angle(a: &SubspaceBasis, b: &SubspaceBasis) -> f64 {
    if a.dim() != b.dim() {
        return std::f64::consts::FRAC_PI_2;
    }
    if a.dim() == 0 {
        return 0.0;
    }
    let n = a.ambient_dim();
    let resid = (identity(n) - projector(a)) * b.matrix();
    spectral_norm(&resid).min(1.0).asin()
}

/// Inverse with a reciprocal-condition guard.
pub fn inverse(m: &CMatrix) -> Result<CMatrix> {
    if !m.is_square() {
        return Err(Error::contract("inverse of a non-square matrix"));
    }
    let rc = rcond(m);
    if rc < 1e-14 {
        return Err(Error::InternalConsistency(format!(
            "matrix is numerically singular (rcond {rc:.3e})"
        )));
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::InternalConsistency("matrix inversion failed".into()))
}

/// `sigma_min / sigma_max` (0 for the zero matrix).
pub fn rcond(m: &CMatrix) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if hi > 0.0 => lo / hi,
        _ => 0.0,
    }
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Determinant via LU.
pub fn det(m: &CMatrix) -> C64 {
    m.clone().lu().determinant()
}
