//! Dense linear-algebra helpers shared by the estimators.
//!
//! Matrices are `nalgebra` types throughout. The thin SVD is delegated to
//! `faer`, which is several times faster than the `nalgebra` routine on the
//! wide `n x p` data matrices used here.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Singular values at or below `RANK_TOL * s_max` count as zero.
pub const RANK_TOL: f64 = 1e-12;

/// Thin SVD `x = u * diag(s) * v^T` with `s` sorted non-increasing.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

fn to_faer(x: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)])
}

pub fn thin_svd(x: &DMatrix<f64>) -> ThinSvd {
    let (n, p) = x.shape();
    let r = n.min(p);
    if r == 0 {
        return ThinSvd {
            u: DMatrix::zeros(n, 0),
            s: Vec::new(),
            v: DMatrix::zeros(p, 0),
        };
    }
    let svd = to_faer(x).thin_svd();
    let (fu, fs, fv) = (svd.u(), svd.s_diagonal(), svd.v());
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| fs.read(b).total_cmp(&fs.read(a)));
    let s = order.iter().map(|&k| fs.read(k).max(0.0)).collect();
    let u = DMatrix::from_fn(n, r, |i, k| fu.read(i, order[k]));
    let v = DMatrix::from_fn(p, r, |j, k| fv.read(j, order[k]));
    ThinSvd { u, s, v }
}

/// Singular values only, sorted non-increasing.
pub fn singular_values(x: &DMatrix<f64>) -> Vec<f64> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Vec::new();
    }
    let mut s = to_faer(x).singular_values();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of entries of a non-increasing spectrum above `RANK_TOL * s[0]`.
pub fn numerical_rank(s: &[f64]) -> usize {
    match s.first() {
        Some(&s1) if s1 > 0.0 => {
            let tol = RANK_TOL * s1;
            s.iter().take_while(|&&v| v > tol).count()
        }
        _ => 0,
    }
}

/// Orthonormal basis of the column space of `b`.
pub fn column_basis(b: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = thin_svd(b);
    let r = numerical_rank(&svd.s);
    svd.u.columns(0, r).into_owned()
}

/// Moore-Penrose pseudoinverse applied to a right-hand side: `x^+ rhs`.
pub fn pinv_solve(x: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let svd = thin_svd(x);
    let r = numerical_rank(&svd.s);
    let mut coef = svd.u.columns(0, r).tr_mul(rhs);
    for (k, c) in coef.iter_mut().enumerate() {
        *c /= svd.s[k];
    }
    svd.v.columns(0, r) * coef
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues sorted descending.
pub fn sym_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vecs = DMatrix::from_fn(n, n, |i, k| eig.eigenvectors[(i, order[k])]);
    (vals, vecs)
}

/// Pseudoinverse of a symmetric PSD matrix via its eigen-decomposition.
pub fn sym_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen(m);
    let top = vals.first().copied().unwrap_or(0.0).abs();
    let tol = RANK_TOL * top;
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (k, &lam) in vals.iter().enumerate() {
        if lam > tol {
            let col = vecs.column(k);
            out += (col * col.transpose()) / lam;
        }
    }
    out
}

/// Symmetric square root of a PSD matrix; negative round-off eigenvalues are clipped.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen(m);
    let d = DVector::from_iterator(vals.len(), vals.iter().map(|v| v.max(0.0).sqrt()));
    &vecs * DMatrix::from_diagonal(&d) * vecs.transpose()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute asymmetry `|m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Solve `m x = rhs` for symmetric positive definite `m`.
pub fn spd_solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.solve(rhs))
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
}

pub fn all_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> bool {
    values.into_iter().all(|v| v.is_finite())
}
