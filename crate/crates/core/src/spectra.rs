//! Cached SVD of the data matrix and projection diagnostics.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, numerical_rank, thin_svd};

/// Thin SVD of `X` (`n x p`) with `r = min(n, p)` triplets retained.
///
/// `lambda_hat[k-1] = s_k^2 / n` are the eigenvalues of `X^T X / n`.
/// Singular values at or below `1e-12 * s_1` are stored as exact zeros so
/// rank queries and residual sums are stable.
#[derive(Debug, Clone)]
pub struct SvdCache {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
    pub n: usize,
    pub lambda_hat: Vec<f64>,
    rank: usize,
}

pub fn decompose(x: &DMatrix<f64>) -> Result<SvdCache> {
    if !linalg::all_finite(x.iter()) {
        return Err(Error::NonFinite("X"));
    }
    let svd = thin_svd(x);
    let rank = numerical_rank(&svd.s);
    let s: Vec<f64> = svd.s.iter().enumerate().map(|(k, &v)| if k < rank { v } else { 0.0 }).collect();
    let n = x.nrows();
    let lambda_hat = s.iter().map(|v| v * v / n.max(1) as f64).collect();
    Ok(SvdCache { u: svd.u, s, v: svd.v, n, lambda_hat, rank })
}

impl SvdCache {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn p(&self) -> usize {
        self.v.nrows()
    }

    /// `lambda_hat_k` with 1-based `k`, `lambda_hat_0 = +inf` and zero past the stored spectrum.
    pub fn lambda(&self, k: usize) -> f64 {
        match k {
            0 => f64::INFINITY,
            _ => self.lambda_hat.get(k - 1).copied().unwrap_or(0.0),
        }
    }

    /// The top-`k` right singular vectors, i.e. the leading eigenvectors of `X^T X`.
    pub fn top_directions(&self, k: usize) -> DMatrix<f64> {
        self.v.columns(0, k.min(self.v.ncols())).into_owned()
    }

    /// `||X - X_(k)||_F^2 = sum_{j > k} s_j^2`, summed from the tail.
    pub fn residual_sq(&self, k: usize) -> f64 {
        self.s.iter().skip(k).rev().map(|v| v * v).sum()
    }

    /// All tail sums `||X - X_(k)||_F^2` for `k = 0..=r`.
    pub fn residual_profile(&self) -> Vec<f64> {
        let r = self.s.len();
        let mut out = vec![0.0; r + 1];
        for k in (0..r).rev() {
            out[k] = out[k + 1] + self.s[k] * self.s[k];
        }
        out
    }

    /// Projection diagnostics for `B = U_k`, available in closed form.
    pub fn pcr_diagnostics(&self, k: usize) -> ProjectionDiagnostics {
        let k = k.min(self.rank);
        ProjectionDiagnostics {
            r_hat: k,
            eta_hat: if k == 0 { 0.0 } else { self.lambda(k) },
            psi_hat: self.lambda(k + 1),
        }
    }
}

/// `r_hat = rank(X P_B)`, `eta_hat = s_{r_hat}^2(X P_B) / n`, `psi_hat = s_1^2(X P_B^perp) / n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProjectionDiagnostics {
    pub r_hat: usize,
    pub eta_hat: f64,
    pub psi_hat: f64,
}

/// Diagnostics of the projected predictor built from `b` (`p x q`).
///
/// Only the column space of `b` matters. When it is all of `R^p` the
/// complement is empty and `psi_hat = 0`.
pub fn diagnostics(x: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<ProjectionDiagnostics> {
    if b.nrows() != x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "B has {} rows but X has {} columns",
            b.nrows(),
            x.ncols()
        )));
    }
    if b.iter().all(|&v| v == 0.0) || b.ncols() == 0 {
        return Err(Error::ZeroMatrix("B"));
    }
    let n = x.nrows().max(1) as f64;
    let basis = linalg::column_basis(b);
    // X P_B = (X Q) Q^T shares its non-zero singular values with X Q.
    let xq = x * &basis;
    let s_in = linalg::singular_values(&xq);
    let r_hat = numerical_rank(&s_in);
    let eta_hat = if r_hat == 0 { 0.0 } else { s_in[r_hat - 1].powi(2) / n };
    let psi_hat = if basis.ncols() >= x.ncols() {
        0.0
    } else {
        let complement = x - &xq * basis.transpose();
        linalg::singular_values(&complement).first().map_or(0.0, |s| s * s / n)
    };
    Ok(ProjectionDiagnostics { r_hat, eta_hat, psi_hat })
}

/// Best rank-`k` approximation `X_(k) = sum_{j <= k} s_j u_j v_j^T`.
pub fn low_rank_approx(cache: &SvdCache, k: usize) -> Result<DMatrix<f64>> {
    let r = cache.s.len();
    if k > r {
        return Err(Error::RankOutOfRange { requested: k, max: r });
    }
    let scaled = DMatrix::from_fn(cache.u.nrows(), k, |i, j| cache.u[(i, j)] * cache.s[j]);
    Ok(scaled * cache.v.columns(0, k).transpose())
}

/// `U_k^T` applied to a response: the PCR coefficient `V_k S_k^{-1} U_k^T y`.
pub(crate) fn pcr_coefficients(cache: &SvdCache, y: &DVector<f64>, k: usize) -> DVector<f64> {
    let mut coef = cache.u.columns(0, k).tr_mul(y);
    for (j, c) in coef.iter_mut().enumerate() {
        *c /= cache.s[j];
    }
    cache.v.columns(0, k) * coef
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn identity_spectrum() {
        let c = decompose(&DMatrix::identity(3, 3)).unwrap();
        for s in &c.s {
            assert!((s - 1.0).abs() < 1e-14);
        }
        assert_eq!(c.rank(), 3);
    }

    #[test]
    fn rank_one_outer_product() {
        let u = DVector::from_vec(vec![1.0, 2.0, -1.0, 0.5]);
        let v = DVector::from_vec(vec![3.0, 0.0, 1.0]);
        let c = decompose(&(&u * v.transpose())).unwrap();
        assert_eq!(c.rank(), 1);
        assert!((c.s[0] - u.norm() * v.norm()).abs() < 1e-12);
        assert!(c.s[1..].iter().all(|&s| s == 0.0));
    }

    #[test]
    fn orthonormal_factors_and_reconstruction() {
        let x = gaussian(50, 80, 3);
        let c = decompose(&x).unwrap();
        let r = c.s.len();
        assert!(linalg::max_abs(&(c.u.tr_mul(&c.u) - DMatrix::identity(r, r))) <= 1e-8);
        assert!(linalg::max_abs(&(c.v.tr_mul(&c.v) - DMatrix::identity(r, r))) <= 1e-8);
        let rec = low_rank_approx(&c, r).unwrap();
        assert!((rec - &x).norm() / x.norm().max(1.0) <= 1e-8);
    }

    #[test]
    fn non_finite_rejected() {
        let mut x = DMatrix::zeros(2, 2);
        x[(0, 1)] = f64::NAN;
        assert!(decompose(&x).is_err());
    }

    #[test]
    fn low_rank_zero_and_out_of_range() {
        let x = gaussian(6, 4, 1);
        let c = decompose(&x).unwrap();
        assert_eq!(low_rank_approx(&c, 0).unwrap(), DMatrix::zeros(6, 4));
        assert!(low_rank_approx(&c, 5).is_err());
    }

    #[test]
    fn eckart_young_residual() {
        let x = gaussian(20, 12, 9);
        let c = decompose(&x).unwrap();
        for k in 0..=12 {
            let direct = (&x - low_rank_approx(&c, k).unwrap()).norm_squared();
            let tail: f64 = c.s[k..].iter().map(|s| s * s).sum();
            assert!((direct - tail).abs() <= 1e-9 * x.norm_squared());
            assert!((c.residual_sq(k) - tail).abs() <= 1e-12 * x.norm_squared());
        }
    }

    #[test]
    fn lambda_conventions() {
        let x = gaussian(5, 8, 2);
        let c = decompose(&x).unwrap();
        assert!(c.lambda(0).is_infinite());
        assert_eq!(c.lambda(6), 0.0);
        assert!(c.lambda_hat.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn diagnostics_full_projection() {
        let x = gaussian(10, 6, 4);
        let c = decompose(&x).unwrap();
        let d = diagnostics(&x, &DMatrix::identity(6, 6)).unwrap();
        assert_eq!(d.r_hat, 6);
        assert_eq!(d.psi_hat, 0.0);
        assert!((d.eta_hat - c.lambda(6)).abs() <= 1e-10 * c.lambda(1));
    }

    #[test]
    fn diagnostics_top_directions() {
        let x = gaussian(15, 9, 5);
        let c = decompose(&x).unwrap();
        for k in 1..9 {
            let d = diagnostics(&x, &c.top_directions(k)).unwrap();
            assert_eq!(d.r_hat, k);
            assert!((d.eta_hat - c.lambda(k)).abs() <= 1e-9 * c.lambda(1));
            assert!((d.psi_hat - c.lambda(k + 1)).abs() <= 1e-9 * c.lambda(1));
            assert_eq!(c.pcr_diagnostics(k).r_hat, k);
        }
    }

    #[test]
    fn diagnostics_zero_b_errors() {
        let x = gaussian(4, 3, 6);
        assert!(matches!(diagnostics(&x, &DMatrix::zeros(3, 2)), Err(Error::ZeroMatrix(_))));
    }
}
