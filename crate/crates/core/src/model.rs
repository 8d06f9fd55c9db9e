//! Factor regression model parameters, validation, and synthetic designs.
//!
//! A parameter tuple `theta = (K, A, beta, Sigma_Z, Sigma_W, sigma^2)`
//! describes the joint law of `(X, Y)` through `X = A Z + W` and
//! `Y = Z^T beta + eps`. Two generators reproduce the simulation designs:
//! an unrestricted factor regression model (Gaussian loadings) and an
//! Essential Regression model (pure variables plus sparse mixed rows).

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, numerical_rank, sym_eigen};
use crate::rng::{sim_rng, SimRng};

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;
const PURE_TOL: f64 = 1e-10;

/// Covariance of the additive noise `W`.
///
/// The simulation designs only ever produce diagonal noise, and storing it
/// as a vector keeps `p = 5000` designs cheap. `Dense` covers everything else.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseCovariance {
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

impl NoiseCovariance {
    pub fn identity(p: usize) -> Self {
        NoiseCovariance::Diagonal(DVector::from_element(p, 1.0))
    }

    pub fn zeros(p: usize) -> Self {
        NoiseCovariance::Diagonal(DVector::zeros(p))
    }

    pub fn dim(&self) -> usize {
        match self {
            NoiseCovariance::Diagonal(d) => d.len(),
            NoiseCovariance::Dense(m) => m.nrows(),
        }
    }

    pub fn trace(&self) -> f64 {
        match self {
            NoiseCovariance::Diagonal(d) => d.sum(),
            NoiseCovariance::Dense(m) => m.trace(),
        }
    }

    /// Operator norm; for a PSD matrix this is the top eigenvalue.
    pub fn op_norm(&self) -> f64 {
        match self {
            NoiseCovariance::Diagonal(d) => d.amax(),
            NoiseCovariance::Dense(m) => linalg::singular_values(m).first().copied().unwrap_or(0.0),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            NoiseCovariance::Diagonal(d) => d.iter().all(|&v| v == 0.0),
            NoiseCovariance::Dense(m) => m.iter().all(|&v| v == 0.0),
        }
    }

    pub fn is_diagonal(&self) -> bool {
        match self {
            NoiseCovariance::Diagonal(_) => true,
            NoiseCovariance::Dense(m) => (0..m.nrows())
                .all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)].abs() <= SYMMETRY_TOL)),
        }
    }

    pub fn diagonal(&self) -> DVector<f64> {
        match self {
            NoiseCovariance::Diagonal(d) => d.clone(),
            NoiseCovariance::Dense(m) => m.diagonal(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            NoiseCovariance::Diagonal(d) => DMatrix::from_diagonal(d),
            NoiseCovariance::Dense(m) => m.clone(),
        }
    }

    /// `Sigma_W * v`.
    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            NoiseCovariance::Diagonal(d) => d.component_mul(v),
            NoiseCovariance::Dense(m) => m * v,
        }
    }

    /// `v^T Sigma_W v`.
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        match self {
            NoiseCovariance::Diagonal(d) => d.iter().zip(v.iter()).map(|(s, x)| s * x * x).sum(),
            NoiseCovariance::Dense(m) => v.dot(&(m * v)),
        }
    }

    /// `Sigma_W^{-1} rhs`, or `None` when `Sigma_W` is singular.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        match self {
            NoiseCovariance::Diagonal(d) => {
                if d.iter().any(|&v| v <= 0.0) {
                    return None;
                }
                let mut out = rhs.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row /= d[i];
                }
                Some(out)
            }
            NoiseCovariance::Dense(m) => linalg::spd_solve(m, rhs),
        }
    }

    fn asymmetry(&self) -> f64 {
        match self {
            NoiseCovariance::Diagonal(_) => 0.0,
            NoiseCovariance::Dense(m) => linalg::asymmetry(m),
        }
    }

    fn min_eigenvalue(&self) -> f64 {
        match self {
            NoiseCovariance::Diagonal(d) => d.min(),
            NoiseCovariance::Dense(m) => sym_eigen(m).0.last().copied().unwrap_or(0.0),
        }
    }

    fn all_finite(&self) -> bool {
        match self {
            NoiseCovariance::Diagonal(d) => linalg::all_finite(d.iter()),
            NoiseCovariance::Dense(m) => linalg::all_finite(m.iter()),
        }
    }

    /// Matrix `F` with `F F^T = Sigma_W`, used to draw `W = F g`.
    fn factor(&self) -> NoiseFactor {
        match self {
            NoiseCovariance::Diagonal(d) => NoiseFactor::Diagonal(d.map(|v| v.max(0.0).sqrt())),
            NoiseCovariance::Dense(m) => NoiseFactor::Dense(linalg::sym_sqrt(m)),
        }
    }
}

enum NoiseFactor {
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

/// The parameter tuple `theta` of a factor regression model.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModelParams {
    pub k: usize,
    /// Loading matrix `A`, `p x K`.
    pub a: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub sigma_z: DMatrix<f64>,
    pub sigma_w: NoiseCovariance,
    pub sigma_sq: f64,
}

impl FactorModelParams {
    pub fn p(&self) -> usize {
        self.a.nrows()
    }

    /// `Cov(X) = A Sigma_Z A^T + Sigma_W`, materialized as a dense `p x p` matrix.
    pub fn cov_x(&self) -> DMatrix<f64> {
        &self.a * &self.sigma_z * self.a.transpose() + self.sigma_w.to_dense()
    }

    /// `Cov(X, Y) = A Sigma_Z beta`.
    pub fn cov_xy(&self) -> DVector<f64> {
        &self.a * (&self.sigma_z * &self.beta)
    }

    /// Non-zero spectrum of `A Sigma_Z A^T`, descending, computed in `K` dimensions
    /// as the spectrum of `Sigma_Z^{1/2} A^T A Sigma_Z^{1/2}`.
    pub fn signal_eigenvalues(&self) -> Vec<f64> {
        let root = linalg::sym_sqrt(&self.sigma_z);
        let gram = self.a.tr_mul(&self.a);
        sym_eigen(&(&root * gram * &root)).0
    }

    fn check_dimensions(&self) -> Result<()> {
        let (p, k) = self.a.shape();
        if k != self.k {
            return Err(Error::DimensionMismatch(format!("A has {k} columns but K = {}", self.k)));
        }
        if self.beta.len() != k {
            return Err(Error::DimensionMismatch(format!("beta has length {} but K = {k}", self.beta.len())));
        }
        if self.sigma_z.shape() != (k, k) {
            return Err(Error::DimensionMismatch(format!(
                "Sigma_Z is {:?} but K = {k}",
                self.sigma_z.shape()
            )));
        }
        if self.sigma_w.dim() != p {
            return Err(Error::DimensionMismatch(format!(
                "Sigma_W has dimension {} but A has {p} rows",
                self.sigma_w.dim()
            )));
        }
        if let NoiseCovariance::Dense(m) = &self.sigma_w {
            if !m.is_square() {
                return Err(Error::DimensionMismatch("Sigma_W is not square".into()));
            }
        }
        Ok(())
    }
}

/// A violated model invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonFinite,
    RankA { rank: usize },
    RankSigmaZ { rank: usize },
    KNotBelowP,
    SigmaZAsymmetric,
    SigmaZNotPsd,
    SigmaWAsymmetric,
    SigmaWNotPsd,
    NegativeNoiseVariance,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite => write!(f, "non-finite parameter entries"),
            Violation::RankA { rank } => write!(f, "rank(A) < K (rank {rank})"),
            Violation::RankSigmaZ { rank } => write!(f, "rank(Σ_Z) < K (rank {rank})"),
            Violation::KNotBelowP => write!(f, "K >= p"),
            Violation::SigmaZAsymmetric => write!(f, "Σ_Z not symmetric"),
            Violation::SigmaZNotPsd => write!(f, "Σ_Z has a negative eigenvalue"),
            Violation::SigmaWAsymmetric => write!(f, "Σ_W not symmetric"),
            Violation::SigmaWNotPsd => write!(f, "Σ_W has a negative eigenvalue"),
            Violation::NegativeNoiseVariance => write!(f, "σ² < 0"),
        }
    }
}

/// Which of the Essential Regression structural assumptions hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ErAssumptions {
    /// Every loading row has l1-norm at most one.
    pub row_l1_bounded: bool,
    /// Every factor has at least two pure rows `|A_j| = e_k`.
    pub two_pure_per_factor: bool,
    /// `Sigma_W` is diagonal.
    pub diagonal_noise: bool,
}

impl ErAssumptions {
    pub fn all(&self) -> bool {
        self.row_l1_bounded && self.two_pure_per_factor && self.diagonal_noise
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub er: ErAssumptions,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the model invariants and the Essential Regression assumptions.
///
/// Dimension mismatches are hard errors; everything else is reported.
pub fn validate_params(theta: &FactorModelParams) -> Result<ValidationReport> {
    theta.check_dimensions()?;
    let k = theta.k;
    let mut violations = Vec::new();

    let finite = linalg::all_finite(theta.a.iter())
        && linalg::all_finite(theta.beta.iter())
        && linalg::all_finite(theta.sigma_z.iter())
        && theta.sigma_w.all_finite()
        && theta.sigma_sq.is_finite();
    if !finite {
        violations.push(Violation::NonFinite);
        return Ok(ValidationReport { violations, er: er_assumptions(theta) });
    }

    let rank_a = numerical_rank(&linalg::singular_values(&theta.a));
    if rank_a < k {
        violations.push(Violation::RankA { rank: rank_a });
    }
    let (z_eigs, _) = sym_eigen(&theta.sigma_z);
    let rank_z = numerical_rank(&z_eigs.iter().map(|v| v.max(0.0)).collect::<Vec<_>>());
    if rank_z < k {
        violations.push(Violation::RankSigmaZ { rank: rank_z });
    }
    if k >= theta.p() {
        violations.push(Violation::KNotBelowP);
    }
    if linalg::asymmetry(&theta.sigma_z) > SYMMETRY_TOL {
        violations.push(Violation::SigmaZAsymmetric);
    }
    if z_eigs.last().is_some_and(|&v| v < -PSD_TOL) {
        violations.push(Violation::SigmaZNotPsd);
    }
    if theta.sigma_w.asymmetry() > SYMMETRY_TOL {
        violations.push(Violation::SigmaWAsymmetric);
    }
    if theta.sigma_w.dim() > 0 && theta.sigma_w.min_eigenvalue() < -PSD_TOL {
        violations.push(Violation::SigmaWNotPsd);
    }
    if theta.sigma_sq < 0.0 {
        violations.push(Violation::NegativeNoiseVariance);
    }

    Ok(ValidationReport { violations, er: er_assumptions(theta) })
}

fn er_assumptions(theta: &FactorModelParams) -> ErAssumptions {
    let row_l1_bounded = theta
        .a
        .row_iter()
        .all(|row| row.iter().map(|v| v.abs()).sum::<f64>() <= 1.0 + PURE_TOL);
    let mut pure_counts = vec![0usize; theta.k];
    for row in theta.a.row_iter() {
        if let Some(k) = pure_factor(row.iter().copied()) {
            pure_counts[k] += 1;
        }
    }
    ErAssumptions {
        row_l1_bounded,
        two_pure_per_factor: pure_counts.iter().all(|&c| c >= 2),
        diagonal_noise: theta.sigma_w.is_diagonal(),
    }
}

/// Index `k` if the row equals `+-e_k`.
pub fn pure_factor(row: impl Iterator<Item = f64>) -> Option<usize> {
    let mut hit = None;
    for (k, v) in row.enumerate() {
        if (v.abs() - 1.0).abs() <= PURE_TOL {
            if hit.is_some() {
                return None;
            }
            hit = Some(k);
        } else if v.abs() > PURE_TOL {
            return None;
        }
    }
    hit
}

/// Training data: `x` is `n x p`, `y` has length `n`; synthetic data keep the latent `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub z: Option<DMatrix<f64>>,
    pub seed: u64,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, z: Option<DMatrix<f64>>, seed: u64) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!("X has {} rows but Y has {}", x.nrows(), y.len())));
        }
        if let Some(z) = &z {
            if z.nrows() != x.nrows() {
                return Err(Error::DimensionMismatch(format!("Z has {} rows but X has {}", z.nrows(), x.nrows())));
            }
            if !linalg::all_finite(z.iter()) {
                return Err(Error::NonFinite("Z"));
            }
        }
        if !linalg::all_finite(x.iter()) {
            return Err(Error::NonFinite("X"));
        }
        if !linalg::all_finite(y.iter()) {
            return Err(Error::NonFinite("Y"));
        }
        Ok(Dataset { x, y, z, seed })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
            z: self.z.as_ref().map(|z| z.select_rows(rows)),
            seed: self.seed,
        }
    }
}

/// Unrestricted factor regression design with Gaussian loadings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrmDesign {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    /// Multiplier applied to `A`; sweeping it moves the SNR.
    #[serde(default = "default_loading_scale")]
    pub loading_scale: f64,
}

fn default_loading_scale() -> f64 {
    1.0
}

/// Essential Regression design: `k` factors with `m` pure variables each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErDesign {
    pub k: usize,
    pub m: usize,
    pub p: usize,
    pub n: usize,
}

/// Latent covariance of the simulation designs: diagonal equally spaced on
/// `[2.5, 3]`, off-diagonals `(-1)^{i+j} min(d_i, d_j) 0.3^{|i-j|}`.
pub fn latent_covariance(k: usize) -> DMatrix<f64> {
    let diag: Vec<f64> = if k == 1 {
        vec![2.5]
    } else {
        (0..k).map(|i| 2.5 + 0.5 * i as f64 / (k - 1) as f64).collect()
    };
    DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            diag[i]
        } else {
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            sign * diag[i].min(diag[j]) * 0.3f64.powi((i as i32 - j as i32).abs())
        }
    })
}

/// Draws `Sigma_W` diagonal and `beta` as in the simulation designs.
fn draw_noise_and_beta(p: usize, k: usize, rng: &mut SimRng) -> (NoiseCovariance, DVector<f64>) {
    let w = Uniform::new(1.0, 3.0);
    let sigma_w = DVector::from_iterator(p, (0..p).map(|_| w.sample(rng)));
    let b = Uniform::new(0.0, 3.0);
    let beta = DVector::from_iterator(k, (0..k).map(|_| b.sample(rng)));
    (NoiseCovariance::Diagonal(sigma_w), beta)
}

/// Draws `n` i.i.d. rows `(Z, W, eps)` under `theta` and forms `X`, `Y`.
pub fn sample_dataset(theta: &FactorModelParams, n: usize, seed: u64, rng: &mut SimRng) -> Result<Dataset> {
    let (z, w) = sample_latent_and_noise(theta, n, rng)?;
    let noise_sd = theta.sigma_sq.max(0.0).sqrt();
    let eps = DVector::from_iterator(n, (0..n).map(|_| noise_sd * normal(rng)));
    let x = &z * theta.a.transpose() + w;
    let y = &z * &theta.beta + eps;
    Dataset::new(x, y, Some(z), seed)
}

/// Draws `Z` (`n x K`, rows `N(0, Sigma_Z)`) and `W` (`n x p`, rows `N(0, Sigma_W)`).
pub(crate) fn sample_latent_and_noise(
    theta: &FactorModelParams,
    n: usize,
    rng: &mut SimRng,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let k = theta.k;
    let p = theta.p();
    let z_factor = theta
        .sigma_z
        .clone()
        .cholesky()
        .map(|c| c.l())
        .unwrap_or_else(|| linalg::sym_sqrt(&theta.sigma_z));
    let g = standard_normal_matrix(n, k, rng);
    let z = g * z_factor.transpose();
    let w = match theta.sigma_w.factor() {
        NoiseFactor::Diagonal(sd) => {
            let mut w = DMatrix::zeros(n, p);
            for i in 0..n {
                for j in 0..p {
                    w[(i, j)] = sd[j] * normal(rng);
                }
            }
            w
        }
        NoiseFactor::Dense(root) => standard_normal_matrix(n, p, rng) * root,
    };
    Ok((z, w))
}

fn normal(rng: &mut SimRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Row-major fill so the draw order is independent of storage layout.
fn standard_normal_matrix(rows: usize, cols: usize, rng: &mut SimRng) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = normal(rng);
        }
    }
    m
}

/// Factor regression design: `A` entries i.i.d. normal with variance
/// `1/sqrt(K)` (times `loading_scale`), noise and coefficients as in
/// [`latent_covariance`] and [`ErDesign`].
pub fn generate_frm(design: &FrmDesign, seed: u64) -> Result<(FactorModelParams, Dataset)> {
    let FrmDesign { n, p, k, loading_scale } = *design;
    if k == 0 {
        return Err(Error::InvalidParameter("K must be positive".into()));
    }
    if k >= n.min(p) {
        return Err(Error::InvalidParameter(format!("K = {k} must be below min(n, p) = {}", n.min(p))));
    }
    if !(loading_scale > 0.0 && loading_scale.is_finite()) {
        return Err(Error::InvalidParameter(format!("loading scale must be positive, got {loading_scale}")));
    }
    let mut rng = sim_rng(seed);
    let sd = loading_scale * (k as f64).powf(-0.25);
    let mut a = DMatrix::zeros(p, k);
    for i in 0..p {
        for j in 0..k {
            a[(i, j)] = sd * normal(&mut rng);
        }
    }
    let (sigma_w, beta) = draw_noise_and_beta(p, k, &mut rng);
    let theta = FactorModelParams {
        k,
        a,
        beta,
        sigma_z: latent_covariance(k),
        sigma_w,
        sigma_sq: 1.0,
    };
    let data = sample_dataset(&theta, n, seed, &mut rng)?;
    Ok((theta, data))
}

/// Essential Regression design: `A_I = I_K (x) 1_m` on the first `K m` rows;
/// every remaining row has a uniformly drawn support of size
/// `s in {2, ..., max(2, floor(K/2))}` with entries `Uniform(0, 1/s)` and random signs.
pub fn generate_er(design: &ErDesign, seed: u64) -> Result<(FactorModelParams, Dataset)> {
    let ErDesign { k, m, p, n } = *design;
    if k < 2 || m == 0 {
        return Err(Error::InvalidParameter("ER design needs K >= 2 and m >= 1".into()));
    }
    if k * m > p {
        return Err(Error::InvalidParameter(format!("K m = {} exceeds p = {p}", k * m)));
    }
    let n_pure = k * m;
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    let mut rng = sim_rng(seed);
    let mut a = DMatrix::zeros(p, k);
    for f in 0..k {
        for r in 0..m {
            a[(f * m + r, f)] = 1.0;
        }
    }
    for j in n_pure..p {
        let s = rng.gen_range(2..=(k / 2).max(2));
        let entry = Uniform::new(0.0, 1.0 / s as f64);
        let support = index::sample(&mut rng, k, s);
        for col in support.iter() {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            a[(j, col)] = sign * entry.sample(&mut rng);
        }
        let l1: f64 = a.row(j).iter().map(|v| v.abs()).sum();
        if l1 > 1.0 {
            let mut row = a.row_mut(j);
            row /= l1;
        }
    }
    let (sigma_w, beta) = draw_noise_and_beta(p, k, &mut rng);
    let theta = FactorModelParams {
        k,
        a,
        beta,
        sigma_z: latent_covariance(k),
        sigma_w,
        sigma_sq: 1.0,
    };
    let data = sample_dataset(&theta, n, seed, &mut rng)?;
    Ok((theta, data))
}

/// `delta_W = c (||Sigma_W||_op + tr(Sigma_W) / n)`.
pub fn noise_level(sigma_w: &NoiseCovariance, n: usize, scale_c: f64) -> f64 {
    scale_c * (sigma_w.op_norm() + sigma_w.trace() / n.max(1) as f64)
}

/// `xi = lambda_K(A Sigma_Z A^T) / ||Sigma_W||_op`.
pub fn snr(theta: &FactorModelParams) -> Result<f64> {
    let noise = theta.sigma_w.op_norm();
    if noise <= 0.0 {
        return Err(Error::InfiniteSnr);
    }
    let lambda_k = theta.signal_eigenvalues().last().copied().unwrap_or(0.0).max(0.0);
    Ok(lambda_k / noise)
}

/// `r_e(Sigma_W) = tr(Sigma_W) / ||Sigma_W||_op`.
pub fn effective_rank(sigma_w: &NoiseCovariance) -> Result<f64> {
    let op = sigma_w.op_norm();
    if op <= 0.0 {
        return Err(Error::ZeroMatrix("Sigma_W"));
    }
    Ok(sigma_w.trace() / op)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pure_theta() -> FactorModelParams {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        FactorModelParams {
            k: 2,
            a,
            beta: DVector::from_vec(vec![1.0, -1.0]),
            sigma_z: DMatrix::identity(2, 2),
            sigma_w: NoiseCovariance::identity(4),
            sigma_sq: 1.0,
        }
    }

    #[test]
    fn identity_loadings_valid_and_er() {
        let report = validate_params(&pure_theta()).unwrap();
        assert!(report.is_valid(), "{:?}", report.violations);
        assert!(report.er.all());
    }

    #[test]
    fn rank_deficient_sigma_z_flagged() {
        let mut theta = pure_theta();
        theta.sigma_z = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let report = validate_params(&theta).unwrap();
        assert!(report.violations.iter().any(|v| matches!(v, Violation::RankSigmaZ { rank: 1 })));
        assert!(report.violations.iter().any(|v| v.to_string() == "rank(Σ_Z) < K (rank 1)"));
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let mut theta = pure_theta();
        theta.beta = DVector::zeros(3);
        assert!(matches!(validate_params(&theta), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn mixed_row_breaks_l1_assumption() {
        let mut theta = pure_theta();
        theta.a[(0, 1)] = 0.5;
        let report = validate_params(&theta).unwrap();
        assert!(!report.er.row_l1_bounded);
        assert!(!report.er.two_pure_per_factor);
    }

    #[test]
    fn latent_covariance_diagonal_and_signs() {
        let s = latent_covariance(5);
        let want = [2.5, 2.625, 2.75, 2.875, 3.0];
        for (i, w) in want.iter().enumerate() {
            assert!((s[(i, i)] - w).abs() < 1e-15);
        }
        assert!((s[(0, 1)] + 2.5 * 0.3).abs() < 1e-15);
        assert!((s[(1, 3)] - 2.625 * 0.09).abs() < 1e-15);
        assert_eq!(latent_covariance(1), DMatrix::from_element(1, 1, 2.5));
    }

    #[test]
    fn frm_rejects_large_k() {
        let d = FrmDesign { n: 10, p: 20, k: 10, loading_scale: 1.0 };
        assert!(generate_frm(&d, 1).is_err());
    }

    #[test]
    fn er_small_k_uses_two_element_supports() {
        let d = ErDesign { k: 3, m: 2, p: 20, n: 10 };
        let (theta, _) = generate_er(&d, 1).unwrap();
        for j in 6..20 {
            let row = theta.a.row(j);
            assert_eq!(row.iter().filter(|v| **v != 0.0).count(), 2);
            assert!(row.iter().map(|v| v.abs()).sum::<f64>() <= 1.0 + 1e-12);
        }
        assert!(generate_er(&ErDesign { k: 1, m: 2, p: 20, n: 10 }, 1).is_err());
    }

    #[test]
    fn all_pure_er_design() {
        let d = ErDesign { k: 2, m: 3, p: 6, n: 100 };
        let (theta, data) = generate_er(&d, 4).unwrap();
        let want = DMatrix::from_fn(6, 2, |i, j| if i / 3 == j { 1.0 } else { 0.0 });
        assert_eq!(theta.a, want);
        assert_eq!(data.x.shape(), (100, 6));
    }

    #[test]
    fn noise_level_examples() {
        assert!((noise_level(&NoiseCovariance::identity(7), 7, 1.0) - 2.0).abs() < 1e-15);
        let d = NoiseCovariance::Diagonal(DVector::from_vec(vec![2.0, 1.0]));
        assert!((noise_level(&d, 1, 1.0) - 5.0).abs() < 1e-15);
        assert_eq!(noise_level(&NoiseCovariance::zeros(3), 3, 1.0), 0.0);
    }

    #[test]
    fn snr_examples() {
        let mut a = DMatrix::zeros(5, 2);
        a[(0, 0)] = 1.0;
        a[(1, 1)] = 1.0;
        let mut theta = FactorModelParams {
            k: 2,
            a,
            beta: DVector::from_vec(vec![1.0, 1.0]),
            sigma_z: DMatrix::identity(2, 2),
            sigma_w: NoiseCovariance::identity(5),
            sigma_sq: 1.0,
        };
        assert!((snr(&theta).unwrap() - 1.0).abs() < 1e-12);
        theta.a *= 2.0;
        assert!((snr(&theta).unwrap() - 4.0).abs() < 1e-12);
        theta.sigma_w = NoiseCovariance::zeros(5);
        assert_eq!(snr(&theta), Err(Error::InfiniteSnr));
    }

    #[test]
    fn effective_rank_examples() {
        assert!((effective_rank(&NoiseCovariance::identity(9)).unwrap() - 9.0).abs() < 1e-12);
        let mut d = DVector::zeros(6);
        d[0] = 1.0;
        assert!((effective_rank(&NoiseCovariance::Diagonal(d)).unwrap() - 1.0).abs() < 1e-12);
        let dense = NoiseCovariance::Dense(DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]));
        assert!((effective_rank(&dense).unwrap() - 4.0 / 3.0).abs() < 1e-12);
        assert!(effective_rank(&NoiseCovariance::zeros(2)).is_err());
    }
}
