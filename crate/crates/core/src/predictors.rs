//! Linear predictors: projected fits, PCR with rank selection, GLS, and the
//! population best linear predictor.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Dataset, FactorModelParams};
use crate::spectra::{self, SvdCache};

/// Default penalty scale `c` in `mu_n = c (n + p)`.
pub const DEFAULT_MU_SCALE: f64 = 2.5;
pub const DEFAULT_KAPPA: f64 = 2.0;
/// Default elbow multiplier `C_0`.
pub const DEFAULT_C0: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pcr,
    Gls,
    Er,
    Projected,
    Blp,
    /// Mean of several data-split selections.
    Averaged,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Pcr => "pcr",
            Method::Gls => "gls",
            Method::Er => "er",
            Method::Projected => "projected",
            Method::Blp => "blp",
            Method::Averaged => "averaged",
        };
        f.write_str(s)
    }
}

/// Coefficient vector `alpha` of a linear rule `x -> x^T alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor {
    pub alpha: DVector<f64>,
    pub method: Method,
    pub selected_rank: Option<usize>,
}

impl LinearPredictor {
    pub fn new(alpha: DVector<f64>, method: Method, selected_rank: Option<usize>) -> Result<Self> {
        if !linalg::all_finite(alpha.iter()) {
            return Err(Error::NonFinite("alpha"));
        }
        Ok(LinearPredictor { alpha, method, selected_rank })
    }

    pub fn zero(p: usize, method: Method) -> Self {
        LinearPredictor { alpha: DVector::zeros(p), method, selected_rank: Some(0) }
    }

    pub fn p(&self) -> usize {
        self.alpha.len()
    }
}

/// `alpha = B (B^T X^T X B)^+ B^T X^T Y`, evaluated as `B (X B)^+ Y`.
pub fn fit_projected(data: &Dataset, b: &DMatrix<f64>) -> Result<LinearPredictor> {
    if b.nrows() != data.p() {
        return Err(Error::DimensionMismatch(format!(
            "B has {} rows but X has {} columns",
            b.nrows(),
            data.p()
        )));
    }
    if b.ncols() == 0 || b.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroMatrix("B"));
    }
    let xb = &data.x * b;
    let gamma = linalg::pinv_solve(&xb, &data.y);
    LinearPredictor::new(b * gamma, Method::Projected, None)
}

/// PCR on the top `k` principal directions: `alpha = U_k (X U_k)^+ Y`.
pub fn fit_pcr(data: &Dataset, cache: &SvdCache, k: usize) -> Result<LinearPredictor> {
    check_cache(data, cache)?;
    if k > cache.rank() {
        return Err(Error::RankOutOfRange { requested: k, max: cache.rank() });
    }
    let alpha = spectra::pcr_coefficients(cache, &data.y, k);
    LinearPredictor::new(alpha, Method::Pcr, Some(k))
}

fn check_cache(data: &Dataset, cache: &SvdCache) -> Result<()> {
    if cache.n != data.n() || cache.p() != data.p() {
        return Err(Error::DimensionMismatch(format!(
            "SVD cache is {}x{} but data is {}x{}",
            cache.n,
            cache.p(),
            data.n(),
            data.p()
        )));
    }
    Ok(())
}

/// Minimum-norm least squares `alpha = X^+ Y`.
pub fn fit_gls(data: &Dataset) -> Result<LinearPredictor> {
    let cache = spectra::decompose(&data.x)?;
    fit_gls_cached(data, &cache)
}

pub fn fit_gls_cached(data: &Dataset, cache: &SvdCache) -> Result<LinearPredictor> {
    check_cache(data, cache)?;
    let r = cache.rank();
    let alpha = spectra::pcr_coefficients(cache, &data.y, r);
    LinearPredictor::new(alpha, Method::Gls, Some(r))
}

pub fn predict(pred: &LinearPredictor, x_new: &DMatrix<f64>) -> Result<DVector<f64>> {
    if x_new.ncols() != pred.p() {
        return Err(Error::DimensionMismatch(format!(
            "x_new has {} columns but the predictor has {} coefficients",
            x_new.ncols(),
            pred.p()
        )));
    }
    Ok(x_new * &pred.alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    Elbow,
    Penalized,
}

/// Outcome of a rank selector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankSelection {
    pub chosen: usize,
    /// `lambda_hat_k` (elbow) or `v_hat_k^2` for `k = 0..=k_bar` (penalized).
    pub criterion_values: Vec<f64>,
    pub rule: SelectionRule,
    pub threshold: Option<f64>,
    pub mu_n: Option<f64>,
    pub k_bar: Option<usize>,
    /// Penalized rule only: the count `#{k : s_k^2 > mu_n v_hat_k^2}`.
    pub closed_form: Option<usize>,
}

impl RankSelection {
    pub fn closed_form_agrees(&self) -> bool {
        self.closed_form.is_none_or(|c| c == self.chosen)
    }
}

/// Elbow rule: the largest `k` with `lambda_hat_k >= c0 * delta_w`
/// (`lambda_hat_0 = inf`, so the answer is 0 when nothing clears the bar).
pub fn select_elbow(cache: &SvdCache, delta_w: f64, c0: f64) -> Result<RankSelection> {
    if !(delta_w >= 0.0) {
        return Err(Error::InvalidParameter(format!("delta_W must be non-negative, got {delta_w}")));
    }
    if !(c0 > 1.0) {
        return Err(Error::InvalidParameter(format!("C0 must exceed 1, got {c0}")));
    }
    let threshold = c0 * delta_w;
    let chosen = (1..=cache.rank())
        .take_while(|&k| cache.lambda(k) >= threshold)
        .last()
        .unwrap_or(0);
    Ok(RankSelection {
        chosen,
        criterion_values: cache.lambda_hat.clone(),
        rule: SelectionRule::Elbow,
        threshold: Some(threshold),
        mu_n: None,
        k_bar: None,
        closed_form: None,
    })
}

/// `mu_n = scale * (n + p)`.
pub fn penalty_mu(n: usize, p: usize, scale: f64) -> f64 {
    scale * (n + p) as f64
}

/// Penalized rank selection:
///
/// ```text
/// s_tilde = argmin_{0 <= k <= k_bar} ||X - X_(k)||_F^2 / (n p - mu_n k),
/// k_bar   = min(floor(kappa / (1 + kappa) * n p / mu_n), n, p)
/// ```
///
/// Ties go to the smallest `k`. The equivalent count
/// `#{k <= k_bar : s_k^2 > mu_n v_hat_k^2}` is recorded alongside; the two
/// agree because `s_k^2 (np - mu_n k) - mu_n ||X - X_(k)||^2` is
/// non-increasing in `k`.
pub fn select_penalized(cache: &SvdCache, mu_n: f64, kappa: f64) -> Result<RankSelection> {
    if !(mu_n > 0.0 && mu_n.is_finite()) {
        return Err(Error::InvalidParameter(format!("mu_n must be positive, got {mu_n}")));
    }
    if !(kappa > 1.0) {
        return Err(Error::InvalidParameter(format!("kappa must exceed 1, got {kappa}")));
    }
    let (n, p) = (cache.n, cache.p());
    let np = (n * p) as f64;
    let raw = (kappa / (1.0 + kappa) * np / mu_n).floor();
    if !(raw >= 0.0) {
        return Err(Error::InvalidParameter(format!("mu_n = {mu_n} leaves no admissible rank")));
    }
    let k_bar = (raw as usize).min(n).min(p);
    let residuals = cache.residual_profile();
    let residual = |k: usize| residuals.get(k).copied().unwrap_or(0.0);

    let criterion_values: Vec<f64> = (0..=k_bar).map(|k| residual(k) / (np - mu_n * k as f64)).collect();
    let mut chosen = 0;
    for (k, &v) in criterion_values.iter().enumerate() {
        if v < criterion_values[chosen] {
            chosen = k;
        }
    }
    let closed_form = (1..=k_bar)
        .filter(|&k| {
            let s = cache.s.get(k - 1).copied().unwrap_or(0.0);
            s * s > mu_n * criterion_values[k]
        })
        .count();
    Ok(RankSelection {
        chosen,
        criterion_values,
        rule: SelectionRule::Penalized,
        threshold: None,
        mu_n: Some(mu_n),
        k_bar: Some(k_bar),
        closed_form: Some(closed_form),
    })
}

/// Best linear predictor `alpha* = Cov(X)^+ Cov(X, Y)`.
///
/// Uses the Woodbury form `Sigma_W^{-1} A (Sigma_Z^{-1} + A^T Sigma_W^{-1} A)^{-1} beta`
/// when `Sigma_W` and `Sigma_Z` are invertible, which never forms a `p x p`
/// matrix; otherwise falls back to [`blp_pseudoinverse`].
pub fn blp(theta: &FactorModelParams) -> Result<LinearPredictor> {
    match blp_woodbury(theta) {
        Some(alpha) => LinearPredictor::new(alpha, Method::Blp, Some(theta.k)),
        None => blp_pseudoinverse(theta),
    }
}

/// Direct route: pseudoinverse of the dense `p x p` covariance.
pub fn blp_pseudoinverse(theta: &FactorModelParams) -> Result<LinearPredictor> {
    let alpha = linalg::sym_pinv(&theta.cov_x()) * theta.cov_xy();
    LinearPredictor::new(alpha, Method::Blp, Some(theta.k))
}

pub(crate) fn blp_woodbury(theta: &FactorModelParams) -> Option<DVector<f64>> {
    let winv_a = theta.sigma_w.solve(&theta.a)?;
    let zinv = theta.sigma_z.clone().cholesky()?.inverse();
    let inner = zinv + theta.a.tr_mul(&winv_a);
    let coef = inner.cholesky()?.solve(&theta.beta);
    Some(winv_a * coef)
}
