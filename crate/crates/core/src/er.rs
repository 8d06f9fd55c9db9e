//! Essential Regression: pure-variable detection, loading estimation and the
//! resulting projected predictor.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp;
use crate::model::Dataset;
use crate::predictors::{self, LinearPredictor, Method};

pub const DEFAULT_DELTA_SCALE: f64 = 3.5;
pub const DEFAULT_MU_SCALE: f64 = 0.5;

/// Disjoint groups of estimated pure variables, each sorted ascending.
pub type Partition = Vec<Vec<usize>>;

#[derive(Debug, Clone, PartialEq)]
pub struct ERFit {
    pub partition: Partition,
    pub k_hat: usize,
    pub sigma_z_hat: DMatrix<f64>,
    pub a_hat: DMatrix<f64>,
    pub delta: f64,
    pub mu: f64,
    /// Rows `j` whose Dantzig program was infeasible and were set to zero.
    pub lp_failures: Vec<usize>,
}

impl ERFit {
    pub fn pure_indices(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.partition.iter().flatten().copied().collect();
        all.sort_unstable();
        all
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErConfig {
    /// `delta = delta_scale * sqrt(log(max(p, n)) / n)` unless `delta` is set.
    pub delta_scale: f64,
    pub mu_scale: f64,
    pub delta: Option<f64>,
    pub mu: Option<f64>,
    /// Center the columns of `X` before forming the second-moment matrix.
    pub center: bool,
}

impl Default for ErConfig {
    fn default() -> Self {
        ErConfig { delta_scale: DEFAULT_DELTA_SCALE, mu_scale: DEFAULT_MU_SCALE, delta: None, mu: None, center: false }
    }
}

impl ErConfig {
    fn rate(n: usize, p: usize) -> f64 {
        ((n.max(p) as f64).ln() / n as f64).sqrt()
    }

    pub fn resolve_delta(&self, n: usize, p: usize) -> f64 {
        self.delta.unwrap_or(self.delta_scale * Self::rate(n, p))
    }

    pub fn resolve_mu(&self, n: usize, p: usize) -> f64 {
        self.mu.unwrap_or(self.mu_scale * Self::rate(n, p))
    }
}

/// `X^T X / n`, optionally after centering the columns.
pub fn second_moment(x: &DMatrix<f64>, center: bool) -> DMatrix<f64> {
    let n = x.nrows().max(1) as f64;
    if center {
        let means = x.row_mean();
        let xc = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - means[j]);
        xc.tr_mul(&xc) / n
    } else {
        x.tr_mul(x) / n
    }
}

/// Pure-variable partition by thresholded row maxima of `|sigma_hat|`.
///
/// For each `i`, the candidate set collects every `l != i` whose `|S_il|`
/// is within `2 delta` of the row maximum. `i` is kept when each candidate
/// `j` attains its own row maximum up to `2 delta`. Kept sets are merged in
/// order: a set replaces the first existing group it overlaps by the
/// intersection, otherwise it is appended.
pub fn pure_var(sigma_hat: &DMatrix<f64>, delta: f64) -> Result<Partition> {
    let p = sigma_hat.nrows();
    if sigma_hat.ncols() != p {
        return Err(Error::DimensionMismatch(format!("sigma_hat is {}x{}", p, sigma_hat.ncols())));
    }
    if !(delta >= 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be non-negative, got {delta}")));
    }
    let abs = sigma_hat.map(f64::abs);
    let row_max: Vec<f64> = (0..p)
        .map(|i| (0..p).filter(|&j| j != i).map(|j| abs[(i, j)]).fold(f64::NEG_INFINITY, f64::max))
        .collect();

    let mut groups: Partition = Vec::new();
    for i in 0..p {
        let mut cand: Vec<usize> = (0..p).filter(|&l| l != i && row_max[i] <= abs[(i, l)] + 2.0 * delta).collect();
        let pure = cand.iter().all(|&j| (abs[(i, j)] - row_max[j]).abs() <= 2.0 * delta);
        if !pure {
            continue;
        }
        cand.push(i);
        cand.sort_unstable();
        merge(cand, &mut groups);
    }
    Ok(groups)
}

fn merge(set: Vec<usize>, groups: &mut Partition) {
    for g in groups.iter_mut() {
        if g.iter().any(|v| set.binary_search(v).is_ok()) {
            g.retain(|v| set.binary_search(v).is_ok());
            return;
        }
    }
    groups.push(set);
}

/// Rows of `A_hat` for the pure variables: `p x K_hat`, zero outside the partition.
///
/// Within group `k` the smallest index is the anchor and receives `e_k`;
/// every other member `j` receives `sign(S_anchor,j) e_k`.
pub fn build_a_pure(sigma_hat: &DMatrix<f64>, partition: &Partition) -> Result<DMatrix<f64>> {
    let p = sigma_hat.nrows();
    if partition.is_empty() {
        return Err(Error::NoPureVariables { delta: f64::NAN });
    }
    let mut a = DMatrix::zeros(p, partition.len());
    for (k, group) in partition.iter().enumerate() {
        if group.len() < 2 {
            return Err(Error::GroupTooSmall { group: k, size: group.len() });
        }
        let anchor = *group.iter().min().expect("non-empty group");
        if anchor >= p {
            return Err(Error::DimensionMismatch(format!("index {anchor} out of range for p = {p}")));
        }
        a[(anchor, k)] = 1.0;
        for &j in group.iter().filter(|&&j| j != anchor) {
            let s = sigma_hat[(anchor, j)];
            if s == 0.0 || !s.is_finite() {
                return Err(Error::AmbiguousSign { anchor, index: j });
            }
            a[(j, k)] = s.signum();
        }
    }
    Ok(a)
}

/// Latent covariance from within- and between-group averages of `sigma_hat`.
pub fn estimate_sigma_z(sigma_hat: &DMatrix<f64>, partition: &Partition, a_pure: &DMatrix<f64>) -> DMatrix<f64> {
    let k = partition.len();
    let mut out = DMatrix::zeros(k, k);
    for (a, ga) in partition.iter().enumerate() {
        let mut sum = 0.0;
        let mut count = 0usize;
        for &i in ga {
            for &j in ga.iter().filter(|&&j| j != i) {
                sum += sigma_hat[(i, j)].abs();
                count += 1;
            }
        }
        out[(a, a)] = if count == 0 { 0.0 } else { sum / count as f64 };
        for (b, gb) in partition.iter().enumerate().skip(a + 1) {
            let mut s = 0.0;
            for &i in ga {
                for &j in gb {
                    s += a_pure[(i, a)] * a_pure[(j, b)] * sigma_hat[(i, j)];
                }
            }
            let v = s / (ga.len() * gb.len()) as f64;
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    out
}

/// `b_j = (A_I^T A_I)^{-1} A_I^T S_{I,j}`: the signed group means of column `j`.
fn pure_projection(sigma_hat: &DMatrix<f64>, partition: &Partition, a_pure: &DMatrix<f64>, j: usize) -> DVector<f64> {
    DVector::from_iterator(
        partition.len(),
        partition.iter().enumerate().map(|(k, g)| {
            g.iter().map(|&i| a_pure[(i, k)] * sigma_hat[(i, j)]).sum::<f64>() / g.len() as f64
        }),
    )
}

/// Rows of `A_hat` outside the partition via per-row Dantzig programs.
///
/// Returns the `p x K_hat` matrix (zero on pure rows) and the indices whose
/// program was infeasible; those rows are left at zero.
pub fn dantzig_rows(
    sigma_z_hat: &DMatrix<f64>,
    sigma_hat: &DMatrix<f64>,
    partition: &Partition,
    a_pure: &DMatrix<f64>,
    mu: f64,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    if !(mu >= 0.0) {
        return Err(Error::InvalidParameter(format!("mu must be non-negative, got {mu}")));
    }
    let p = sigma_hat.nrows();
    let k = partition.len();
    let mut pure = vec![false; p];
    for &i in partition.iter().flatten() {
        pure[i] = true;
    }
    let rest: Vec<usize> = (0..p).filter(|&j| !pure[j]).collect();
    let solved: Vec<(usize, Result<DVector<f64>>)> = rest
        .par_iter()
        .map(|&j| {
            let b = pure_projection(sigma_hat, partition, a_pure, j);
            (j, lp::l1_min_inf_constraint(sigma_z_hat, &b, mu))
        })
        .collect();
    let mut out = DMatrix::zeros(p, k);
    let mut failures = Vec::new();
    for (j, res) in solved {
        match res {
            Ok(beta) => out.row_mut(j).copy_from(&beta.transpose()),
            Err(Error::Lp(reason)) => {
                warn!("Dantzig row {j}: {reason}; row set to zero");
                failures.push(j);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((out, failures))
}

/// Runs the full pipeline on `data` and returns the fit together with the
/// projected predictor on the columns of `A_hat`.
pub fn fit_er(data: &Dataset, config: &ErConfig) -> Result<(ERFit, LinearPredictor)> {
    let (n, p) = (data.n(), data.p());
    if n < 2 {
        return Err(Error::InvalidParameter(format!("ER needs at least 2 samples, got {n}")));
    }
    let delta = config.resolve_delta(n, p);
    let mu = config.resolve_mu(n, p);
    let sigma_hat = second_moment(&data.x, config.center);
    let partition = pure_var(&sigma_hat, delta)?;
    if partition.is_empty() {
        return Err(Error::NoPureVariables { delta });
    }
    let a_pure = build_a_pure(&sigma_hat, &partition)?;
    let sigma_z_hat = estimate_sigma_z(&sigma_hat, &partition, &a_pure);
    let (a_rest, lp_failures) = dantzig_rows(&sigma_z_hat, &sigma_hat, &partition, &a_pure, mu)?;
    let a_hat = a_pure + a_rest;
    let fitted = predictors::fit_projected(data, &a_hat)?;
    let k_hat = partition.len();
    let pred = LinearPredictor::new(fitted.alpha, Method::Er, Some(k_hat))?;
    let fit = ERFit { partition, k_hat, sigma_z_hat, a_hat, delta, mu, lp_failures };
    Ok((fit, pred))
}

/// `||A_hat P - A||_F` minimised greedily over signed column matchings `P`.
///
/// Columns are paired by largest absolute inner product; unmatched columns
/// on either side count in full.
pub fn loading_error(a_hat: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<f64> {
    if a_hat.nrows() != a.nrows() {
        return Err(Error::DimensionMismatch(format!("{} vs {} rows", a_hat.nrows(), a.nrows())));
    }
    let (kh, k) = (a_hat.ncols(), a.ncols());
    let gram = a_hat.tr_mul(a);
    let mut used_hat = vec![false; kh];
    let mut used = vec![false; k];
    let mut err = 0.0;
    for _ in 0..kh.min(k) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for i in (0..kh).filter(|&i| !used_hat[i]) {
            for j in (0..k).filter(|&j| !used[j]) {
                if gram[(i, j)].abs() > best.2 {
                    best = (i, j, gram[(i, j)].abs());
                }
            }
        }
        let (i, j, _) = best;
        used_hat[i] = true;
        used[j] = true;
        let sign = if gram[(i, j)] < 0.0 { -1.0 } else { 1.0 };
        err += (a_hat.column(i) * sign - a.column(j)).norm_squared();
    }
    err += (0..kh).filter(|&i| !used_hat[i]).map(|i| a_hat.column(i).norm_squared()).sum::<f64>();
    err += (0..k).filter(|&j| !used[j]).map(|j| a.column(j).norm_squared()).sum::<f64>();
    Ok(err.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Population covariance of `X = A Z` with `A = I_2 (x) 1_2`, `Sigma_Z = I`.
    fn two_block() -> DMatrix<f64> {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        &a * a.transpose()
    }

    #[test]
    fn two_block_partition() {
        let part = pure_var(&two_block(), 0.0).unwrap();
        assert_eq!(part, vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn huge_delta_single_group() {
        let s = two_block();
        let part = pure_var(&s, 10.0).unwrap();
        assert_eq!(part.len(), 1);
    }

    #[test]
    fn pure_rows_and_sigma_z_at_population() {
        let s = two_block();
        let part = pure_var(&s, 0.0).unwrap();
        let a = build_a_pure(&s, &part).unwrap();
        let want = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(a, want);
        assert_eq!(estimate_sigma_z(&s, &part, &a), DMatrix::identity(2, 2));
    }

    #[test]
    fn one_term_diagonal_average() {
        let s = DMatrix::from_row_slice(2, 2, &[3.0, 2.5, 2.5, 3.0]);
        let part = vec![vec![0, 1]];
        let a = build_a_pure(&s, &part).unwrap();
        assert_eq!(estimate_sigma_z(&s, &part, &a)[(0, 0)], 2.5);
    }

    #[test]
    fn negative_member_gets_negative_sign() {
        let mut s = two_block();
        for j in 0..4 {
            if j != 1 {
                s[(1, j)] = -s[(1, j)];
                s[(j, 1)] = -s[(j, 1)];
            }
        }
        let part = pure_var(&s, 0.0).unwrap();
        let a = build_a_pure(&s, &part).unwrap();
        assert_eq!(a[(1, 0)], -1.0);
        assert_eq!(estimate_sigma_z(&s, &part, &a), DMatrix::identity(2, 2));
    }

    #[test]
    fn size_one_group_and_zero_sign_error() {
        let s = two_block();
        assert!(matches!(build_a_pure(&s, &vec![vec![0]]), Err(Error::GroupTooSmall { group: 0, size: 1 })));
        let mut z = s.clone();
        z[(0, 1)] = 0.0;
        z[(1, 0)] = 0.0;
        assert!(matches!(build_a_pure(&z, &vec![vec![0, 1]]), Err(Error::AmbiguousSign { anchor: 0, index: 1 })));
    }

    #[test]
    fn merge_intersects_first_overlap() {
        let mut groups = vec![vec![0, 1, 2], vec![5, 6]];
        merge(vec![1, 2, 6], &mut groups);
        assert_eq!(groups, vec![vec![1, 2], vec![5, 6]]);
        merge(vec![8, 9], &mut groups);
        assert_eq!(groups.len(), 3);
    }

    #[test]
    fn dantzig_rows_recover_mixed_loading() {
        // Two pure pairs plus a mixed row 0.5 z1 - 0.25 z2, no noise.
        let a = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.5, -0.25]);
        let s = &a * a.transpose();
        let part = pure_var(&s, 0.0).unwrap();
        assert_eq!(part, vec![vec![0, 1], vec![2, 3]]);
        let ap = build_a_pure(&s, &part).unwrap();
        let sz = estimate_sigma_z(&s, &part, &ap);
        let (rest, fails) = dantzig_rows(&sz, &s, &part, &ap, 0.0).unwrap();
        assert!(fails.is_empty());
        assert!((rest[(4, 0)] - 0.5).abs() < 1e-10 && (rest[(4, 1)] + 0.25).abs() < 1e-10);
    }

    #[test]
    fn loading_error_ignores_sign_and_order() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.5, 0.5]);
        let mut flipped = DMatrix::zeros(3, 2);
        flipped.set_column(0, &(-a.column(1)));
        flipped.set_column(1, &a.column(0));
        assert!(loading_error(&flipped, &a).unwrap() < 1e-14);
        assert!((loading_error(&DMatrix::zeros(3, 0), &a).unwrap() - a.norm()).abs() < 1e-14);
    }

    #[test]
    fn tiny_data_never_panics() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.5, -1.0, 0.3, 2.0]);
        let d = Dataset::new(x, DVector::from_vec(vec![1.0, 0.0]), None, 0).unwrap();
        let _ = fit_er(&d, &ErConfig::default());
        let x1 = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let d1 = Dataset::new(x1, DVector::from_vec(vec![1.0]), None, 0).unwrap();
        assert!(fit_er(&d1, &ErConfig::default()).is_err());
    }
}
