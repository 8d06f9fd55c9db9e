//! Model selection by sample splitting.
//!
//! Each candidate is trained on one half of the rows and scored by its
//! squared prediction error on the other half; the lowest score wins, with
//! ties going to the earliest candidate.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::er::{self, ErConfig};
use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::predictors::{self, LinearPredictor, Method};
use crate::rng::{replication_seed, sim_rng};
use crate::spectra;

/// Training rows `d1` and validation rows `d2`, both sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub d1: Vec<usize>,
    pub d2: Vec<usize>,
    pub seed: u64,
}

impl SplitPlan {
    /// Uniformly random split with `|d1| = floor(n / 2)`.
    pub fn random(n: usize, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut sim_rng(seed));
        let mut d1 = idx[..n / 2].to_vec();
        let mut d2 = idx[n / 2..].to_vec();
        d1.sort_unstable();
        d2.sort_unstable();
        SplitPlan { d1, d2, seed }
    }

    /// Explicit split; `d1` and `d2` must partition `0..n` with `|d1| = floor(n / 2)`.
    pub fn new(d1: Vec<usize>, d2: Vec<usize>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for &i in d1.iter().chain(&d2) {
            if i >= n || seen[i] {
                return Err(Error::InvalidParameter(format!("index {i} is out of range or repeated")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidParameter("split does not cover every row".into()));
        }
        if d1.len() != n / 2 {
            return Err(Error::InvalidParameter(format!("|d1| = {} but n / 2 = {}", d1.len(), n / 2)));
        }
        let (mut d1, mut d2) = (d1, d2);
        d1.sort_unstable();
        d2.sort_unstable();
        Ok(SplitPlan { d1, d2, seed: 0 })
    }
}

/// A fitting procedure that can be trained on any subset of rows.
#[derive(Debug, Clone, PartialEq)]
pub enum Procedure {
    Pcr { k: usize },
    PcrPenalized { mu_scale: f64, kappa: f64 },
    /// Elbow rule with `delta_W = ||Sigma_W||_op + tr(Sigma_W) / n`, `n` being
    /// the number of training rows.
    PcrElbow { noise_op: f64, noise_trace: f64, c0: f64 },
    Gls,
    Er(ErConfig),
    /// A predictor fixed in advance, ignoring the training data.
    Fixed(LinearPredictor),
}

impl Procedure {
    pub fn fit(&self, data: &Dataset) -> Result<LinearPredictor> {
        match self {
            Procedure::Pcr { k } => {
                let cache = spectra::decompose(&data.x)?;
                predictors::fit_pcr(data, &cache, (*k).min(cache.rank()))
            }
            Procedure::PcrPenalized { mu_scale, kappa } => {
                let cache = spectra::decompose(&data.x)?;
                let mu = predictors::penalty_mu(data.n(), data.p(), *mu_scale);
                let sel = predictors::select_penalized(&cache, mu, *kappa)?;
                predictors::fit_pcr(data, &cache, sel.chosen.min(cache.rank()))
            }
            Procedure::PcrElbow { noise_op, noise_trace, c0 } => {
                let cache = spectra::decompose(&data.x)?;
                let delta_w = noise_op + noise_trace / data.n().max(1) as f64;
                let sel = predictors::select_elbow(&cache, delta_w, *c0)?;
                predictors::fit_pcr(data, &cache, sel.chosen)
            }
            Procedure::Gls => predictors::fit_gls(data),
            Procedure::Er(cfg) => er::fit_er(data, cfg).map(|(_, pred)| pred),
            Procedure::Fixed(pred) => {
                if pred.p() != data.p() {
                    return Err(Error::DimensionMismatch(format!("fixed predictor has length {}", pred.p())));
                }
                Ok(pred.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSelection {
    pub m_hat: usize,
    pub predictor: LinearPredictor,
    /// `+inf` for candidates that failed to train.
    pub validation_sse: Vec<f64>,
    pub failures: Vec<(usize, Error)>,
}

/// Trains every candidate on `plan.d1` and returns the one with the smallest
/// validation error on `plan.d2`, trained on `d1` only.
pub fn split_select(data: &Dataset, candidates: &[Procedure], plan: &SplitPlan) -> Result<SplitSelection> {
    split_select_with(data, candidates, plan, false)
}

/// As [`split_select`]; with `refit` the winner is retrained on all rows.
pub fn split_select_with(
    data: &Dataset,
    candidates: &[Procedure],
    plan: &SplitPlan,
    refit: bool,
) -> Result<SplitSelection> {
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("no candidates".into()));
    }
    if plan.d1.len() + plan.d2.len() != data.n() {
        return Err(Error::DimensionMismatch(format!(
            "split covers {} rows but data has {}",
            plan.d1.len() + plan.d2.len(),
            data.n()
        )));
    }
    let train = data.select_rows(&plan.d1);
    let valid = data.select_rows(&plan.d2);
    let fits: Vec<Result<LinearPredictor>> = candidates.par_iter().map(|c| c.fit(&train)).collect();

    let mut validation_sse = Vec::with_capacity(fits.len());
    let mut failures = Vec::new();
    let mut trained = Vec::with_capacity(fits.len());
    for (m, fit) in fits.into_iter().enumerate() {
        match fit {
            Ok(pred) => {
                let resid = &valid.y - &valid.x * &pred.alpha;
                validation_sse.push(resid.norm_squared());
                trained.push(Some(pred));
            }
            Err(e) => {
                failures.push((m, e));
                validation_sse.push(f64::INFINITY);
                trained.push(None);
            }
        }
    }
    let m_hat = argmin_first(&validation_sse).ok_or(Error::AllCandidatesFailed)?;
    let predictor = if refit {
        candidates[m_hat].fit(data)?
    } else {
        trained[m_hat].take().expect("winner was trained")
    };
    Ok(SplitSelection { m_hat, predictor, validation_sse, failures })
}

/// Index of the smallest finite value, first occurrence on ties.
fn argmin_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_finite() && best.is_none_or(|b| v < values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Average of the winners over `n_splits` random splits; split `i` uses seed `seed ^ i`.
pub fn multi_split(data: &Dataset, candidates: &[Procedure], n_splits: usize, seed: u64) -> Result<LinearPredictor> {
    if n_splits == 0 {
        return Err(Error::InvalidParameter("n_splits must be at least 1".into()));
    }
    let mut sum = DVector::zeros(data.p());
    for i in 0..n_splits {
        let plan = SplitPlan::random(data.n(), replication_seed(seed, i as u64));
        sum += split_select(data, candidates, &plan)?.predictor.alpha;
    }
    LinearPredictor::new(sum / n_splits as f64, Method::Averaged, None)
}
