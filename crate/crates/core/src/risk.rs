//! Excess prediction risk, oracle benchmarks and the simulation runner.

use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::er::{self, ErConfig};
use crate::error::{Error, Result};
use crate::model::{self, Dataset, ErDesign, FactorModelParams, FrmDesign};
use crate::predictors::{self, LinearPredictor};
use crate::rng::{replication_seed, sim_rng};
use crate::selection::{self, Procedure, SplitPlan};
use crate::spectra::ProjectionDiagnostics;

/// Rows per batch when drawing Monte Carlo test points.
const MC_BATCH: usize = 1024;

fn check_alpha(theta: &FactorModelParams, alpha: &DVector<f64>) -> Result<()> {
    if alpha.len() != theta.p() {
        return Err(Error::DimensionMismatch(format!(
            "alpha has length {} but p = {}",
            alpha.len(),
            theta.p()
        )));
    }
    Ok(())
}

/// `E[(X*^T alpha - Z*^T beta)^2] = d^T Sigma_Z d + alpha^T Sigma_W alpha` with `d = A^T alpha - beta`.
pub fn exact_excess_risk(theta: &FactorModelParams, alpha: &DVector<f64>) -> Result<f64> {
    check_alpha(theta, alpha)?;
    let d = theta.a.tr_mul(alpha) - &theta.beta;
    Ok(d.dot(&(&theta.sigma_z * &d)) + theta.sigma_w.quad_form(alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McRisk {
    pub estimate: f64,
    pub std_error: f64,
}

/// Monte Carlo estimate of the excess risk from `n_mc` fresh `(Z*, W*)` draws.
pub fn mc_risk(theta: &FactorModelParams, alpha: &DVector<f64>, n_mc: usize, seed: u64) -> Result<McRisk> {
    check_alpha(theta, alpha)?;
    if n_mc < 2 {
        return Err(Error::InvalidParameter(format!("n_mc must be at least 2, got {n_mc}")));
    }
    let mut rng = sim_rng(seed);
    let mut losses = Vec::with_capacity(n_mc);
    let mut left = n_mc;
    while left > 0 {
        let m = left.min(MC_BATCH);
        let (z, w) = model::sample_latent_and_noise(theta, m, &mut rng)?;
        let pred = &z * theta.a.tr_mul(alpha) + &w * alpha;
        let truth = &z * &theta.beta;
        losses.extend((pred - truth).iter().map(|e| e * e));
        left -= m;
    }
    let mean = losses.iter().sum::<f64>() / n_mc as f64;
    let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n_mc - 1) as f64;
    Ok(McRisk { estimate: mean, std_error: (var / n_mc as f64).sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleBounds {
    pub lower: f64,
    pub exact: f64,
    pub upper: f64,
}

/// Risk of the best linear predictor and its two-sided bound:
///
/// ```text
/// upper = beta^T (A^T Sigma_W^{-1} A)^{-1} beta
/// exact = beta^T (Sigma_Z^{-1} + A^T Sigma_W^{-1} A)^{-1} beta
/// lower = xi / (1 + xi) * upper
/// ```
pub fn oracle_bounds(theta: &FactorModelParams) -> Result<OracleBounds> {
    let winv_a = theta.sigma_w.solve(&theta.a).ok_or(Error::Singular("Sigma_W"))?;
    let m = theta.a.tr_mul(&winv_a);
    let upper = m.clone().cholesky().ok_or(Error::Singular("A^T Sigma_W^{-1} A"))?.solve(&theta.beta).dot(&theta.beta);
    let zinv = theta.sigma_z.clone().cholesky().ok_or(Error::Singular("Sigma_Z"))?.inverse();
    let exact = (zinv + m).cholesky().ok_or(Error::Singular("Sigma_Z^{-1} + A^T Sigma_W^{-1} A"))?.solve(&theta.beta).dot(&theta.beta);
    let xi = model::snr(theta)?;
    Ok(OracleBounds { lower: xi / (1.0 + xi) * upper, exact, upper })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskReport {
    pub excess_risk_exact: f64,
    pub excess_risk_mc: Option<McRisk>,
    /// `None` when `Sigma_W` is singular.
    pub oracle: Option<OracleBounds>,
    pub diagnostics: Option<ProjectionDiagnostics>,
}

pub fn risk_report(
    theta: &FactorModelParams,
    pred: &LinearPredictor,
    mc: Option<(usize, u64)>,
    diagnostics: Option<ProjectionDiagnostics>,
) -> Result<RiskReport> {
    let excess_risk_exact = exact_excess_risk(theta, &pred.alpha)?;
    let excess_risk_mc = match mc {
        Some((n_mc, seed)) => Some(mc_risk(theta, &pred.alpha, n_mc, seed)?),
        None => None,
    };
    Ok(RiskReport { excess_risk_exact, excess_risk_mc, oracle: oracle_bounds(theta).ok(), diagnostics })
}

/// One cell of a simulation grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignPoint {
    Frm(FrmDesign),
    Er(ErDesign),
}

impl DesignPoint {
    pub fn label(&self) -> String {
        match self {
            DesignPoint::Frm(d) => format!("frm_n{}_p{}_k{}_a{}", d.n, d.p, d.k, d.loading_scale),
            DesignPoint::Er(d) => format!("er_n{}_p{}_k{}_m{}", d.n, d.p, d.k, d.m),
        }
    }

    pub fn generate(&self, seed: u64) -> Result<(FactorModelParams, Dataset)> {
        match self {
            DesignPoint::Frm(d) => model::generate_frm(d, seed),
            DesignPoint::Er(d) => model::generate_er(d, seed),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            DesignPoint::Frm(d) => d.n,
            DesignPoint::Er(d) => d.n,
        }
    }

    pub fn p(&self) -> usize {
        match self {
            DesignPoint::Frm(d) => d.p,
            DesignPoint::Er(d) => d.p,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            DesignPoint::Frm(d) => d.k,
            DesignPoint::Er(d) => d.k,
        }
    }
}

fn default_mu_scale() -> f64 {
    predictors::DEFAULT_MU_SCALE
}
fn default_kappa() -> f64 {
    predictors::DEFAULT_KAPPA
}
fn default_c0() -> f64 {
    predictors::DEFAULT_C0
}
fn default_delta_scale() -> f64 {
    er::DEFAULT_DELTA_SCALE
}
fn default_er_mu_scale() -> f64 {
    er::DEFAULT_MU_SCALE
}
fn default_splits() -> usize {
    1
}

/// A method evaluated by [`run_benchmark`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodSpec {
    /// PCR with the true number of factors.
    PcrK {},
    PcrFixed {
        k: usize,
    },
    PcrPenalized {
        #[serde(default = "default_mu_scale")]
        mu_scale: f64,
        #[serde(default = "default_kappa")]
        kappa: f64,
    },
    /// Elbow rule with the noise level computed from the true `Sigma_W`.
    PcrElbow {
        #[serde(default = "default_c0")]
        c0: f64,
    },
    Gls {},
    Er {
        #[serde(default = "default_delta_scale")]
        delta_scale: f64,
        #[serde(default = "default_er_mu_scale")]
        mu_scale: f64,
        #[serde(default)]
        delta: Option<f64>,
        #[serde(default)]
        mu: Option<f64>,
    },
    /// Data-splitting selection over `candidates`, averaged over `n_splits` splits.
    Ms {
        candidates: Vec<MethodSpec>,
        #[serde(default = "default_splits")]
        n_splits: usize,
        #[serde(default)]
        refit: bool,
    },
    /// The population best linear predictor.
    Blp {},
}

impl MethodSpec {
    pub fn label(&self) -> String {
        match self {
            MethodSpec::PcrK {} => "pcr_k".into(),
            MethodSpec::PcrFixed { k } => format!("pcr_{k}"),
            MethodSpec::PcrPenalized { .. } => "pcr_penalized".into(),
            MethodSpec::PcrElbow { .. } => "pcr_elbow".into(),
            MethodSpec::Gls {} => "gls".into(),
            MethodSpec::Er { .. } => "er".into(),
            MethodSpec::Ms { .. } => "ms".into(),
            MethodSpec::Blp {} => "blp".into(),
        }
    }

    pub fn er_config(&self) -> Option<ErConfig> {
        match *self {
            MethodSpec::Er { delta_scale, mu_scale, delta, mu } => {
                Some(ErConfig { delta_scale, mu_scale, delta, mu, center: false })
            }
            _ => None,
        }
    }

    /// Whether fitting needs the true parameters (`pcr_k`, `pcr_elbow`, `blp`).
    pub fn needs_theta(&self) -> bool {
        match self {
            MethodSpec::PcrK {} | MethodSpec::PcrElbow { .. } | MethodSpec::Blp {} => true,
            MethodSpec::Ms { candidates, .. } => candidates.iter().any(|c| c.needs_theta()),
            _ => false,
        }
    }

    /// The trainable procedure for this method. `ms` and `blp` have none.
    pub fn procedure(&self, theta: Option<&FactorModelParams>) -> Result<Procedure> {
        let oracle = || {
            theta.ok_or_else(|| Error::InvalidParameter(format!("{} needs the true model parameters", self.label())))
        };
        Ok(match self {
            MethodSpec::PcrK {} => Procedure::Pcr { k: oracle()?.k },
            MethodSpec::PcrFixed { k } => Procedure::Pcr { k: *k },
            MethodSpec::PcrPenalized { mu_scale, kappa } => Procedure::PcrPenalized { mu_scale: *mu_scale, kappa: *kappa },
            MethodSpec::PcrElbow { c0 } => {
                let theta = oracle()?;
                Procedure::PcrElbow { noise_op: theta.sigma_w.op_norm(), noise_trace: theta.sigma_w.trace(), c0: *c0 }
            }
            MethodSpec::Gls {} => Procedure::Gls,
            MethodSpec::Er { .. } => Procedure::Er(self.er_config().expect("er variant")),
            MethodSpec::Ms { .. } | MethodSpec::Blp {} => {
                return Err(Error::InvalidParameter(format!("{} cannot be an ms candidate", self.label())))
            }
        })
    }

    /// Fits the method on `data`. `seed` drives the random splits of `ms`.
    pub fn fit(&self, theta: Option<&FactorModelParams>, data: &Dataset, seed: u64) -> Result<LinearPredictor> {
        match self {
            MethodSpec::Blp {} => match theta {
                Some(t) => predictors::blp(t),
                None => Err(Error::InvalidParameter("blp needs the true model parameters".into())),
            },
            MethodSpec::Ms { candidates, n_splits, refit } => {
                if candidates.is_empty() {
                    return Err(Error::InvalidParameter("ms needs at least one candidate".into()));
                }
                let procs = candidates.iter().map(|c| c.procedure(theta)).collect::<Result<Vec<_>>>()?;
                if *n_splits == 1 {
                    let plan = SplitPlan::random(data.n(), seed);
                    Ok(selection::split_select_with(data, &procs, &plan, *refit)?.predictor)
                } else {
                    selection::multi_split(data, &procs, *n_splits, seed)
                }
            }
            other => other.procedure(theta)?.fit(data),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkOptions {
    /// Monte Carlo test points per fit; `0` disables the Monte Carlo column.
    pub n_mc: usize,
    /// Record wall-clock seconds per fit; off gives byte-reproducible tables.
    pub timings: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub design: String,
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub snr: Option<f64>,
    pub method: String,
    pub rep: usize,
    pub seed: u64,
    pub excess_risk: Option<f64>,
    pub mc_risk: Option<f64>,
    pub mc_std_error: Option<f64>,
    pub selected_rank: Option<usize>,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct BenchmarkTable {
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkTable {
    /// Successful excess risks for one `(design, method)` cell, in rep order.
    pub fn risks(&self, design: &str, method: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.design == design && r.method == method)
            .filter_map(|r| r.excess_risk)
            .collect()
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut keys: Vec<(String, String)> = Vec::new();
        for r in &self.rows {
            let key = (r.design.clone(), r.method.clone());
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        keys.into_iter()
            .map(|(design, method)| {
                let row = self.rows.iter().find(|r| r.design == design && r.method == method).expect("key from rows");
                let (n, p, k) = (row.n, row.p, row.k);
                let mut risks = self.risks(&design, &method);
                let failures = self.rows.iter().filter(|r| r.design == design && r.method == method).count() - risks.len();
                risks.sort_by(f64::total_cmp);
                let q = |t: f64| quantile_sorted(&risks, t);
                SummaryRow {
                    design,
                    n,
                    p,
                    k,
                    method,
                    reps: risks.len(),
                    failures,
                    median: q(0.5),
                    q1: q(0.25),
                    q3: q(0.75),
                    iqr: match (q(0.25), q(0.75)) {
                        (Some(a), Some(b)) => Some(b - a),
                        _ => None,
                    },
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub design: String,
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub method: String,
    pub reps: usize,
    pub failures: usize,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
    pub iqr: Option<f64>,
}

/// Linear-interpolation quantile of sorted data (`h = (n - 1) t`).
pub fn quantile_sorted(sorted: &[f64], t: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * t;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// Runs every method on `reps` fresh draws of every design point.
///
/// Replication `r` uses seed `seed ^ r` at every design point, so design
/// points are compared on common random numbers. Rows are ordered by design,
/// then replication, then method regardless of scheduling. Failures are
/// recorded in the `error` column and the run continues.
pub fn run_benchmark(
    designs: &[DesignPoint],
    methods: &[MethodSpec],
    reps: usize,
    seed: u64,
    options: BenchmarkOptions,
) -> Result<BenchmarkTable> {
    if reps == 0 {
        return Err(Error::InvalidParameter("reps must be at least 1".into()));
    }
    if methods.is_empty() {
        return Err(Error::InvalidParameter("no methods".into()));
    }
    let cells: Vec<(usize, usize)> = (0..designs.len()).flat_map(|d| (0..reps).map(move |r| (d, r))).collect();
    let rows: Vec<Vec<BenchmarkRow>> =
        cells.par_iter().map(|&(d, r)| run_cell(&designs[d], methods, r, replication_seed(seed, r as u64), options)).collect();
    Ok(BenchmarkTable { rows: rows.into_iter().flatten().collect() })
}

fn run_cell(design: &DesignPoint, methods: &[MethodSpec], rep: usize, seed: u64, options: BenchmarkOptions) -> Vec<BenchmarkRow> {
    let base = BenchmarkRow {
        design: design.label(),
        n: design.n(),
        p: design.p(),
        k: design.k(),
        snr: None,
        method: String::new(),
        rep,
        seed,
        excess_risk: None,
        mc_risk: None,
        mc_std_error: None,
        selected_rank: None,
        seconds: 0.0,
        error: None,
    };
    let (theta, data) = match design.generate(seed) {
        Ok(v) => v,
        Err(e) => {
            return methods
                .iter()
                .map(|m| BenchmarkRow { method: m.label(), error: Some(format!("generation failed: {e}")), ..base.clone() })
                .collect();
        }
    };
    let snr = model::snr(&theta).ok();
    methods
        .iter()
        .map(|m| {
            let start = Instant::now();
            let fitted = m.fit(Some(&theta), &data, seed);
            let seconds = if options.timings { start.elapsed().as_secs_f64() } else { 0.0 };
            let mut row = BenchmarkRow { method: m.label(), snr, seconds, ..base.clone() };
            let evaluated = fitted.and_then(|pred| {
                let risk = exact_excess_risk(&theta, &pred.alpha)?;
                let mc = if options.n_mc >= 2 { Some(mc_risk(&theta, &pred.alpha, options.n_mc, seed)?) } else { None };
                Ok((pred, risk, mc))
            });
            match evaluated {
                Ok((pred, risk, mc)) => {
                    row.excess_risk = Some(risk);
                    row.selected_rank = pred.selected_rank;
                    row.mc_risk = mc.map(|m| m.estimate);
                    row.mc_std_error = mc.map(|m| m.std_error);
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect()
}
