//! The four subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use factorpred::er;
use factorpred::model::{Dataset, FrmDesign};
use factorpred::risk::{self, BenchmarkOptions, BenchmarkRow, BenchmarkTable, DesignPoint, MethodSpec, SummaryRow};
use factorpred::spectra::{self, ProjectionDiagnostics};
use serde::{Deserialize, Serialize};

use crate::config::{Command, PlotAxis, RunConfig, SCHEMA_VERSION};
use crate::io::{self, OutputSet, ThetaFile};
use crate::svg::{Chart, Series};

pub const DEFAULT_DESIGN: DesignPoint = DesignPoint::Frm(FrmDesign { n: 300, p: 500, k: 5, loading_scale: 1.0 });

/// Resolved invocation: the config with command-line overrides applied.
pub struct Invocation {
    pub command: Command,
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Invocation {
    pub fn new(command: Command, mut config: RunConfig, out: Option<PathBuf>, seed: Option<u64>) -> Result<Self> {
        config.check_command(command)?;
        if let Some(s) = seed {
            config.seed = s;
        }
        let out = match out.or_else(|| config.out.clone()) {
            Some(o) => o,
            None => bail!("no output directory: pass --out or set \"out\" in the config"),
        };
        Ok(Invocation { command, config, out })
    }

    pub fn run(&self) -> Result<Vec<String>> {
        let hash = self.config.hash();
        let files = match self.command {
            Command::Simulate => simulate(&self.config, &hash)?,
            Command::Fit => fit(&self.config, &hash)?,
            Command::Benchmark => benchmark(&self.config, &hash)?,
            Command::Report => report(&self.config, &hash, &self.out)?,
        };
        files.write(&self.out, self.command.name(), &hash, self.config.seed)
    }
}

fn simulate(cfg: &RunConfig, hash: &str) -> Result<OutputSet> {
    let design = cfg.design.unwrap_or(DEFAULT_DESIGN);
    let (theta, data) = design.generate(cfg.seed).context("generating data")?;
    let mut out = OutputSet::new();
    out.add("X.csv", io::matrix_csv(&data.x, &io::prefixed_header("p", data.p()))?);
    out.add("Y.csv", io::matrix_csv(&nalgebra::DMatrix::from_column_slice(data.n(), 1, data.y.as_slice()), &["y".into()])?);
    if cfg.write_latent {
        if let Some(z) = &data.z {
            out.add("Z.csv", io::matrix_csv(z, &io::prefixed_header("z", z.ncols()))?);
        }
    }
    out.add_json("theta.json", &ThetaFile::from_params(&theta, Some(design), hash, cfg.seed))?;
    log::info!("simulated {} with n = {}, p = {}", design.label(), data.n(), data.p());
    Ok(out)
}

#[derive(Debug, Serialize)]
struct FitRecord {
    column: String,
    spec: MethodSpec,
    selected_rank: Option<usize>,
    /// Estimated number of factors, for `er`.
    k_hat: Option<usize>,
    pure_variables: Option<Vec<usize>>,
    lp_failures: Option<usize>,
    diagnostics: Option<ProjectionDiagnostics>,
    train_residual_max_abs: f64,
    excess_risk: Option<f64>,
}

#[derive(Debug, Serialize)]
struct FitMeta {
    schema_version: u32,
    config_hash: String,
    seed: u64,
    n: usize,
    p: usize,
    methods: Vec<FitRecord>,
    oracle: Option<risk::OracleBounds>,
}

fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    let (Some(xp), Some(yp)) = (&cfg.x, &cfg.y) else { bail!("fit needs \"x\" and \"y\" paths in the config") };
    let (_, x) = io::read_matrix_csv(xp)?;
    let y = io::read_vector_csv(yp)?;
    if x.nrows() != y.len() {
        bail!("{} has {} rows but {} has {}", xp.display(), x.nrows(), yp.display(), y.len());
    }
    Ok(Dataset::new(x, y, None, cfg.seed)?)
}

fn unique_columns(methods: &[MethodSpec]) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    methods
        .iter()
        .map(|m| {
            let label = m.label();
            let c = seen.entry(label.clone()).or_insert(0);
            *c += 1;
            if *c == 1 {
                label
            } else {
                format!("{label}_{c}")
            }
        })
        .collect()
}

fn fit(cfg: &RunConfig, hash: &str) -> Result<OutputSet> {
    if cfg.methods.is_empty() {
        bail!("no methods");
    }
    let data = load_data(cfg)?;
    let theta = match &cfg.theta {
        Some(path) => {
            let t = ThetaFile::load(path)?.to_params()?;
            if t.p() != data.p() {
                bail!("{} has p = {} but X has {} columns", path.display(), t.p(), data.p());
            }
            Some(t)
        }
        None => None,
    };
    let cache = spectra::decompose(&data.x)?;
    let columns = unique_columns(&cfg.methods);
    let mut alphas = nalgebra::DMatrix::zeros(data.p(), cfg.methods.len());
    let mut records = Vec::new();
    for (j, (spec, column)) in cfg.methods.iter().zip(&columns).enumerate() {
        let mut rec = FitRecord {
            column: column.clone(),
            spec: spec.clone(),
            selected_rank: None,
            k_hat: None,
            pure_variables: None,
            lp_failures: None,
            diagnostics: None,
            train_residual_max_abs: 0.0,
            excess_risk: None,
        };
        let pred = if let Some(er_cfg) = spec.er_config() {
            let (erfit, pred) = er::fit_er(&data, &er_cfg).with_context(|| format!("fitting {column}"))?;
            rec.k_hat = Some(erfit.k_hat);
            rec.pure_variables = Some(erfit.pure_indices());
            rec.lp_failures = Some(erfit.lp_failures.len());
            rec.diagnostics = Some(spectra::diagnostics(&data.x, &erfit.a_hat)?);
            pred
        } else {
            let pred = spec.fit(theta.as_ref(), &data, cfg.seed).with_context(|| format!("fitting {column}"))?;
            rec.diagnostics = match spec {
                MethodSpec::Gls {} => Some(cache.pcr_diagnostics(cache.rank())),
                MethodSpec::PcrK {} | MethodSpec::PcrFixed { .. } | MethodSpec::PcrPenalized { .. } | MethodSpec::PcrElbow { .. } => {
                    pred.selected_rank.map(|k| cache.pcr_diagnostics(k))
                }
                _ => None,
            };
            pred
        };
        rec.selected_rank = pred.selected_rank;
        rec.train_residual_max_abs = (&data.y - &data.x * &pred.alpha).amax();
        if let Some(t) = &theta {
            rec.excess_risk = Some(risk::exact_excess_risk(t, &pred.alpha)?);
        }
        log::info!("{column}: selected rank {:?}, residual max-abs {:.3e}", rec.selected_rank, rec.train_residual_max_abs);
        alphas.set_column(j, &pred.alpha);
        records.push(rec);
    }
    let meta = FitMeta {
        schema_version: SCHEMA_VERSION,
        config_hash: hash.into(),
        seed: cfg.seed,
        n: data.n(),
        p: data.p(),
        methods: records,
        oracle: theta.as_ref().and_then(|t| risk::oracle_bounds(t).ok()),
    };
    let mut out = OutputSet::new();
    out.add("alpha.csv", io::matrix_csv(&alphas, &columns)?);
    out.add_json("fit_meta.json", &meta)?;
    Ok(out)
}

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema_version: u32,
    pub config_hash: String,
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
}

impl ResultRecord {
    fn from_row(row: &BenchmarkRow, hash: &str) -> Self {
        ResultRecord {
            schema_version: SCHEMA_VERSION,
            config_hash: hash.into(),
            design: row.design.clone(),
            n: row.n,
            p: row.p,
            k: row.k,
            snr: row.snr,
            method: row.method.clone(),
            rep: row.rep,
            seed: row.seed,
            excess_risk: row.excess_risk,
            mc_risk: row.mc_risk,
            mc_std_error: row.mc_std_error,
            selected_rank: row.selected_rank,
            seconds: row.seconds,
        }
    }

    fn to_row(&self) -> BenchmarkRow {
        BenchmarkRow {
            design: self.design.clone(),
            n: self.n,
            p: self.p,
            k: self.k,
            snr: self.snr,
            method: self.method.clone(),
            rep: self.rep,
            seed: self.seed,
            excess_risk: self.excess_risk,
            mc_risk: self.mc_risk,
            mc_std_error: self.mc_std_error,
            selected_rank: self.selected_rank,
            seconds: self.seconds,
            error: None,
        }
    }
}

#[derive(Debug, Serialize)]
struct ErrorRecord<'a> {
    schema_version: u32,
    config_hash: &'a str,
    design: &'a str,
    method: &'a str,
    rep: usize,
    seed: u64,
    error: &'a str,
}

#[derive(Debug, Serialize)]
struct SummaryRecord<'a> {
    schema_version: u32,
    config_hash: &'a str,
    design: &'a str,
    n: usize,
    p: usize,
    k: usize,
    method: &'a str,
    reps: usize,
    failures: usize,
    median: Option<f64>,
    q1: Option<f64>,
    q3: Option<f64>,
    iqr: Option<f64>,
}

impl<'a> SummaryRecord<'a> {
    fn new(row: &'a SummaryRow, config_hash: &'a str) -> Self {
        SummaryRecord {
            schema_version: SCHEMA_VERSION,
            config_hash,
            design: &row.design,
            n: row.n,
            p: row.p,
            k: row.k,
            method: &row.method,
            reps: row.reps,
            failures: row.failures,
            median: row.median,
            q1: row.q1,
            q3: row.q3,
            iqr: row.iqr,
        }
    }
}

fn csv_bytes<T: Serialize>(records: impl IntoIterator<Item = T>, header: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for r in records {
        w.serialize(r)?;
    }
    Ok(w.into_inner().map_err(|e| anyhow::anyhow!("flushing CSV: {e}"))?)
}

const RESULT_HEADER: [&str; 15] = [
    "schema_version",
    "config_hash",
    "design",
    "n",
    "p",
    "k",
    "snr",
    "method",
    "rep",
    "seed",
    "excess_risk",
    "mc_risk",
    "mc_std_error",
    "selected_rank",
    "seconds",
];
const SUMMARY_HEADER: [&str; 13] =
    ["schema_version", "config_hash", "design", "n", "p", "k", "method", "reps", "failures", "median", "q1", "q3", "iqr"];
const ERROR_HEADER: [&str; 7] = ["schema_version", "config_hash", "design", "method", "rep", "seed", "error"];

fn benchmark(cfg: &RunConfig, hash: &str) -> Result<OutputSet> {
    if cfg.methods.is_empty() {
        bail!("no methods");
    }
    if cfg.designs.is_empty() {
        bail!("no designs");
    }
    let options = BenchmarkOptions { n_mc: cfg.n_mc, timings: cfg.timings };
    log::info!(
        "benchmark: {} designs x {} methods x {} reps on {} threads",
        cfg.designs.len(),
        cfg.methods.len(),
        cfg.reps,
        rayon::current_num_threads()
    );
    let table = risk::run_benchmark(&cfg.designs, &cfg.methods, cfg.reps, cfg.seed, options)?;
    let mut out = OutputSet::new();
    out.note("model parameters are redrawn for every replication; replication r uses seed ^ r");
    out.add("results.csv", csv_bytes(table.rows.iter().map(|r| ResultRecord::from_row(r, hash)), &RESULT_HEADER)?);
    let errors = table.rows.iter().filter_map(|r| {
        r.error.as_deref().map(|error| ErrorRecord {
            schema_version: SCHEMA_VERSION,
            config_hash: hash,
            design: &r.design,
            method: &r.method,
            rep: r.rep,
            seed: r.seed,
            error,
        })
    });
    out.add("errors.csv", csv_bytes(errors, &ERROR_HEADER)?);
    let n_errors = table.rows.iter().filter(|r| r.error.is_some()).count();
    if n_errors > 0 {
        log::warn!("{n_errors} fits failed; see errors.csv");
    }
    add_summary(&mut out, &table, hash, cfg)?;
    Ok(out)
}

fn add_summary(out: &mut OutputSet, table: &BenchmarkTable, hash: &str, cfg: &RunConfig) -> Result<()> {
    let summary = table.summary();
    let records = summary.iter().map(|row| SummaryRecord::new(row, hash));
    out.add("summary.csv", csv_bytes(records, &SUMMARY_HEADER)?);
    out.add("risk.svg", chart(table, &summary, cfg).render().into_bytes());
    Ok(())
}

fn design_kind(label: &str) -> &str {
    label.split('_').next().unwrap_or(label)
}

fn chart(table: &BenchmarkTable, summary: &[SummaryRow], cfg: &RunConfig) -> Chart {
    let distinct = |f: fn(&SummaryRow) -> usize| {
        let mut v: Vec<usize> = summary.iter().map(f).collect();
        v.sort_unstable();
        v.dedup();
        v.len() > 1
    };
    let varies = [(PlotAxis::P, distinct(|r| r.p)), (PlotAxis::K, distinct(|r| r.k)), (PlotAxis::N, distinct(|r| r.n))];
    let axis = match cfg.plot_x {
        PlotAxis::Auto => varies.iter().find(|(_, v)| *v).map_or(PlotAxis::Snr, |(a, _)| *a),
        a => a,
    };
    let mut kinds: Vec<&str> = summary.iter().map(|r| design_kind(&r.design)).collect();
    kinds.sort_unstable();
    kinds.dedup();

    let mut series: Vec<Series> = Vec::new();
    for row in summary {
        let Some(median) = row.median else { continue };
        let x = match axis {
            PlotAxis::P => row.p as f64,
            PlotAxis::K => row.k as f64,
            PlotAxis::N => row.n as f64,
            PlotAxis::Auto | PlotAxis::Snr => {
                let snrs: Vec<f64> = table.rows.iter().filter(|r| r.design == row.design).filter_map(|r| r.snr).collect();
                if snrs.is_empty() {
                    continue;
                }
                snrs.iter().sum::<f64>() / snrs.len() as f64
            }
        };
        let mut name = row.method.clone();
        if kinds.len() > 1 {
            name = format!("{} {name}", design_kind(&row.design));
        }
        for (a, v) in varies {
            if v && a != axis {
                let (key, val) = match a {
                    PlotAxis::P => ("p", row.p),
                    PlotAxis::K => ("k", row.k),
                    _ => ("n", row.n),
                };
                name = format!("{name} {key}={val}");
            }
        }
        match series.iter_mut().find(|s| s.name == name) {
            Some(s) => s.points.push((x, median)),
            None => series.push(Series { name, points: vec![(x, median)] }),
        }
    }
    for s in &mut series {
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let x_label = match axis {
        PlotAxis::P => "p",
        PlotAxis::K => "K",
        PlotAxis::N => "n",
        PlotAxis::Auto | PlotAxis::Snr => "mean SNR",
    };
    Chart {
        title: "Median excess risk".into(),
        x_label: x_label.into(),
        y_label: "excess risk".into(),
        log_y: cfg.plot_log_y.unwrap_or(true),
        series,
    }
}

/// Reads a `results.csv` written by `benchmark`.
pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header = rdr.headers()?.clone();
    if header.iter().ne(RESULT_HEADER) {
        bail!("{}: unexpected header", path.display());
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<ResultRecord>().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), i + 1))?;
        io::check_schema(rec.schema_version, path).with_context(|| format!("row {}", i + 1))?;
        out.push(rec);
    }
    Ok(out)
}

fn report(cfg: &RunConfig, _hash: &str, out_dir: &Path) -> Result<OutputSet> {
    let path = cfg.results.clone().unwrap_or_else(|| out_dir.join("results.csv"));
    let records = read_results(&path)?;
    let Some(first) = records.first() else { bail!("{}: no result rows", path.display()) };
    let source_hash = first.config_hash.clone();
    if records.iter().any(|r| r.config_hash != source_hash) {
        bail!("{}: rows come from different configs", path.display());
    }
    let table = BenchmarkTable { rows: records.iter().map(ResultRecord::to_row).collect() };
    let mut out = OutputSet::new();
    add_summary(&mut out, &table, &source_hash, cfg)?;
    Ok(out)
}

