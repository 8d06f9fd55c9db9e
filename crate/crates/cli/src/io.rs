//! CSV and JSON file formats.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use factorpred::model::{FactorModelParams, NoiseCovariance};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::SCHEMA_VERSION;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serializes a matrix as CSV with the given column names.
pub fn matrix_csv(m: &DMatrix<f64>, header: &[String]) -> Result<Vec<u8>> {
    assert_eq!(header.len(), m.ncols());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    let mut row = Vec::with_capacity(m.ncols());
    for i in 0..m.nrows() {
        row.clear();
        row.extend((0..m.ncols()).map(|j| m[(i, j)].to_string()));
        w.write_record(&row)?;
    }
    Ok(w.into_inner().map_err(|e| anyhow!("flushing CSV: {e}"))?)
}

pub fn prefixed_header(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|j| format!("{prefix}{j}")).collect()
}

/// Reads a numeric CSV with a header row into a matrix.
///
/// Errors name the file, the 1-based data row and column of the first bad
/// field, and the line number in the file.
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> =
        rdr.headers().with_context(|| format!("reading header of {}", path.display()))?.iter().map(String::from).collect();
    if header.is_empty() {
        bail!("{}: empty header", path.display());
    }
    let ncols = header.len();
    let mut values = Vec::new();
    let mut nrows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { len, .. } => {
                anyhow!("{}: row {row}: expected {ncols} columns, found {len}", path.display())
            }
            _ => anyhow!("{}: row {row}: {e}", path.display()),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                anyhow!(
                    "{}: row {row}, column {} ({}), line {line}: cannot parse {field:?} as a number",
                    path.display(),
                    c + 1,
                    header[c]
                )
            })?;
            if !v.is_finite() {
                bail!("{}: row {row}, column {} ({}), line {line}: non-finite value", path.display(), c + 1, header[c]);
            }
            values.push(v);
        }
        nrows += 1;
    }
    Ok((header, DMatrix::from_row_slice(nrows, ncols, &values)))
}

/// Reads a single-column CSV as a vector.
pub fn read_vector_csv(path: &Path) -> Result<DVector<f64>> {
    let (header, m) = read_matrix_csv(path)?;
    if header.len() != 1 {
        bail!("{}: expected one column, found {}", path.display(), header.len());
    }
    Ok(m.column(0).into_owned())
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        bail!("{what}: ragged rows");
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &rows.concat()))
}

/// `theta.json`: the model parameters plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaFile {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub rng: String,
    pub generator: String,
    pub design: Option<factorpred::risk::DesignPoint>,
    pub k: usize,
    pub p: usize,
    /// `A`, row-major `p x K`.
    pub a: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub sigma_z: Vec<Vec<f64>>,
    /// Diagonal of `Sigma_W` when it is diagonal.
    pub sigma_w_diag: Option<Vec<f64>>,
    pub sigma_w: Option<Vec<Vec<f64>>>,
    pub sigma_sq: f64,
}

impl ThetaFile {
    pub fn from_params(
        theta: &FactorModelParams,
        design: Option<factorpred::risk::DesignPoint>,
        config_hash: &str,
        seed: u64,
    ) -> Self {
        let (sigma_w_diag, sigma_w) = match &theta.sigma_w {
            NoiseCovariance::Diagonal(d) => (Some(d.iter().copied().collect()), None),
            NoiseCovariance::Dense(m) => (None, Some(to_rows(m))),
        };
        ThetaFile {
            schema_version: SCHEMA_VERSION,
            config_hash: config_hash.into(),
            seed,
            rng: factorpred::rng::RNG_ALGORITHM.into(),
            generator: generator_version(),
            design,
            k: theta.k,
            p: theta.p(),
            a: to_rows(&theta.a),
            beta: theta.beta.iter().copied().collect(),
            sigma_z: to_rows(&theta.sigma_z),
            sigma_w_diag,
            sigma_w,
            sigma_sq: theta.sigma_sq,
        }
    }

    pub fn to_params(&self) -> Result<FactorModelParams> {
        let a = from_rows(&self.a, "a")?;
        if a.nrows() != self.p {
            bail!("a has {} rows but p = {}", a.nrows(), self.p);
        }
        let sigma_w = match (&self.sigma_w_diag, &self.sigma_w) {
            (Some(d), None) => NoiseCovariance::Diagonal(DVector::from_column_slice(d)),
            (None, Some(m)) => NoiseCovariance::Dense(from_rows(m, "sigma_w")?),
            _ => bail!("exactly one of sigma_w_diag and sigma_w must be present"),
        };
        Ok(FactorModelParams {
            k: self.k,
            a,
            beta: DVector::from_column_slice(&self.beta),
            sigma_z: from_rows(&self.sigma_z, "sigma_z")?,
            sigma_w,
            sigma_sq: self.sigma_sq,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let t: ThetaFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        check_schema(t.schema_version, path)?;
        Ok(t)
    }
}

pub fn generator_version() -> String {
    format!("factorpred {}", env!("CARGO_PKG_VERSION"))
}

pub fn check_schema(version: u32, path: &Path) -> Result<()> {
    if version != SCHEMA_VERSION {
        bail!("{}: unsupported schema_version {version} (expected {SCHEMA_VERSION})", path.display());
    }
    Ok(())
}

/// `manifest.json`: SHA-256 of every file written by a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub rng: String,
    pub generator: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub files: BTreeMap<String, String>,
}

/// Collects output files in memory and writes them together with a manifest.
pub struct OutputSet {
    files: BTreeMap<String, Vec<u8>>,
    notes: Vec<String>,
}

impl OutputSet {
    pub fn new() -> Self {
        OutputSet { files: BTreeMap::new(), notes: Vec::new() }
    }

    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.insert(name.to_string(), bytes);
    }

    /// Free-text remark copied into the manifest.
    pub fn note(&mut self, text: &str) {
        self.notes.push(text.to_string());
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    pub fn write(self, dir: &Path, command: &str, config_hash: &str, seed: u64) -> Result<Vec<String>> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        let mut manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            config_hash: config_hash.into(),
            seed,
            rng: factorpred::rng::RNG_ALGORITHM.into(),
            generator: generator_version(),
            notes: self.notes.clone(),
            files: BTreeMap::new(),
        };
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
            manifest.files.insert(name.clone(), sha256_hex(bytes));
        }
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        let path = dir.join("manifest.json");
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        let mut names: Vec<String> = self.files.into_keys().collect();
        names.push("manifest.json".into());
        Ok(names)
    }
}
