//! Run configuration: JSON with unknown keys rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use factorpred::risk::{DesignPoint, MethodSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Version of the config, CSV and JSON layouts written by this binary.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Fit,
    Benchmark,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fit => "fit",
            Command::Benchmark => "benchmark",
            Command::Report => "report",
        }
    }
}

/// Horizontal axis of the benchmark chart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PlotAxis {
    /// The first of `p`, `k`, `n` that varies across designs, else the SNR.
    #[default]
    Auto,
    N,
    P,
    K,
    Snr,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}
fn default_reps() -> usize {
    100
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    /// When present, must match the subcommand.
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub out: Option<PathBuf>,

    /// `simulate`: the design to draw from.
    #[serde(default)]
    pub design: Option<DesignPoint>,
    /// `simulate`: also write the latent factors to `Z.csv`.
    #[serde(default = "default_true")]
    pub write_latent: bool,

    /// `benchmark`: the grid.
    #[serde(default)]
    pub designs: Vec<DesignPoint>,
    /// `fit` and `benchmark`.
    #[serde(default)]
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub n_mc: usize,
    #[serde(default)]
    pub timings: bool,
    #[serde(default)]
    pub plot_x: PlotAxis,
    #[serde(default)]
    pub plot_log_y: Option<bool>,

    /// `fit`: input files, relative to the config file.
    #[serde(default)]
    pub x: Option<PathBuf>,
    #[serde(default)]
    pub y: Option<PathBuf>,
    /// `fit`: optional `theta.json`, enabling oracle methods and exact risk.
    #[serde(default)]
    pub theta: Option<PathBuf>,

    /// `report`: the `results.csv` to summarize.
    #[serde(default)]
    pub results: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            bail!("unsupported config schema_version {} (expected {SCHEMA_VERSION})", cfg.schema_version);
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for p in [&mut cfg.x, &mut cfg.y, &mut cfg.theta, &mut cfg.results, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Hex SHA-256 of the canonical JSON serialization. Input and output
    /// paths are excluded so relocating a run does not change its hash.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = None;
        canonical.x = None;
        canonical.y = None;
        canonical.theta = None;
        canonical.results = None;
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn check_command(&self, cmd: Command) -> Result<()> {
        match self.command {
            Some(c) if c != cmd => bail!("config is for `{}` but `{}` was requested", c.name(), cmd.name()),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"seed": 1, "colour": "red"}"#).is_err());
    }

    #[test]
    fn hash_ignores_paths_but_not_seed() {
        let a: RunConfig = serde_json::from_str(r#"{"seed": 1, "out": "a"}"#).unwrap();
        let b: RunConfig = serde_json::from_str(r#"{"seed": 1, "out": "b"}"#).unwrap();
        let c: RunConfig = serde_json::from_str(r#"{"seed": 2}"#).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn command_mismatch() {
        let a: RunConfig = serde_json::from_str(r#"{"command": "fit"}"#).unwrap();
        assert!(a.check_command(Command::Fit).is_ok());
        assert!(a.check_command(Command::Benchmark).is_err());
    }
}
