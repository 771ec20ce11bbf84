//! Run configuration: one TOML document per run, with `--set` overrides.
//!
//! Relative paths inside the document, including overridden ones, are
//! resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use fluidq::io::read_text;
use fluidq::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: Option<ModelSource>,
    pub fit: Option<FitConfig>,
    pub solve: Option<SolveConfig>,
    pub decay: Option<DecayConfig>,
    pub simulate: Option<SimulateConfig>,
    pub size: Option<SizeConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSource {
    pub path: Option<PathBuf>,
    pub two_state: Option<TwoState>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoState {
    pub a: f64,
    pub b: f64,
    pub g: f64,
    pub d: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub trace: PathBuf,
    pub demand: f64,
    /// Bin edges in MW; the built-in wind binning when absent.
    pub edges: Option<Vec<f64>>,
    #[serde(default)]
    pub pseudo_count: f64,
    #[serde(default = "default_min_transitions")]
    pub min_transitions: u64,
    pub months: Option<Vec<u32>>,
    /// `[start, end)` hours; wraps past midnight when `start > end`.
    pub hours: Option<[u32; 2]>,
    pub model_out: PathBuf,
    pub report_out: Option<PathBuf>,
}

fn default_min_transitions() -> u64 {
    fluidq::fit::DEFAULT_MIN_TRANSITIONS
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    #[serde(default)]
    pub log: bool,
}

impl Grid {
    pub fn values(&self) -> Result<Vec<f64>> {
        let ordered = self.start < self.stop && (!self.log || self.start > 0.0);
        if self.points < 2 || !ordered {
            return Err(Error::Domain(format!(
                "grid needs start < stop, points >= 2 and a positive start for log spacing; got {self:?}"
            )));
        }
        let last = (self.points - 1) as f64;
        Ok((0..self.points)
            .map(|k| {
                let t = k as f64 / last;
                if self.log {
                    self.start * (self.stop / self.start).powf(t)
                } else {
                    self.start + (self.stop - self.start) * t
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub bmax: Option<Vec<f64>>,
    pub grid: Option<Grid>,
    #[serde(default = "yes")]
    pub log_lolp: bool,
}

impl SolveConfig {
    pub fn bmax_values(&self) -> Result<Vec<f64>> {
        match (&self.bmax, &self.grid) {
            (Some(v), None) if !v.is_empty() => Ok(v.clone()),
            (None, Some(g)) => g.values(),
            _ => Err(Error::Domain(
                "solve needs exactly one of `bmax` (non-empty list) or `grid`".into(),
            )),
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
    pub report_out: Option<PathBuf>,
}

fn default_samples() -> usize {
    64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    Ctmc,
    Dtmc,
    Trace,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub mode: SimMode,
    pub bmax: f64,
    /// Horizon in model time units.
    pub horizon: Option<f64>,
    /// Horizon in mean holding times of the chain; ignored when `horizon` is set.
    pub holding_times: Option<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub b0: Option<f64>,
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    #[serde(default = "default_batches")]
    pub batches: usize,
    /// dtmc mode: uniformization rate when no fit report is given.
    pub q_rate: Option<f64>,
    /// dtmc mode: fitted one-step matrix, bins and tau from `fit`.
    pub fit_report: Option<PathBuf>,
    /// trace mode: the trace to replay.
    pub trace: Option<PathBuf>,
    /// trace mode, or dtmc mode with a fit report: demand in MW.
    pub demand: Option<f64>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_burn_in() -> f64 {
    0.01
}

fn default_batches() -> usize {
    20
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeConfig {
    pub delta: Vec<f64>,
    #[serde(default)]
    pub epsilon: Vec<f64>,
    #[serde(default = "yes")]
    pub exact: bool,
    #[serde(default)]
    pub allow_negative_drift: bool,
}

/// A parsed config together with the digest of its effective text.
pub struct Loaded {
    pub config: Config,
    pub sha256: String,
    base: PathBuf,
}

impl Loaded {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn section<'a, T>(&self, s: &'a Option<T>, name: &str) -> Result<&'a T> {
        s.as_ref()
            .ok_or_else(|| Error::Parse(format!("config has no [{name}] section")))
    }
}

pub fn load(path: &Path, overrides: &[String]) -> Result<Loaded> {
    let text = read_text(path)?;
    let mut doc: toml::Table = text
        .parse()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let canonical = toml::to_string(&doc).map_err(|e| Error::Parse(e.to_string()))?;
    let config: Config = toml::Value::Table(doc)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Parse(format!("{}: {}", path.display(), e.message())))?;
    let sha256 = Sha256::digest(canonical.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, sha256, base })
}

/// `a.b.c=value`; the value is read as a TOML value, or as a bare string
/// when it does not parse as one.
fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Parse(format!("override `{spec}` is not key=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Parse(format!("override key `{key}` is malformed")));
    }
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Parse(format!("override key `{key}`: `{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
