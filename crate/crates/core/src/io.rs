//! File formats: model documents (JSON) and power traces (CSV).
//!
//! A model document looks like
//!
//! ```json
//! {
//!   "states": ["low", "high"],
//!   "Q": [[-1.0, 1.0], [1.0, -1.0]],
//!   "rates": [-1.0, 2.0],
//!   "units": { "power": "MW", "time": "s" }
//! }
//! ```
//!
//! `Q` is row-major in 1/time, `rates` are in the power unit, and battery
//! sizes computed from the model are in power x time. Floats are written
//! with shortest round-trip formatting and parsed with correct rounding, so
//! write-then-read reproduces every value bit-for-bit.
//!
//! A trace is a CSV file with a header row and two columns: an ISO-8601
//! timestamp and a power sample. Sampling must be uniform.

use std::fs;
use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::ctmc::{NetGenModel, RateMatrix};
use crate::error::{Error, Result};
use crate::fit::{BinningSpec, FittedModel, TransitionCounts};

/// Joules per kilowatt-hour.
pub const JOULES_PER_KWH: f64 = 3.6e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PowerUnit {
    W,
    #[serde(rename = "kW")]
    KW,
    #[serde(rename = "MW")]
    MW,
    #[serde(rename = "GW")]
    GW,
}

impl PowerUnit {
    pub fn watts(self) -> f64 {
        match self {
            PowerUnit::W => 1.0,
            PowerUnit::KW => 1e3,
            PowerUnit::MW => 1e6,
            PowerUnit::GW => 1e9,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PowerUnit::W => "W",
            PowerUnit::KW => "kW",
            PowerUnit::MW => "MW",
            PowerUnit::GW => "GW",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeUnit {
    #[serde(rename = "s")]
    Second,
    #[serde(rename = "min")]
    Minute,
    #[serde(rename = "h")]
    Hour,
}

impl TimeUnit {
    pub fn seconds(self) -> f64 {
        match self {
            TimeUnit::Second => 1.0,
            TimeUnit::Minute => 60.0,
            TimeUnit::Hour => 3600.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TimeUnit::Second => "s",
            TimeUnit::Minute => "min",
            TimeUnit::Hour => "h",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Units {
    pub power: PowerUnit,
    pub time: TimeUnit,
}

impl Default for Units {
    fn default() -> Self {
        Units {
            power: PowerUnit::MW,
            time: TimeUnit::Second,
        }
    }
}

impl Units {
    /// Joules per model energy unit (power unit x time unit).
    pub fn joules_per_energy_unit(&self) -> f64 {
        self.power.watts() * self.time.seconds()
    }

    pub fn energy_to_kwh(&self, e: f64) -> f64 {
        e * self.joules_per_energy_unit() / JOULES_PER_KWH
    }

    pub fn kwh_to_energy(&self, kwh: f64) -> f64 {
        kwh * JOULES_PER_KWH / self.joules_per_energy_unit()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<String>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub rates: Vec<f64>,
    #[serde(default)]
    pub units: Units,
}

impl ModelDocument {
    pub fn from_model(model: &NetGenModel, units: Units) -> Self {
        ModelDocument {
            states: model.labels().map(|l| l.to_vec()),
            q: model.rate_matrix().to_rows(),
            rates: model.rates().to_vec(),
            units,
        }
    }

    pub fn to_model(&self) -> Result<NetGenModel> {
        let q = RateMatrix::from_rows(&self.q)?;
        NetGenModel::with_labels(q, self.rates.clone(), self.states.clone())
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse(format!("{what}: {e}")))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable document");
    s.push('\n');
    s
}

pub fn model_to_json(model: &NetGenModel, units: Units) -> String {
    to_json(&ModelDocument::from_model(model, units))
}

pub fn model_from_json(text: &str) -> Result<(NetGenModel, Units)> {
    let doc: ModelDocument = parse_json(text, "model document")?;
    Ok((doc.to_model()?, doc.units))
}

pub fn read_model(path: &Path) -> Result<(NetGenModel, Units)> {
    model_from_json(&read_text(path)?)
}

pub fn write_model(path: &Path, model: &NetGenModel, units: Units) -> Result<()> {
    write_text(path, &model_to_json(model, units))
}

/// A fitted model with its provenance: binning, counts and dropped bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub edges: Vec<f64>,
    pub tau: f64,
    pub demand: f64,
    pub retained: Vec<usize>,
    pub dropped_states: Vec<usize>,
    pub t_matrix: Vec<Vec<f64>>,
    pub counts: TransitionCounts,
    pub warnings: Vec<String>,
    pub model: ModelDocument,
}

impl FitDocument {
    pub fn new(fitted: &FittedModel, model: &NetGenModel, demand: f64, units: Units) -> Self {
        FitDocument {
            edges: fitted.binning.edges().to_vec(),
            tau: fitted.tau,
            demand,
            retained: fitted.retained.clone(),
            dropped_states: fitted.dropped_states.clone(),
            t_matrix: fitted
                .t_matrix
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            counts: fitted.sample_counts.clone(),
            warnings: fitted.warnings.clone(),
            model: ModelDocument::from_model(model, units),
        }
    }

    pub fn binning(&self) -> Result<BinningSpec> {
        BinningSpec::new(self.edges.clone())
    }
}

/// A uniformly sampled power trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub timestamps: Vec<NaiveDateTime>,
    pub power: Vec<f64>,
    /// Sampling interval in seconds.
    pub interval: f64,
}

/// Months (1-12) and a local hour range `[start, end)`, which wraps past
/// midnight when `start > end`. Missing parts match everything.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TimeWindow {
    #[serde(default)]
    pub months: Option<Vec<u32>>,
    #[serde(default)]
    pub hours: Option<(u32, u32)>,
}

impl TimeWindow {
    pub fn validate(&self) -> Result<()> {
        if let Some(m) = &self.months {
            if m.is_empty() || m.iter().any(|&x| !(1..=12).contains(&x)) {
                return Err(Error::Domain(format!("months must be in 1..=12, got {m:?}")));
            }
        }
        if let Some((a, b)) = self.hours {
            if a > 23 || b > 24 || a == b {
                return Err(Error::Domain(format!("invalid hour range [{a}, {b})")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, t: &NaiveDateTime) -> bool {
        let month_ok = self.months.as_ref().is_none_or(|m| m.contains(&t.month()));
        let hour_ok = self.hours.is_none_or(|(a, b)| {
            let h = t.hour();
            if a < b {
                h >= a && h < b
            } else {
                h >= a || h < b
            }
        });
        month_ok && hour_ok
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.naive_local());
    }
    [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ]
    .iter()
    .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// How many offending rows an irregular-sampling error lists.
const MAX_LISTED_ROWS: usize = 20;

impl Trace {
    /// Parse CSV text. Row numbers in errors count the header as row 1.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::Parse(format!("trace header: {e}")))?
            .clone();
        if headers.len() != 2 {
            return Err(Error::Parse(format!(
                "trace needs a header and exactly two columns (timestamp, power), found {} header field(s)",
                headers.len()
            )));
        }
        if headers
            .iter()
            .all(|h| h.parse::<f64>().is_ok() || parse_timestamp(h).is_some())
        {
            return Err(Error::Parse("trace header row missing".into()));
        }
        let mut timestamps = Vec::new();
        let mut power = Vec::new();
        for (k, rec) in reader.records().enumerate() {
            let row = k + 2;
            let rec = rec.map_err(|e| Error::Parse(format!("trace row {row}: {e}")))?;
            if rec.len() != 2 {
                return Err(Error::Parse(format!(
                    "trace row {row}: expected 2 fields, got {}",
                    rec.len()
                )));
            }
            let t = parse_timestamp(&rec[0])
                .ok_or_else(|| Error::Parse(format!("trace row {row}: bad timestamp {:?}", &rec[0])))?;
            let p: f64 = rec[1]
                .parse()
                .map_err(|_| Error::Parse(format!("trace row {row}: bad power value {:?}", &rec[1])))?;
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::Parse(format!(
                    "trace row {row}: power {p} must be finite and >= 0"
                )));
            }
            timestamps.push(t);
            power.push(p);
        }
        if timestamps.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "trace has {} sample(s); at least 2 are needed",
                timestamps.len()
            )));
        }
        let step = timestamps[1] - timestamps[0];
        if step <= chrono::TimeDelta::zero() {
            return Err(Error::Parse("trace row 3: timestamps must increase".into()));
        }
        let bad: Vec<usize> = timestamps
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1] - w[0] != step)
            .map(|(k, _)| k + 3)
            .collect();
        if !bad.is_empty() {
            let listed: Vec<String> = bad.iter().take(MAX_LISTED_ROWS).map(|r| r.to_string()).collect();
            let more = if bad.len() > MAX_LISTED_ROWS {
                format!(" and {} more", bad.len() - MAX_LISTED_ROWS)
            } else {
                String::new()
            };
            return Err(Error::Parse(format!(
                "irregular sampling: expected a constant interval of {}s; offending rows {}{more}",
                step.as_seconds_f64(),
                listed.join(", ")
            )));
        }
        Ok(Trace {
            timestamps,
            power,
            interval: step.as_seconds_f64(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_csv(&read_text(path)?)
    }

    pub fn len(&self) -> usize {
        self.power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power.is_empty()
    }

    /// Maximal runs of consecutive samples inside `window`.
    pub fn segments(&self, window: &TimeWindow) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        let mut cur = Vec::new();
        for (t, &p) in self.timestamps.iter().zip(&self.power) {
            if window.contains(t) {
                cur.push(p);
            } else if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("timestamp,power_mw\n");
        for (t, p) in self.timestamps.iter().zip(&self.power) {
            s.push_str(&format!("{},{}\n", t.format("%Y-%m-%dT%H:%M:%S"), p));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn ts(y: i32, mo: u32, d: u32, h: u32, mi: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(y, mo, d)
            .unwrap()
            .and_hms_opt(h, mi, 0)
            .unwrap()
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let q = RateMatrix::from_rows(&[vec![-0.1 - 0.2, 0.1 + 0.2], vec![1.0 / 3.0, -1.0 / 3.0]]).unwrap();
        let m = NetGenModel::with_labels(
            q,
            vec![-std::f64::consts::PI, 1e-300_f64.sqrt()],
            Some(vec!["a".into(), "b".into()]),
        )
        .unwrap();
        let text = model_to_json(&m, Units::default());
        let (back, units) = model_from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(units, Units::default());
        assert!(text.contains("\"Q\""));
    }

    #[test]
    fn model_document_errors() {
        assert!(matches!(model_from_json("{"), Err(Error::Parse(_))));
        let bad = r#"{"Q": [[-1, 1], [1, -1]], "rates": [1, 1]}"#;
        assert!(matches!(model_from_json(bad), Err(Error::DegenerateModel(_))));
        let unknown = r#"{"Q": [[-1, 1], [1, -1]], "rates": [1, -1], "extra": 1}"#;
        assert!(matches!(model_from_json(unknown), Err(Error::Parse(_))));
        let units = r#"{"Q": [[-1, 1], [1, -1]], "rates": [1, -1], "units": {"power": "kW", "time": "h"}}"#;
        let (_, u) = model_from_json(units).unwrap();
        assert_eq!(u.joules_per_energy_unit(), 3.6e6);
        assert_eq!(u.energy_to_kwh(2.0), 2.0);
    }

    #[test]
    fn kwh_conversion() {
        let u = Units::default();
        // 1 MW for 3.6 s is 1 kWh
        assert!((u.energy_to_kwh(3.6) - 1.0).abs() < 1e-15);
        assert!((u.kwh_to_energy(1.0) - 3.6).abs() < 1e-15);
    }

    #[test]
    fn trace_parsing() {
        let text = "timestamp,power\n2020-02-01T00:00:00Z,10\n2020-02-01T00:05:00Z,20.5\n2020-02-01 00:10:00,0\n";
        let t = Trace::from_csv(text).unwrap();
        assert_eq!(t.power, vec![10.0, 20.5, 0.0]);
        assert_eq!(t.interval, 300.0);
        assert_eq!(t.timestamps[2], ts(2020, 2, 1, 0, 10));
    }

    #[test]
    fn trace_gaps_are_listed() {
        let text = "timestamp,power\n2020-02-01T00:00:00,1\n2020-02-01T00:05:00,1\n2020-02-01T00:15:00,1\n2020-02-01T00:20:00,1\n";
        let err = Trace::from_csv(text).unwrap_err();
        assert!(err.to_string().contains("offending rows 4"), "{err}");
    }

    #[test]
    fn trace_rejects_bad_input() {
        assert!(Trace::from_csv("2020-02-01T00:00:00,1\n2020-02-01T00:05:00,1\n").is_err());
        assert!(Trace::from_csv("timestamp,power\n2020-02-01T00:00:00,-1\n2020-02-01T00:05:00,1\n").is_err());
        assert!(Trace::from_csv("timestamp,power\n2020-02-01T00:00:00,1\n").is_err());
        assert!(Trace::from_csv("timestamp,power\nnot a time,1\n2020-02-01T00:05:00,1\n").is_err());
        assert!(matches!(
            Trace::read(Path::new("/nonexistent/trace.csv")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn window_wraps_midnight() {
        let w = TimeWindow {
            months: Some(vec![2, 3]),
            hours: Some((21, 3)),
        };
        assert!(w.contains(&ts(2020, 2, 1, 22, 0)));
        assert!(w.contains(&ts(2020, 3, 1, 2, 59)));
        assert!(!w.contains(&ts(2020, 3, 1, 3, 0)));
        assert!(!w.contains(&ts(2020, 4, 1, 22, 0)));
        assert!(TimeWindow {
            months: Some(vec![13]),
            hours: None
        }
        .validate()
        .is_err());
    }

    #[test]
    fn segments_split_on_window_exit() {
        let timestamps: Vec<NaiveDateTime> = (0..48).map(|h| ts(2020, 2, 1 + h / 24, h % 24, 0)).collect();
        let trace = Trace {
            power: (0..48).map(|h| h as f64).collect(),
            timestamps,
            interval: 3600.0,
        };
        let w = TimeWindow {
            months: None,
            hours: Some((22, 2)),
        };
        let segs = trace.segments(&w);
        assert_eq!(
            segs,
            vec![vec![0.0, 1.0], vec![22.0, 23.0, 24.0, 25.0], vec![46.0, 47.0]]
        );
        let round = Trace::from_csv(&trace.to_csv()).unwrap();
        assert_eq!(round, trace);
    }
}
