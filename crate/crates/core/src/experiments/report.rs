//! Report assembly and on-disk artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex;
use serde::Serialize;

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::fit::{fit_power_law, LinearFit};
use crate::spectral::{ComplexField, GridSpec, RealField};

/// One line of `errors.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorRow {
    pub epsilon: f64,
    pub s: Option<f64>,
    pub metric: String,
    pub value: f64,
}

/// Log-log fit of one metric against `ε` (or `t`).
#[derive(Clone, Debug, Serialize)]
pub struct SlopeFit {
    pub metric: String,
    pub s: Option<f64>,
    pub against: String,
    pub fit: Option<LinearFit>,
    pub expected: Option<f64>,
    pub tolerance: f64,
    /// Abscissae left out (under-resolved or non-positive values).
    pub excluded: Vec<f64>,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Resolution used at one `ε`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunPlan {
    pub epsilon: f64,
    pub grid: GridSpec,
    pub nls_step: f64,
    pub transport_step: f64,
    pub times: Vec<f64>,
}

/// Extra numeric table written as `<name>.csv`.
#[derive(Clone, Debug, Serialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Raw field written as little-endian `(re, im)` pairs with a JSON sidecar.
#[derive(Clone, Debug)]
pub struct FieldDump {
    pub name: String,
    pub role: String,
    pub epsilon: f64,
    pub time: f64,
    pub grid: GridSpec,
    pub values: Vec<Complex<f64>>,
}

impl FieldDump {
    pub fn complex(name: impl Into<String>, field: &ComplexField<f64>, epsilon: f64, time: f64) -> Self {
        Self {
            name: name.into(),
            role: field.role().to_string(),
            epsilon,
            time,
            grid: field.grid().spec(),
            values: field.values().to_vec(),
        }
    }

    pub fn real(name: impl Into<String>, field: &RealField<f64>, epsilon: f64, time: f64) -> Self {
        let mut d = Self::complex(name, &field.to_complex(), epsilon, time);
        d.role = field.role().to_string();
        d
    }
}

#[derive(Serialize)]
struct DumpSidecar<'a> {
    grid: &'a GridSpec,
    time: f64,
    epsilon: f64,
    role: &'a str,
    layout: &'static str,
}

#[derive(Clone, Debug, Serialize)]
pub struct Metadata {
    pub generator: String,
}

impl Default for Metadata {
    fn default() -> Self {
        Self { generator: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")) }
    }
}

/// Outcome of one experiment; serialized as `report.json`.
#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub experiment: String,
    pub passed: bool,
    pub plan: Vec<RunPlan>,
    pub fits: Vec<SlopeFit>,
    pub checks: Vec<Check>,
    pub flags: Vec<String>,
    pub rows: Vec<ErrorRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extra: Option<serde_json::Value>,
    pub config: ExperimentConfig,
    pub metadata: Metadata,
    #[serde(skip)]
    pub tables: Vec<Table>,
    #[serde(skip)]
    pub dumps: Vec<FieldDump>,
}

impl Report {
    pub fn new(experiment: impl Into<String>, config: &ExperimentConfig, plan: Vec<RunPlan>) -> Self {
        Self {
            experiment: experiment.into(),
            passed: false,
            plan,
            fits: Vec::new(),
            checks: Vec::new(),
            flags: Vec::new(),
            rows: Vec::new(),
            extra: None,
            config: config.clone(),
            metadata: Metadata::default(),
            tables: Vec::new(),
            dumps: Vec::new(),
        }
    }

    pub fn row(&mut self, epsilon: f64, s: Option<f64>, metric: impl Into<String>, value: f64) {
        self.rows.push(ErrorRow { epsilon, s, metric: metric.into(), value });
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), passed, detail: detail.into() });
    }

    /// Values of `metric` (and `s`) in row order, as `(ε, value)` pairs.
    pub fn series(&self, metric: &str, s: Option<f64>) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.metric == metric && r.s == s)
            .map(|r| (r.epsilon, r.value))
            .collect()
    }

    pub fn find_check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn find_fit(&self, metric: &str, s: Option<f64>) -> Option<&SlopeFit> {
        self.fits.iter().find(|f| f.metric == metric && f.s == s)
    }

    /// Fits `metric` against `ε` over its rows.
    pub fn fit_eps(&mut self, metric: &str, s: Option<f64>, expected: Option<f64>, tolerance: f64, min_points: usize) {
        let pts = self.series(metric, s);
        let f = slope_fit(metric, s, "epsilon", &pts, expected, tolerance, min_points);
        self.fits.push(f);
    }

    /// Sets `passed` from every fit and check.
    pub fn finish(mut self) -> Self {
        self.passed = self.fits.iter().all(|f| f.passed) && self.checks.iter().all(|c| c.passed);
        self
    }
}

/// Power-law fit over the positive entries of `pts`, with verdict.
pub fn slope_fit(
    metric: &str,
    s: Option<f64>,
    against: &str,
    pts: &[(f64, f64)],
    expected: Option<f64>,
    tolerance: f64,
    min_points: usize,
) -> SlopeFit {
    let (kept, dropped): (Vec<_>, Vec<_>) = pts.iter().copied().partition(|(x, y)| *x > 0.0 && *y > 0.0 && y.is_finite());
    let x: Vec<f64> = kept.iter().map(|p| p.0).collect();
    let y: Vec<f64> = kept.iter().map(|p| p.1).collect();
    let fit = if x.len() >= min_points.max(2) { fit_power_law(&x, &y).ok() } else { None };
    let passed = match (&fit, expected) {
        (Some(f), Some(e)) => (f.slope - e).abs() <= tolerance,
        (Some(_), None) => true,
        (None, _) => false,
    };
    SlopeFit {
        metric: metric.to_string(),
        s,
        against: against.to_string(),
        fit,
        expected,
        tolerance,
        excluded: dropped.iter().map(|p| p.0).collect(),
        passed,
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv output failed: {other:?}")),
    }
}

/// Writes `report.json`, `errors.csv`, extra tables and field dumps into
/// `dir` (created if missing). Returns the written paths.
pub fn write_outputs(report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let path = dir.join("report.json");
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(&path, text)?;
    written.push(path);

    let path = dir.join("errors.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(["epsilon", "s", "metric", "value"]).map_err(csv_err)?;
    for r in &report.rows {
        let s = r.s.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([r.epsilon.to_string(), s, r.metric.clone(), r.value.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    written.push(path);

    for t in &report.tables {
        let path = dir.join(format!("{}.csv", t.name));
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(&t.header).map_err(csv_err)?;
        for row in &t.rows {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
        }
        w.flush()?;
        written.push(path);
    }

    for d in &report.dumps {
        let path = dir.join(format!("{}.f64", d.name));
        let mut bytes = Vec::with_capacity(d.values.len() * 16);
        for z in &d.values {
            bytes.extend_from_slice(&z.re.to_le_bytes());
            bytes.extend_from_slice(&z.im.to_le_bytes());
        }
        fs::File::create(&path)?.write_all(&bytes)?;
        written.push(path);
        let side = DumpSidecar { grid: &d.grid, time: d.time, epsilon: d.epsilon, role: &d.role, layout: "f64le re,im row-major" };
        let path = dir.join(format!("{}.json", d.name));
        let mut text = serde_json::to_string_pretty(&side)?;
        text.push('\n');
        fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}

/// Reads a dump written by [`write_outputs`].
pub fn read_dump(path: &Path) -> Result<Vec<Complex<f64>>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 16 != 0 {
        return Err(Error::invalid(format!("{} is not a whole number of complex values", path.display())));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            Complex::new(re, im)
        })
        .collect())
}
