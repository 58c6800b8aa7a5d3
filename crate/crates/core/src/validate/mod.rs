//! End-to-end experiments with pass/fail reports.
//!
//! Each experiment reads its parameters and tolerances from a config struct,
//! echoes both into an [`ExperimentReport`], and writes the report as JSON
//! next to its CSV series and gnuplot data files.

mod equilibration;
mod gaussian;
mod metastability;
mod quasisteady;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Kernel;

pub use equilibration::{particle_equilibration_experiment, EquilibrationConfig};
pub use gaussian::{gaussian_experiment, GaussianConfig, ParticleSampling};
pub use metastability::{metastability_experiment, cells_for_eps2, MetastabilityConfig};
pub use quasisteady::{quasisteady_experiment, QuasisteadyConfig};

pub const EXPERIMENTS: [&str; 4] = ["gaussian", "quasisteady", "metastability", "particle_equilibration"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub passed: bool,
    pub metrics: BTreeMap<String, f64>,
    pub tolerances: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub metadata: BTreeMap<String, String>,
    pub artifacts: Vec<PathBuf>,
    /// Wall-clock measurements; written only on the run-info line.
    #[serde(skip)]
    pub timings: BTreeMap<String, f64>,
}

impl ExperimentReport {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            passed: true,
            metrics: BTreeMap::new(),
            tolerances: BTreeMap::new(),
            checks: Vec::new(),
            metadata: BTreeMap::new(),
            artifacts: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn metric(&mut self, key: impl Into<String>, value: f64) {
        self.metrics.insert(key.into(), value);
    }

    pub fn tolerance(&mut self, key: impl Into<String>, value: f64) {
        self.tolerances.insert(key.into(), value);
    }

    pub fn meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.passed &= passed;
        self.checks.push(Check { name: name.into(), passed, detail: detail.into() });
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }

    pub fn check_passed(&self, name: &str) -> Option<bool> {
        self.checks.iter().find(|c| c.name == name).map(|c| c.passed)
    }

    /// Records an output file by its name inside the experiment directory.
    pub fn artifact(&mut self, file: impl Into<PathBuf>) {
        self.artifacts.push(file.into());
    }

    pub fn timing(&mut self, key: impl Into<String>, seconds: f64) {
        self.timings.insert(key.into(), seconds);
    }

    /// Pretty JSON. Generation time and wall-clock timings share the second
    /// line, so reruns of the same config differ only there.
    pub fn to_json(&self, unix_time: u64) -> Result<String> {
        let body = serde_json::to_string_pretty(self)?;
        let rest = body.strip_prefix("{\n").unwrap_or(&body);
        let info = serde_json::json!({ "generated_unix_time": unix_time, "timings_s": self.timings });
        Ok(format!("{{\n  \"run_info\": {info},\n{rest}\n"))
    }

    pub fn write_json(&mut self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("report.json");
        self.artifact("report.json");
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        std::fs::write(&path, self.to_json(now)?)?;
        Ok(path)
    }

    pub fn summary(&self) -> String {
        let mut s = format!("{}: {}\n", self.name, if self.passed { "PASS" } else { "FAIL" });
        for c in &self.checks {
            s.push_str(&format!("  [{}] {} ({})\n", if c.passed { "ok" } else { "FAIL" }, c.name, c.detail));
        }
        s
    }
}

/// Parameters for every experiment; each section has defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSuiteConfig {
    pub gaussian: GaussianConfig,
    pub quasisteady: QuasisteadyConfig,
    pub metastability: MetastabilityConfig,
    pub particle_equilibration: EquilibrationConfig,
}

impl ExperimentSuiteConfig {
    pub fn validate(&self) -> Result<()> {
        self.gaussian.validate()?;
        self.quasisteady.validate()?;
        self.metastability.validate()?;
        self.particle_equilibration.validate()
    }
}

/// Runs the named experiment, writing into `out_dir/<name>/`.
pub fn run_experiment(
    name: &str,
    suite: &ExperimentSuiteConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<ExperimentReport> {
    let dir = out_dir.join(name);
    let report = match name {
        "gaussian" => {
            std::fs::create_dir_all(&dir)?;
            gaussian_experiment(&suite.gaussian, seed, &dir)?
        }
        "quasisteady" => {
            std::fs::create_dir_all(&dir)?;
            quasisteady_experiment(&suite.quasisteady, &dir)?
        }
        "metastability" => {
            std::fs::create_dir_all(&dir)?;
            metastability_experiment(&suite.metastability, &dir)?
        }
        "particle_equilibration" => {
            std::fs::create_dir_all(&dir)?;
            particle_equilibration_experiment(&suite.particle_equilibration, seed, &dir)?
        }
        other => return Err(Error::UnknownExperiment(other.into())),
    };
    Ok(report)
}

pub(crate) fn fmt_opt(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.4e}")
    } else {
        "n/a".into()
    }
}

/// Whitespace-separated columns with a comment header, for gnuplot.
pub(crate) fn write_columns(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# {}", header.join(" "))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.12e}")).collect();
        writeln!(f, "{}", line.join(" "))?;
    }
    f.flush()?;
    Ok(())
}

pub(crate) fn write_table_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v:.12e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::ConfigInconsistent(format!("{name} must be positive, got {v}")))
    }
}

pub(crate) fn kernel_meta(report: &mut ExperimentReport, k: &Kernel) {
    report.meta("kernel", k.label());
}

/// Minimizes a unimodal-ish function on `[lo, hi]`: coarse scan, then golden
/// section around the best scan point.
pub(crate) fn minimize_scalar(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    const SCAN: usize = 400;
    let h = (hi - lo) / SCAN as f64;
    let (mut best_x, mut best_f) = (lo, f(lo));
    for i in 1..=SCAN {
        let x = lo + h * i as f64;
        let fx = f(x);
        if fx < best_f {
            best_x = x;
            best_f = fx;
        }
    }
    let (mut a, mut b) = ((best_x - h).max(lo), (best_x + h).min(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    if fx < best_f {
        (x, fx)
    } else {
        (best_x, best_f)
    }
}
