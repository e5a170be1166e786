//! Experiment reports and their on-disk artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scenarios::stats::Histogram;

/// Results of one setting (a calibration size, a method, a controller, ...).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    /// Coverage the guarantee promises, when there is one.
    pub target: Option<f64>,
    /// Calibrated quantile of each experiment.
    pub c_values: Vec<f64>,
    /// Fraction of experiments whose single fresh test was covered.
    pub ec: Option<f64>,
    /// Per-experiment coverage over the test batch.
    pub cec: Vec<f64>,
    pub metrics: BTreeMap<String, f64>,
}

impl RunSummary {
    pub fn new(label: impl Into<String>) -> Self {
        Self { label: label.into(), ..Default::default() }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    pub fn set(&mut self, name: &str, v: f64) {
        self.metrics.insert(name.to_string(), v);
    }
}

/// Columns over a shared abscissa, such as mean radius per forecast step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub label: String,
    pub x_name: String,
    pub x: Vec<f64>,
    pub columns: BTreeMap<String, Vec<f64>>,
}

impl Series {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec![self.x_name.clone()];
        header.extend(self.columns.keys().cloned());
        wr.write_record(&header)?;
        for (i, x) in self.x.iter().enumerate() {
            let mut rec = vec![format!("{x:?}")];
            rec.extend(self.columns.values().map(|c| format!("{:?}", c[i])));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    pub params: serde_json::Value,
    pub runs: Vec<RunSummary>,
    pub series: Vec<Series>,
    pub histograms: Vec<Histogram>,
    /// Wall-clock time, kept out of `report.json` so that file is reproducible.
    #[serde(skip)]
    pub runtime_ms: u128,
}

impl ExperimentReport {
    pub fn run(&self, label: &str) -> Option<&RunSummary> {
        self.runs.iter().find(|r| r.label == label)
    }

    /// Write `report.json`, `runtime.json`, `runs.csv` and one CSV per
    /// series and histogram into `dir`; returns the written paths.
    pub fn write_artifacts(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
            let p = dir.join(name);
            fs::write(&p, bytes)?;
            out.push(p);
            Ok(())
        };
        put("report.json".into(), serde_json::to_vec_pretty(self)?)?;
        put("runtime.json".into(), serde_json::to_vec(&serde_json::json!({ "runtime_ms": self.runtime_ms as u64 }))?)?;
        put("runs.csv".into(), self.runs_csv()?)?;
        for s in &self.series {
            let mut buf = Vec::new();
            s.write_csv(&mut buf)?;
            put(format!("{}.csv", s.label), buf)?;
        }
        for h in &self.histograms {
            let mut buf = Vec::new();
            h.write_csv(&mut buf)?;
            put(format!("hist_{}.csv", h.label), buf)?;
        }
        Ok(out)
    }

    /// One row per run: label, target, EC, mean CEC, then every metric.
    pub fn runs_csv(&self) -> Result<Vec<u8>> {
        let names: std::collections::BTreeSet<&String> = self.runs.iter().flat_map(|r| r.metrics.keys()).collect();
        let mut wr = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["label".to_string(), "target".into(), "ec".into(), "mean_cec".into()];
        header.extend(names.iter().map(|s| s.to_string()));
        wr.write_record(&header)?;
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
        for r in &self.runs {
            let mean_cec = if r.cec.is_empty() { None } else { Some(r.cec.iter().sum::<f64>() / r.cec.len() as f64) };
            let mut rec = vec![r.label.clone(), fmt(r.target), fmt(r.ec), fmt(mean_cec)];
            rec.extend(names.iter().map(|n| fmt(r.metrics.get(*n).copied())));
            wr.write_record(&rec)?;
        }
        wr.into_inner().map_err(|e| crate::Error::Io(e.into_error()))
    }
}
