//! On-disk layout of a run directory.
//!
//! ```text
//! <run>/config.json   config snapshot (re-runnable as-is)
//! <run>/metrics.csv   one row per epoch, epoch 0 = before training
//! <run>/rates.csv     applied dropout rate per step and hook site
//! <run>/model.json    architecture and parameters
//! <run>/run.json      metadata; written last, `status: complete`
//! <run>/bound.json    bound report (after `bound --run`)
//! <run>/bound.txt     the same as a text table
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use magdrop_core::bound::RateTrace;
use magdrop_core::train::{EpochMetrics, StepRates};
use magdrop_core::{Model, RunConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RATES_FILE: &str = "rates.csv";
pub const MODEL_FILE: &str = "model.json";
pub const RUN_FILE: &str = "run.json";
pub const BOUND_FILE: &str = "bound.json";
pub const BOUND_TABLE_FILE: &str = "bound.txt";
pub const MEASUREMENT_FILE: &str = "measurement.json";

pub const STATUS_COMPLETE: &str = "complete";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub name: String,
    pub method: String,
    pub dataset: String,
    pub status: String,
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub wall_clock_secs: f64,
    pub final_train_acc: f64,
    pub final_test_acc: f64,
    pub final_gen_gap: f64,
    /// Mean over sites of the time-averaged applied rate.
    pub mean_applied_rate: f64,
    /// `p_base / (1 + beta)` for MAGDrop runs.
    #[serde(default)]
    pub rate_ceiling: Option<f64>,
    #[serde(default)]
    pub rate_ceiling_exceeded: Option<bool>,
    pub deviations: Vec<String>,
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(magdrop_core::Error::from)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Artifact {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::Csv {
        path: path.to_path_buf(),
        source: e,
    })
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |e| CliError::Csv {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn metrics_header(n_sites: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "epoch",
        "train_loss",
        "train_acc",
        "test_loss",
        "test_acc",
        "gen_gap",
        "lr",
    ]
    .map(String::from)
    .to_vec();
    h.extend((0..n_sites).map(|i| format!("rate_site{i}")));
    h
}

pub fn write_metrics(path: &Path, rows: &[EpochMetrics]) -> CliResult<()> {
    let n_sites = rows.first().map_or(0, |r| r.site_rates.len());
    let mut w = csv_writer(path)?;
    w.write_record(metrics_header(n_sites))
        .map_err(csv_err(path))?;
    for r in rows {
        let mut rec = vec![
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.train_acc.to_string(),
            r.test_loss.to_string(),
            r.test_acc.to_string(),
            r.gen_gap.to_string(),
            r.lr.to_string(),
        ];
        rec.extend(r.site_rates.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn parse_f64(path: &Path, s: &str) -> CliResult<f64> {
    s.parse().map_err(|_| CliError::Artifact {
        path: path.to_path_buf(),
        detail: format!("`{s}` is not a number"),
    })
}

pub fn read_metrics(path: &Path) -> CliResult<Vec<EpochMetrics>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        if rec.len() < 7 {
            return Err(CliError::Artifact {
                path: path.to_path_buf(),
                detail: format!("row has {} fields, need at least 7", rec.len()),
            });
        }
        let f = |i: usize| parse_f64(path, &rec[i]);
        out.push(EpochMetrics {
            epoch: f(0)? as usize,
            train_loss: f(1)?,
            train_acc: f(2)?,
            test_loss: f(3)?,
            test_acc: f(4)?,
            gen_gap: f(5)?,
            lr: f(6)?,
            site_rates: (7..rec.len()).map(f).collect::<CliResult<_>>()?,
        });
    }
    Ok(out)
}

pub fn write_rates(path: &Path, n_sites: usize, steps: &[StepRates]) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["step".to_string(), "epoch".to_string()];
    header.extend((0..n_sites).map(|i| format!("site{i}")));
    w.write_record(&header).map_err(csv_err(path))?;
    for s in steps {
        let mut rec = vec![s.step.to_string(), s.epoch.to_string()];
        rec.extend((0..n_sites).map(|i| {
            s.rates
                .get(i)
                .copied()
                .flatten()
                .map_or_else(String::new, |r| r.to_string())
        }));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Rebuilds the rate trace from `rates.csv`; empty cells are steps where the
/// site was not masked.
pub fn read_rate_trace(path: &Path) -> CliResult<RateTrace> {
    if !path.is_file() {
        return Err(CliError::Core(magdrop_core::Error::State(format!(
            "rate trace {} is missing",
            path.display()
        ))));
    }
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let n_sites = r.headers().map_err(csv_err(path))?.len().saturating_sub(2);
    let mut trace = RateTrace::with_sites(n_sites);
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        for site in 0..n_sites {
            let cell = &rec[site + 2];
            if !cell.is_empty() {
                trace.sites[site].push(parse_f64(path, cell)?);
            }
        }
    }
    Ok(trace)
}

pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        RunDir { path: path.into() }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn config(&self) -> CliResult<RunConfig> {
        let text = read_text(&self.file(CONFIG_FILE))?;
        Ok(RunConfig::from_json(&text)?)
    }

    pub fn info(&self) -> CliResult<RunInfo> {
        read_json(&self.file(RUN_FILE))
    }

    pub fn model(&self) -> CliResult<Model> {
        let model: Model = read_json(&self.file(MODEL_FILE))?;
        Ok(model.validate()?)
    }

    pub fn metrics(&self) -> CliResult<Vec<EpochMetrics>> {
        read_metrics(&self.file(METRICS_FILE))
    }

    /// Errors unless training finished and wrote its metadata.
    pub fn require_complete(&self) -> CliResult<RunInfo> {
        let path = self.file(RUN_FILE);
        if !path.is_file() {
            return Err(CliError::Core(magdrop_core::Error::State(format!(
                "{} has no {RUN_FILE}; bounds are measured only after training completes",
                self.path.display()
            ))));
        }
        let info = self.info()?;
        if info.status != STATUS_COMPLETE {
            return Err(CliError::Core(magdrop_core::Error::State(format!(
                "run {} has status `{}`",
                self.path.display(),
                info.status
            ))));
        }
        Ok(info)
    }
}
