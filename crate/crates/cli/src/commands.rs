use std::path::{Path, PathBuf};

use magdrop_core::bound::{
    back_solve_sigma, improvement_percent, magdrop_bound, measure_from_run, render_table,
    BoundInputs, BoundReport,
};
use magdrop_core::regularizers::RegularizerConfig;
use magdrop_core::train::{train, RunMetrics};
use magdrop_core::{Error, RunConfig};
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, RunDir, RunInfo, STATUS_COMPLETE};
use crate::error::{CliError, CliResult};

/// Runs training and writes every artifact into `config.output_dir`.
pub fn cmd_train(config: &RunConfig, data_root: &Path) -> CliResult<(RunMetrics, PathBuf)> {
    config.validate()?;
    let (train_set, test_set) = config.dataset.load(data_root, config.seed)?;
    let outcome = train(config, &train_set, &test_set)?;

    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(artifacts::io_err(dir))?;
    let run = RunDir::new(dir);
    // a stale run.json must not mark a half-written directory complete
    let _ = std::fs::remove_file(run.file(artifacts::RUN_FILE));

    artifacts::write_text(
        &run.file(artifacts::CONFIG_FILE),
        &(config.to_json() + "\n"),
    )?;
    artifacts::write_metrics(&run.file(artifacts::METRICS_FILE), &outcome.metrics.epochs)?;
    artifacts::write_rates(
        &run.file(artifacts::RATES_FILE),
        outcome.trace.sites.len(),
        &outcome.steps,
    )?;
    artifacts::write_json(&run.file(artifacts::MODEL_FILE), &outcome.model)?;

    let last = outcome
        .metrics
        .last()
        .expect("metrics always contain the epoch-0 row");
    let mean_rate = outcome.trace.mean_rate();
    let ceiling = match &config.regularizer {
        RegularizerConfig::Magdrop(m) => Some(m.rate_ceiling()),
        _ => None,
    };
    let info = RunInfo {
        name: config.name.clone(),
        method: config.regularizer.method_name().to_string(),
        dataset: config.dataset.name().to_string(),
        status: STATUS_COMPLETE.to_string(),
        seed: config.seed,
        train_size: train_set.len(),
        test_size: test_set.len(),
        epochs: config.epochs,
        batch_size: config.batch_size,
        wall_clock_secs: outcome.metrics.wall_clock_secs,
        final_train_acc: last.train_acc,
        final_test_acc: last.test_acc,
        final_gen_gap: last.gen_gap,
        mean_applied_rate: mean_rate,
        rate_ceiling: ceiling,
        rate_ceiling_exceeded: ceiling.map(|c| mean_rate > c),
        deviations: config.deviations(),
    };
    artifacts::write_json(&run.file(artifacts::RUN_FILE), &info)?;
    Ok((outcome.metrics, dir.clone()))
}

/// One named row of a direct-mode inputs file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundRow {
    pub method: String,
    pub inputs: BoundInputs,
    /// Bound gap to back-solve sigma from when `inputs.sigma` is absent.
    #[serde(default)]
    pub backsolve_target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundInputsFile {
    Rows { rows: Vec<BoundRow> },
    Single(BoundInputs),
}

impl BoundInputsFile {
    pub fn into_rows(self) -> Vec<BoundRow> {
        match self {
            BoundInputsFile::Rows { rows } => rows,
            BoundInputsFile::Single(inputs) => vec![BoundRow {
                method: "model".to_string(),
                inputs,
                backsolve_target: None,
            }],
        }
    }
}

pub enum BoundSource {
    Run(PathBuf),
    Inputs(PathBuf),
}

#[derive(Debug, Clone, Default)]
pub struct BoundFlags {
    /// Overrides sigma on every row.
    pub sigma: Option<f64>,
    /// Back-solves sigma on every row to hit this bound gap.
    pub backsolve_sigma: Option<f64>,
    /// Directory for bound.json / bound.txt; measure mode defaults to the run.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRowReport {
    pub method: String,
    /// `given` or `back-solved`.
    pub sigma_source: String,
    pub report: BoundReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundOutput {
    pub rows: Vec<BoundRowReport>,
    /// Improvement of the last row's bound gap over the first, in percent.
    pub improvement_percent: Option<f64>,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

impl BoundOutput {
    pub fn table(&self) -> String {
        let rows: Vec<(String, BoundReport)> = self
            .rows
            .iter()
            .map(|r| (r.method.clone(), r.report.clone()))
            .collect();
        let mut text = render_table(&rows);
        for r in &self.rows {
            text.push_str(&format!(
                "{}: sigma = {:.6} ({}), bound gap = {:.6}\n",
                r.method, r.report.sigma, r.sigma_source, r.report.bound_gap
            ));
        }
        if let Some(p) = self.improvement_percent {
            text.push_str(&format!(
                "improvement of {} over {}: {p:.2}%\n",
                self.rows.last().map_or("", |r| r.method.as_str()),
                self.rows[0].method
            ));
        }
        for d in &self.diagnostics {
            text.push_str(&format!("note: {d}\n"));
        }
        text
    }
}

fn evaluate_row(row: BoundRow, flags: &BoundFlags) -> CliResult<BoundRowReport> {
    let mut inputs = row.inputs;
    let target = flags.backsolve_sigma.or(row.backsolve_target);
    let sigma_source = if let Some(s) = flags.sigma {
        inputs.sigma = Some(s);
        "given"
    } else if inputs.sigma.is_some() {
        "given"
    } else if let Some(t) = target {
        inputs.sigma = Some(back_solve_sigma(t, &inputs)?);
        "back-solved"
    } else {
        return Err(CliError::Core(Error::Config(format!(
            "row `{}`: sigma is not set. Reported bound values often omit the prior width \
             and it has no safe default, so pass --sigma <s> or --backsolve-sigma <target bound gap>",
            row.method
        ))));
    };
    Ok(BoundRowReport {
        method: row.method,
        sigma_source: sigma_source.to_string(),
        report: magdrop_bound(&inputs)?,
    })
}

/// Evaluates rows, adding the first-vs-last improvement when there are two or more.
pub fn bound_rows(rows: Vec<BoundRow>, flags: &BoundFlags) -> CliResult<BoundOutput> {
    if rows.is_empty() {
        return Err(CliError::Core(Error::Config("no bound rows given".into())));
    }
    let rows: Vec<BoundRowReport> = rows
        .into_iter()
        .map(|r| evaluate_row(r, flags))
        .collect::<CliResult<_>>()?;
    let mut diagnostics: Vec<String> = rows
        .iter()
        .flat_map(|r| {
            r.report
                .diagnostics
                .iter()
                .map(move |d| format!("{}: {d}", r.method))
        })
        .collect();
    let improvement = if rows.len() >= 2 {
        let (a, b) = (&rows[0].report, &rows[rows.len() - 1].report);
        if a.sigma != b.sigma {
            diagnostics.push(format!(
                "rows use different prior widths ({:.6} vs {:.6}); the improvement compares bounds under different priors",
                a.sigma, b.sigma
            ));
        }
        Some(improvement_percent(a.bound_gap, b.bound_gap)?)
    } else {
        None
    };
    Ok(BoundOutput {
        rows,
        improvement_percent: improvement,
        diagnostics,
    })
}

/// `bound --inputs` or `bound --run`.
pub fn cmd_bound(
    source: &BoundSource,
    flags: &BoundFlags,
    data_root: &Path,
) -> CliResult<BoundOutput> {
    let (output, default_out) = match source {
        BoundSource::Inputs(path) => {
            let text = artifacts::read_text(path)?;
            let file: BoundInputsFile = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            (bound_rows(file.into_rows(), flags)?, None)
        }
        BoundSource::Run(dir) => {
            let run = RunDir::new(dir);
            let info = run.require_complete()?;
            let config = run.config()?;
            let mut model = run.model()?;
            let trace = artifacts::read_rate_trace(&run.file(artifacts::RATES_FILE))?;
            let (train_set, _) = config.dataset.load(data_root, config.seed)?;
            let train_set = if config.model.flat_input() {
                let flat = [train_set.sample_shape().iter().product::<usize>()];
                train_set.reshaped(&flat)?
            } else {
                train_set
            };
            let measurement = measure_from_run(
                &mut model,
                Some(&trace),
                &train_set,
                config.loss_clip_b,
                config.delta,
            )?;
            artifacts::write_json(&run.file(artifacts::MEASUREMENT_FILE), &measurement)?;
            let row = BoundRow {
                method: info.method,
                inputs: measurement.inputs,
                backsolve_target: None,
            };
            (bound_rows(vec![row], flags)?, Some(dir.clone()))
        }
    };
    if let Some(out) = flags.out.clone().or(default_out) {
        std::fs::create_dir_all(&out).map_err(artifacts::io_err(&out))?;
        artifacts::write_json(&out.join(artifacts::BOUND_FILE), &output)?;
        artifacts::write_text(&out.join(artifacts::BOUND_TABLE_FILE), &output.table())?;
    }
    Ok(output)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub run: String,
    pub method: String,
    pub dataset: String,
    pub train_acc: f64,
    pub test_acc: f64,
    /// Recomputed from the final metrics row.
    pub gen_gap: f64,
    pub bound_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
    pub mixed_datasets: bool,
}

fn compare_row(dir: &Path) -> CliResult<CompareRow> {
    let run = RunDir::new(dir);
    let info = run.require_complete()?;
    let metrics = run.metrics()?;
    let last = metrics.last().ok_or_else(|| CliError::Artifact {
        path: run.file(artifacts::METRICS_FILE),
        detail: "no rows".into(),
    })?;
    let bound_path = run.file(artifacts::BOUND_FILE);
    let bound_gap = if bound_path.is_file() {
        let out: BoundOutput = artifacts::read_json(&bound_path)?;
        out.rows.first().map(|r| r.report.bound_gap)
    } else {
        None
    };
    Ok(CompareRow {
        run: dir.display().to_string(),
        method: info.method,
        dataset: info.dataset,
        train_acc: last.train_acc,
        test_acc: last.test_acc,
        gen_gap: last.train_acc - last.test_acc,
        bound_gap,
    })
}

/// Reads every run directory on its own thread; rows keep the argument order.
pub fn cmd_compare(dirs: &[PathBuf]) -> CliResult<Comparison> {
    if dirs.is_empty() {
        return Err(CliError::Usage(
            "compare needs at least one run directory".into(),
        ));
    }
    let rows = std::thread::scope(|s| {
        let handles: Vec<_> = dirs
            .iter()
            .map(|d| s.spawn(move || compare_row(d)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("compare worker panicked"))
            .collect::<CliResult<Vec<_>>>()
    })?;
    let mixed_datasets = rows.iter().any(|r| r.dataset != rows[0].dataset);
    Ok(Comparison {
        rows,
        mixed_datasets,
    })
}

impl Comparison {
    fn with_delta(&self) -> bool {
        self.rows.len() >= 2
    }

    pub fn header(&self) -> Vec<&'static str> {
        let mut h = vec![
            "run",
            "method",
            "dataset",
            "train_acc",
            "test_acc",
            "gen_gap",
            "bound_gap",
        ];
        if self.with_delta() {
            h.extend(["test_acc_vs_first", "gen_gap_vs_first"]);
        }
        h
    }

    pub fn write_csv(&self, path: &Path) -> CliResult<()> {
        let csv_err = |e| CliError::Csv {
            path: path.to_path_buf(),
            source: e,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(self.header()).map_err(csv_err)?;
        let first = &self.rows[0];
        for r in &self.rows {
            let mut rec = vec![
                r.run.clone(),
                r.method.clone(),
                r.dataset.clone(),
                r.train_acc.to_string(),
                r.test_acc.to_string(),
                r.gen_gap.to_string(),
                r.bound_gap.map_or_else(String::new, |b| b.to_string()),
            ];
            if self.with_delta() {
                rec.push((r.test_acc - first.test_acc).to_string());
                rec.push((r.gen_gap - first.gen_gap).to_string());
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(artifacts::io_err(path))
    }

    pub fn table(&self) -> String {
        let header = [
            "Method",
            "Dataset",
            "Train Acc (%)",
            "Test Acc (%)",
            "Gen Gap (%)",
            "Bound gap",
        ];
        let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        if self.with_delta() {
            cells[0].push("Test vs first".into());
        }
        let first = &self.rows[0];
        for r in &self.rows {
            let mut row = vec![
                r.method.clone(),
                r.dataset.clone(),
                format!("{:.2}", r.train_acc),
                format!("{:.2}", r.test_acc),
                format!("{:.2}", r.gen_gap),
                r.bound_gap
                    .map_or_else(|| "-".into(), |b| format!("{b:.3}")),
            ];
            if self.with_delta() {
                row.push(format!("{:+.2}", r.test_acc - first.test_acc));
            }
            cells.push(row);
        }
        let widths: Vec<usize> = (0..cells[0].len())
            .map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in cells.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, &w))| {
                    if c < 2 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
                out.push('\n');
            }
        }
        if self.mixed_datasets {
            let mut names: Vec<&str> = self.rows.iter().map(|r| r.dataset.as_str()).collect();
            names.sort_unstable();
            names.dedup();
            out.push_str(&format!(
                "warning: runs use different datasets ({}); rows are not directly comparable\n",
                names.join(", ")
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FileKind {
    Json,
    Csv,
    Text,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileCheck {
    pub path: PathBuf,
    pub kind: FileKind,
    /// `None` when the file is valid or not checked.
    pub problem: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Validation {
    pub files: Vec<FileCheck>,
}

impl Validation {
    pub fn ok(&self) -> bool {
        self.files
            .iter()
            .all(|f| f.problem.is_none() && f.kind != FileKind::Other)
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for f in &self.files {
            let status = match (&f.kind, &f.problem) {
                (_, Some(p)) => format!("INVALID: {p}"),
                (FileKind::Json, None) => "ok (json)".into(),
                (FileKind::Csv, None) => "ok (csv)".into(),
                (FileKind::Text, None) => "text table, not checked".into(),
                (FileKind::Other, None) => "INVALID: not a json or csv artifact".into(),
            };
            out.push_str(&format!("{}: {status}\n", f.path.display()));
        }
        out
    }
}

fn check_csv(path: &Path) -> Option<String> {
    let mut r = match csv::ReaderBuilder::new().flexible(false).from_path(path) {
        Ok(r) => r,
        Err(e) => return Some(e.to_string()),
    };
    if let Err(e) = r.headers() {
        return Some(e.to_string());
    }
    r.records().find_map(|rec| rec.err().map(|e| e.to_string()))
}

/// Checks that every `.json` parses and every `.csv` has consistent records.
pub fn cmd_validate(dir: &Path) -> CliResult<Validation> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(artifacts::io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    let files = entries
        .into_iter()
        .map(|path| {
            let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
            let (kind, problem) = match ext {
                "json" => (
                    FileKind::Json,
                    artifacts::read_text(&path)
                        .map_err(|e| e.to_string())
                        .and_then(|t| {
                            serde_json::from_str::<serde_json::Value>(&t).map_err(|e| e.to_string())
                        })
                        .err(),
                ),
                "csv" => (FileKind::Csv, check_csv(&path)),
                "txt" => (FileKind::Text, None),
                _ => (FileKind::Other, None),
            };
            FileCheck {
                path,
                kind,
                problem,
            }
        })
        .collect();
    Ok(Validation { files })
}
