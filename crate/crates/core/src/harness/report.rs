use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentKind;
use super::experiment::{ExperimentOutput, Method, TrialResult};
use crate::diagnostics::MetricsRow;
use crate::dynamics::ExitCondition;
use crate::error::{Error, Result};

/// Mean, median and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

/// `None` for an empty list. A single value has std 0.
pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    };
    let std = if m < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some(Summary { mean, median, std })
}

/// One row of `trials.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub experiment: ExperimentKind,
    pub dim: usize,
    pub ensemble_size: usize,
    pub method: Method,
    pub trial: usize,
    pub seed: u64,
    pub stream: u64,
    pub exit: ExitCondition,
    pub iterations: usize,
    pub metric: String,
    pub value: Option<f64>,
    pub input_digest: String,
    pub failure: Option<String>,
}

impl From<&TrialResult> for TrialSummary {
    fn from(r: &TrialResult) -> Self {
        Self {
            experiment: r.experiment,
            dim: r.dim,
            ensemble_size: r.ensemble_size,
            method: r.method,
            trial: r.trial,
            seed: r.seed,
            stream: r.stream,
            exit: r.exit,
            iterations: r.final_row.as_ref().map_or(0, |row| row.iter),
            metric: r.experiment.metric().to_string(),
            value: r.final_value(),
            input_digest: format!("{:016x}", r.input_digest),
            failure: r.record.failure.clone(),
        }
    }
}

/// Statistics for one (experiment, dim, J, method) cell. Failed runs count
/// toward `failed` but not toward the statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub experiment: ExperimentKind,
    pub dim: usize,
    pub ensemble_size: usize,
    pub method: Method,
    pub metric: String,
    pub trials: usize,
    pub target_reached: usize,
    pub max_iterations: usize,
    pub failed: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub std: Option<f64>,
}

pub fn aggregate(results: &[TrialResult]) -> Vec<AggregateReport> {
    let rows: Vec<TrialSummary> = results.iter().map(TrialSummary::from).collect();
    aggregate_summaries(&rows)
}

pub fn aggregate_summaries(rows: &[TrialSummary]) -> Vec<AggregateReport> {
    let mut cells: BTreeMap<(ExperimentKind, usize, usize, Method), Vec<&TrialSummary>> = BTreeMap::new();
    for r in rows {
        cells
            .entry((r.experiment, r.dim, r.ensemble_size, r.method))
            .or_default()
            .push(r);
    }
    cells
        .into_iter()
        .map(|((experiment, dim, ensemble_size, method), rs)| {
            let count = |e: ExitCondition| rs.iter().filter(|r| r.exit == e).count();
            let values: Vec<f64> = rs
                .iter()
                .filter(|r| r.exit != ExitCondition::Failed)
                .filter_map(|r| r.value)
                .collect();
            let s = summarize(&values);
            AggregateReport {
                experiment,
                dim,
                ensemble_size,
                method,
                metric: experiment.metric().to_string(),
                trials: rs.len(),
                target_reached: count(ExitCondition::TargetReached),
                max_iterations: count(ExitCondition::MaxIterations),
                failed: count(ExitCondition::Failed),
                mean: s.map(|s| s.mean),
                median: s.map(|s| s.median),
                std: s.map(|s| s.std),
            }
        })
        .collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], json: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    if json {
        let text = serde_json::to_string_pretty(rows).map_err(|e| Error::numeric(e.to_string()))?;
        std::fs::write(path.with_extension("json"), text + "\n")?;
    }
    Ok(())
}

/// Per-iteration rows. Absent diagnostics are empty fields.
pub fn write_record_csv(path: &Path, rows: &[MetricsRow], json: bool) -> Result<()> {
    if rows.is_empty() {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(MetricsRow::COLUMNS)?;
        w.flush()?;
        if json {
            std::fs::write(path.with_extension("json"), "[]\n")?;
        }
        return Ok(());
    }
    write_rows(path, rows, json)
}

pub fn read_record_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn read_trials_csv(path: &Path) -> Result<Vec<TrialSummary>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_summary_csv(path: &Path, reports: &[AggregateReport], json: bool) -> Result<()> {
    write_rows(path, reports, json)
}

pub fn record_file_name(r: &TrialResult) -> String {
    format!(
        "{}_d{}_J{}_{}_trial{:03}.csv",
        r.experiment.as_str(),
        r.dim,
        r.ensemble_size,
        r.method.as_str(),
        r.trial
    )
}

/// Files written by [`write_outputs`].
#[derive(Debug, Clone)]
pub struct WrittenFiles {
    pub dir: PathBuf,
    pub records: Vec<PathBuf>,
    pub trials: PathBuf,
    pub summary: PathBuf,
}

/// Writes `<out>/<experiment>/{records/*.csv, trials.csv, summary.csv, config.toml}`.
pub fn write_outputs(out: &ExperimentOutput, root: &Path, json: bool) -> Result<WrittenFiles> {
    let dir = root.join(out.config.experiment.as_str());
    let rec_dir = dir.join("records");
    std::fs::create_dir_all(&rec_dir)?;
    let mut records = Vec::with_capacity(out.results.len());
    for r in &out.results {
        let p = rec_dir.join(record_file_name(r));
        write_record_csv(&p, &r.record.rows, json)?;
        records.push(p);
    }
    let summaries: Vec<TrialSummary> = out.results.iter().map(TrialSummary::from).collect();
    let trials = dir.join("trials.csv");
    write_rows(&trials, &summaries, json)?;
    let summary = dir.join("summary.csv");
    write_summary_csv(&summary, &out.reports, json)?;
    std::fs::write(dir.join("config.toml"), out.config.to_toml()?)?;
    Ok(WrittenFiles {
        dir,
        records,
        trials,
        summary,
    })
}

/// A fixed-width table of reports for terminal output.
pub fn format_reports(reports: &[AggregateReport]) -> String {
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4e}"));
    let mut s = format!(
        "{:<15} {:>5} {:>5} {:<5} {:<14} {:>11} {:>11} {:>11} {:>6} {:>6} {:>6}\n",
        "experiment", "dim", "J", "meth", "metric", "mean", "median", "std", "target", "maxit", "failed"
    );
    for r in reports {
        s += &format!(
            "{:<15} {:>5} {:>5} {:<5} {:<14} {:>11} {:>11} {:>11} {:>6} {:>6} {:>6}\n",
            r.experiment.as_str(),
            r.dim,
            r.ensemble_size,
            r.method.as_str(),
            r.metric,
            fmt(r.mean),
            fmt(r.median),
            fmt(r.std),
            r.target_reached,
            r.max_iterations,
            r.failed
        );
    }
    s
}
