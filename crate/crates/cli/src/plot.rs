//! Long-format curve data for external plotting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{HarnessError, Result};
use crate::experiment::{mean_stderr, read_metrics, series_name, MetricsRow, METRICS_FILE};
use crate::files::write_atomic;

pub const PLOT_FILE: &str = "plot_data.csv";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotRow {
    pub series: String,
    pub round: usize,
    pub mean_acc: f64,
    pub stderr: f64,
}

/// Aggregates trials per (series, round). Series keep their first-seen order.
///
/// Every trial of a series must cover the same rounds, otherwise the metrics
/// are treated as partial.
pub fn aggregate(rows: &[MetricsRow]) -> Result<Vec<PlotRow>> {
    if rows.is_empty() {
        return Err(HarnessError::Metrics("no metric rows".into()));
    }
    let mut order: Vec<String> = Vec::new();
    let mut data: BTreeMap<String, BTreeMap<usize, Vec<(usize, f64)>>> = BTreeMap::new();
    for r in rows {
        let name = series_name(&r.mode, r.kappa);
        if !data.contains_key(&name) {
            order.push(name.clone());
        }
        data.entry(name).or_default().entry(r.round).or_default().push((r.trial, r.accuracy));
    }
    let mut out = Vec::new();
    for name in order {
        let rounds = &data[&name];
        let mut expected: Option<Vec<usize>> = None;
        for (round, vals) in rounds {
            let mut trials: Vec<usize> = vals.iter().map(|v| v.0).collect();
            trials.sort_unstable();
            if trials.windows(2).any(|w| w[0] == w[1]) {
                return Err(HarnessError::Metrics(format!("{name}: duplicate trial at round {round}")));
            }
            match &expected {
                None => expected = Some(trials),
                Some(e) if *e != trials => {
                    return Err(HarnessError::Metrics(format!(
                        "{name}: round {round} has trials {trials:?}, other rounds have {e:?}"
                    )))
                }
                _ => {}
            }
            let acc: Vec<f64> = vals.iter().map(|v| v.1).collect();
            let (mean_acc, stderr) = mean_stderr(&acc);
            out.push(PlotRow {
                series: name.clone(),
                round: *round,
                mean_acc,
                stderr,
            });
        }
    }
    Ok(out)
}

/// Reads `metrics.csv` from `metrics_dir` and writes `plot_data.csv` next to it.
pub fn emit_plot_data(metrics_dir: &Path) -> Result<(PathBuf, Vec<PlotRow>)> {
    let src = metrics_dir.join(METRICS_FILE);
    if !src.is_file() {
        return Err(HarnessError::Metrics(format!("{} not found", src.display())));
    }
    let rows = aggregate(&read_metrics(&src)?)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
    let dst = metrics_dir.join(PLOT_FILE);
    write_atomic(&dst, &bytes)?;
    Ok((dst, rows))
}
