//! Multi-trial sweeps over (κ, allocation mode) cells.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use otadp::channel::draw_channels;
use otadp::learning::{federated_run, partition, AllocationMode, Dataset, RunOutcome, RunSpec};
use otadp::ExperimentConfig;

use crate::error::{HarnessError, Result};
use crate::files::write_atomic;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// One curve of the comparison: a distortion level and an allocation mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub kappa: f64,
    pub mode: AllocationMode,
}

impl Cell {
    pub fn new(kappa: f64, mode: AllocationMode) -> Self {
        Self { kappa, mode }
    }

    pub fn series(&self) -> String {
        series_name(self.mode.as_str(), self.kappa)
    }
}

pub fn series_name(mode: &str, kappa: f64) -> String {
    format!("{mode}_kappa{kappa}")
}

/// Every (κ, mode) combination.
pub fn grid(kappas: &[f64], modes: &[AllocationMode]) -> Vec<Cell> {
    kappas
        .iter()
        .flat_map(|&k| modes.iter().map(move |&m| Cell::new(k, m)))
        .collect()
}

/// The six curves of the reference comparison: privacy-free ideal hardware,
/// distortion-aware allocation at κ ∈ {0, 0.01, 0.1} and distortion-unaware
/// allocation at κ ∈ {0.01, 0.1}.
pub fn comparison_cells() -> Vec<Cell> {
    vec![
        Cell::new(0.0, AllocationMode::NoPrivacy),
        Cell::new(0.0, AllocationMode::DpAware),
        Cell::new(0.01, AllocationMode::DpAware),
        Cell::new(0.1, AllocationMode::DpAware),
        Cell::new(0.01, AllocationMode::DpUnaware),
        Cell::new(0.1, AllocationMode::DpUnaware),
    ]
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub base: ExperimentConfig,
    pub cells: Vec<Cell>,
    pub trials: usize,
    pub output_dir: PathBuf,
    /// Worker threads; cells and trials are independent.
    pub jobs: usize,
}

impl ExperimentSpec {
    pub fn new(base: ExperimentConfig, cells: Vec<Cell>, trials: usize, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            base,
            cells,
            trials,
            output_dir: output_dir.into(),
            jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub trial: usize,
    pub round: usize,
    pub kappa: f64,
    pub mode: String,
    pub accuracy: f64,
    pub loss: f64,
    pub lambda: f64,
    pub nu_used: f64,
    pub mse_emp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub mean_acc: f64,
    pub stderr_acc: f64,
    pub mean_loss: f64,
    pub stderr_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub series: String,
    pub kappa: f64,
    pub mode: AllocationMode,
    pub completed_trials: usize,
    /// `(trial, reason)` for every trial that could not run.
    pub infeasible: Vec<(usize, String)>,
    pub rounds: Vec<RoundSummary>,
}

impl SeriesSummary {
    pub fn final_mean_acc(&self) -> Option<f64> {
        self.rounds.last().map(|r| r.mean_acc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub master_seed: u64,
    pub trials: usize,
    pub num_rounds: usize,
    pub series: Vec<SeriesSummary>,
}

impl ExperimentSummary {
    pub fn series(&self, kappa: f64, mode: AllocationMode) -> Option<&SeriesSummary> {
        self.series.iter().find(|s| s.kappa == kappa && s.mode == mode)
    }

    pub fn infeasible_count(&self) -> usize {
        self.series.iter().map(|s| s.infeasible.len()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub summary: ExperimentSummary,
    pub metrics_path: PathBuf,
    pub summary_path: PathBuf,
}

/// Mean and standard error (sample standard deviation over √n).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Trains one (cell, trial): fresh partition and channels from the trial's
/// substreams, shared by every cell of that trial.
pub fn run_cell(base: &ExperimentConfig, cell: Cell, trial: usize, train: &Dataset, test: &Dataset) -> otadp::Result<RunOutcome> {
    let seeds = base.seed.for_trial(trial as u64);
    let sys = base.system.with_kappa(cell.kappa);
    let shards = partition(train, sys.num_devices, &seeds)?;
    let channel = draw_channels(&sys, &seeds);
    federated_run(&RunSpec::new(sys, base.learning.clone(), cell.mode), &shards, test, &channel, &seeds)
}

pub fn outcome_rows(cell: Cell, trial: usize, outcome: &RunOutcome) -> Vec<MetricsRow> {
    outcome
        .rounds
        .iter()
        .map(|r| MetricsRow {
            trial,
            round: r.round,
            kappa: cell.kappa,
            mode: cell.mode.as_str().to_string(),
            accuracy: r.accuracy,
            loss: r.loss,
            lambda: r.lambda,
            nu_used: r.nu_used,
            mse_emp: r.mse_emp,
        })
        .collect()
}

fn csv_bytes<T: Serialize>(rows: &[T], header_only: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header_only)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))
}

const METRICS_HEADER: [&str; 9] = ["trial", "round", "kappa", "mode", "accuracy", "loss", "lambda", "nu_used", "mse_emp"];

enum TaskResult {
    Done(Vec<MetricsRow>),
    Infeasible(String),
}

/// Runs every (cell, trial), writes per-cell files as they finish, then the
/// combined metrics CSV and the summary JSON.
///
/// Infeasible cells are recorded in the summary and do not stop the sweep;
/// any other error does.
pub fn run_experiment(spec: &ExperimentSpec, train: &Dataset, test: &Dataset) -> Result<ExperimentReport> {
    if spec.cells.is_empty() || spec.trials == 0 {
        return Err(HarnessError::Usage("experiment needs at least one cell and one trial".into()));
    }
    let cells_dir = spec.output_dir.join("cells");
    let plans_dir = spec.output_dir.join("plans");
    let tasks: Vec<(usize, usize)> = (0..spec.cells.len())
        .flat_map(|c| (0..spec.trials).map(move |t| (c, t)))
        .collect();
    let results: Mutex<Vec<Option<Result<TaskResult>>>> = Mutex::new((0..tasks.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);

    std::thread::scope(|scope| {
        for _ in 0..spec.jobs.clamp(1, tasks.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(c, trial)) = tasks.get(i) else { break };
                let cell = spec.cells[c];
                let res = match run_cell(&spec.base, cell, trial, train, test) {
                    Ok(outcome) => {
                        let rows = outcome_rows(cell, trial, &outcome);
                        let stem = format!("{}_trial{trial}", cell.series());
                        csv_bytes(&rows, &METRICS_HEADER)
                            .and_then(|b| write_atomic(&cells_dir.join(format!("{stem}.csv")), &b))
                            .and_then(|_| {
                                let mut plan = Vec::new();
                                outcome.plan.write_csv(&mut plan)?;
                                write_atomic(&plans_dir.join(format!("{stem}.csv")), &plan)
                            })
                            .map(|_| TaskResult::Done(rows))
                    }
                    Err(otadp::Error::Infeasible(msg)) => Ok(TaskResult::Infeasible(msg)),
                    Err(e) => Err(e.into()),
                };
                results.lock().expect("result slots")[i] = Some(res);
            });
        }
    });

    let mut all_rows = Vec::new();
    let mut series: Vec<SeriesSummary> = spec
        .cells
        .iter()
        .map(|c| SeriesSummary {
            series: c.series(),
            kappa: c.kappa,
            mode: c.mode,
            completed_trials: 0,
            infeasible: Vec::new(),
            rounds: Vec::new(),
        })
        .collect();
    for ((c, trial), res) in tasks.iter().zip(results.into_inner().expect("result slots")) {
        match res.expect("every task ran")? {
            TaskResult::Done(rows) => {
                series[*c].completed_trials += 1;
                all_rows.extend(rows);
            }
            TaskResult::Infeasible(msg) => series[*c].infeasible.push((*trial, msg)),
        }
    }
    for s in &mut series {
        s.rounds = summarize_rows(all_rows.iter().filter(|r| r.mode == s.mode.as_str() && r.kappa == s.kappa));
    }
    let summary = ExperimentSummary {
        master_seed: spec.base.seed.master_seed,
        trials: spec.trials,
        num_rounds: spec.base.system.num_rounds,
        series,
    };
    let metrics_path = spec.output_dir.join(METRICS_FILE);
    let summary_path = spec.output_dir.join(SUMMARY_FILE);
    write_atomic(&metrics_path, &csv_bytes(&all_rows, &METRICS_HEADER)?)?;
    write_atomic(&summary_path, serde_json::to_string_pretty(&summary)?.as_bytes())?;
    write_atomic(&spec.output_dir.join("config.json"), spec.base.to_json_string()?.as_bytes())?;
    Ok(ExperimentReport {
        summary,
        metrics_path,
        summary_path,
    })
}

/// Per-round mean ± standard error over trials, rows taken in file order.
pub fn summarize_rows<'a>(rows: impl Iterator<Item = &'a MetricsRow>) -> Vec<RoundSummary> {
    let mut by_round: std::collections::BTreeMap<usize, (Vec<f64>, Vec<f64>)> = Default::default();
    for r in rows {
        let e = by_round.entry(r.round).or_default();
        e.0.push(r.accuracy);
        e.1.push(r.loss);
    }
    by_round
        .into_iter()
        .map(|(round, (acc, loss))| {
            let (mean_acc, stderr_acc) = mean_stderr(&acc);
            let (mean_loss, stderr_loss) = mean_stderr(&loss);
            RoundSummary {
                round,
                mean_acc,
                stderr_acc,
                mean_loss,
                stderr_loss,
            }
        })
        .collect()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<MetricsRow>, _>>()?;
    Ok(rows)
}
