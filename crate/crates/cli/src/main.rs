use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use otadp::learning::AllocationMode;
use otadp::ExperimentConfig;
use otadp_cli::error::{HarnessError, Result};
use otadp_cli::experiment::{comparison_cells, grid, run_experiment, ExperimentSpec};
use otadp_cli::files::{resolve_dir, write_atomic, DATA_DIR_ENV, DEFAULT_DATA_DIR, DEFAULT_OUTPUT_DIR, OUTPUT_DIR_ENV};
use otadp_cli::plot::emit_plot_data;
use otadp_cli::verify::{verify_privacy, VerifySpec, REPORT_FILE};
use otadp_cli::load_data;

const DEFAULT_SEED: u64 = 1;

#[derive(Parser)]
#[command(name = "otadp", version, about = "Over-the-air federated learning with distortion-based differential privacy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config with `system`, `learning` and `seed` sections (reference setup if omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Multi-trial sweep over distortion levels and allocation modes.
    Run {
        #[command(flatten)]
        common: Common,
        /// Comma-separated κ values; with --modes forms a full grid.
        #[arg(long, value_delimiter = ',')]
        kappas: Option<Vec<f64>>,
        /// Comma-separated modes: dp_aware, dp_unaware, no_privacy.
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<AllocationMode>>,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        /// Output directory (default: $OTADP_OUTPUT_DIR, then ./results).
        #[arg(long)]
        out: Option<PathBuf>,
        /// MNIST directory (default: $OTADP_DATA_DIR, then ./data/mnist-desk).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Worker threads (default: available cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Monte-Carlo check of the privacy-loss bound over random adjacent datasets.
    VerifyPrivacy {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "dp_aware")]
        mode: AllocationMode,
        #[arg(long, default_value_t = 20)]
        pairs: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Aggregates a run's metrics into `series,round,mean_acc,stderr`.
    PlotData {
        #[command(flatten)]
        common: Common,
        /// Directory holding metrics.csv (default: the output directory).
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Parses and validates a config, listing every violation.
    ValidateConfig {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::reference(0.01, DEFAULT_SEED),
    };
    if let Some(seed) = common.seed {
        cfg.seed.master_seed = seed;
    }
    Ok(cfg)
}

fn out_dir(flag: Option<&Path>) -> PathBuf {
    resolve_dir(flag, OUTPUT_DIR_ENV, DEFAULT_OUTPUT_DIR)
}

fn data_dir(flag: Option<&Path>) -> PathBuf {
    resolve_dir(flag, DATA_DIR_ENV, DEFAULT_DATA_DIR)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            common,
            kappas,
            modes,
            trials,
            out,
            data,
            jobs,
        } => {
            let cfg = load_config(&common)?;
            let cells = match (kappas, modes) {
                (None, None) => comparison_cells(),
                (k, m) => grid(
                    &k.unwrap_or_else(|| vec![cfg.system.kappas.first().copied().unwrap_or(0.0)]),
                    &m.unwrap_or_else(|| AllocationMode::ALL.to_vec()),
                ),
            };
            let (train, test) = load_data(&data_dir(data.as_deref()))?;
            let mut spec = ExperimentSpec::new(cfg, cells, trials, out_dir(out.as_deref()));
            if let Some(j) = jobs {
                spec.jobs = j.max(1);
            }
            let report = run_experiment(&spec, &train, &test)?;
            for s in &report.summary.series {
                match s.final_mean_acc() {
                    Some(acc) => println!("{:<28} final accuracy {:.4} over {} trial(s)", s.series, acc, s.completed_trials),
                    None => println!("{:<28} no completed trials", s.series),
                }
            }
            println!("metrics: {}", report.metrics_path.display());
            println!("summary: {}", report.summary_path.display());
            match report.summary.infeasible_count() {
                0 => Ok(()),
                n => Err(HarnessError::InfeasibleCells(n)),
            }
        }
        Command::VerifyPrivacy {
            common,
            mode,
            pairs,
            samples,
            out,
            data,
        } => {
            let cfg = load_config(&common)?;
            let (train, test) = load_data(&data_dir(data.as_deref()))?;
            let spec = VerifySpec {
                mode,
                pairs,
                samples,
                ..VerifySpec::new(cfg)
            };
            let report = verify_privacy(&spec, &train, &test)?;
            let json = serde_json::to_string_pretty(&report)?;
            let path = out_dir(out.as_deref()).join(REPORT_FILE);
            write_atomic(&path, json.as_bytes())?;
            println!(
                "ν = {:.6}, s = {:.6}, analytic bound = {:.3e}, verdict = {:?}",
                report.nu, report.s, report.analytic_bound, report.verdict
            );
            let worst = report.pairs.iter().map(|p| p.empirical_prob).fold(0.0, f64::max);
            println!("largest empirical Pr(|Γ| > ε) over {} pairs: {:.3e}", report.pairs.len(), worst);
            println!("report: {}", path.display());
            report.check()
        }
        Command::PlotData { common, metrics } => {
            // the config is only validated here; the metrics carry everything needed
            load_config(&common)?;
            let dir = metrics.unwrap_or_else(|| out_dir(None));
            let (path, rows) = emit_plot_data(&dir)?;
            println!("{} rows written to {}", rows.len(), path.display());
            Ok(())
        }
        Command::ValidateConfig { common } => {
            let cfg = load_config(&common)?;
            println!("config ok: K = {}, T = {}, ε = {}, δ = {}, model dim = {}",
                cfg.system.num_devices,
                cfg.system.num_rounds,
                cfg.system.epsilon,
                cfg.system.delta,
                cfg.learning.derived_model_dim()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
