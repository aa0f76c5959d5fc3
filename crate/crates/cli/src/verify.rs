//! Monte-Carlo check of the privacy bound over random adjacent pairs.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use otadp::channel::draw_channels;
use otadp::learning::{federated_run, model_for, partition, AllocationMode, Dataset, RunSpec, TrajectorySource};
use otadp::privacy::{solve_nu_budget, verify_violation_bound, AdjacentPair, BoundReport, Verdict};
use otadp::ExperimentConfig;

use crate::error::{HarnessError, Result};

pub const REPORT_FILE: &str = "privacy_report.json";

#[derive(Debug, Clone)]
pub struct VerifySpec {
    pub base: ExperimentConfig,
    pub mode: AllocationMode,
    pub pairs: usize,
    pub samples: usize,
}

impl VerifySpec {
    pub fn new(base: ExperimentConfig) -> Self {
        Self {
            base,
            mode: AllocationMode::DpAware,
            pairs: 20,
            samples: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub mode: AllocationMode,
    pub epsilon: f64,
    pub delta: f64,
    pub nu_star: f64,
    pub nu: f64,
    pub s: f64,
    pub analytic_bound: f64,
    pub verdict: Verdict,
    pub pairs: Vec<BoundReport>,
    pub violations: usize,
}

impl VerifyReport {
    /// Maps the report to the harness outcome: infeasible first, then any
    /// pair beyond the bound.
    pub fn check(&self) -> Result<()> {
        if self.verdict == Verdict::Infeasible {
            return Err(otadp::Error::Infeasible(format!(
                "ν = {:.4} leaves slack ε − ν/2 = {:.4} ≤ 0",
                self.nu, self.s
            ))
            .into());
        }
        if self.violations > 0 {
            return Err(HarnessError::BoundViolation {
                failed: self.violations,
                total: self.pairs.len(),
            });
        }
        Ok(())
    }
}

/// Trains once on the base partition (trial 0) to fix the plan and the
/// global-model trajectory, then checks `pairs` random adjacent datasets,
/// each replacing one training sample with a held-out one.
pub fn verify_privacy(spec: &VerifySpec, train: &Dataset, test: &Dataset) -> Result<VerifyReport> {
    if spec.pairs == 0 {
        return Err(HarnessError::Usage("need at least one adjacent pair".into()));
    }
    let sys = &spec.base.system;
    let seeds = spec.base.seed.for_trial(0);
    let shards = Arc::new(partition(train, sys.num_devices, &seeds)?);
    let channel = draw_channels(sys, &seeds);
    let run_spec = RunSpec::new(sys.clone(), spec.base.learning.clone(), spec.mode);
    let run = match federated_run(&run_spec, &shards, test, &channel, &seeds) {
        Ok(run) => run,
        Err(otadp::Error::Infeasible(msg)) => return Err(otadp::Error::Infeasible(msg).into()),
        Err(e) => return Err(e.into()),
    };
    let source = TrajectorySource {
        mlp: model_for(&spec.base.learning, test)?,
        trajectory: &run.trajectory,
        learning: &spec.base.learning,
        seeds,
    };
    let pair_seeds = seeds.derive("adjacent-pairs");
    let mut pairs = Vec::with_capacity(spec.pairs);
    for i in 0..spec.pairs {
        let pair = AdjacentPair::random(shards.clone(), test, &pair_seeds, i as u64)?;
        let mc = seeds.derive(&format!("monte-carlo-{i}"));
        pairs.push(verify_violation_bound(&pair, &run.plan, &channel, sys, &source, spec.samples, &mc)?);
    }
    let first = &pairs[0];
    Ok(VerifyReport {
        mode: spec.mode,
        epsilon: sys.epsilon,
        delta: sys.delta,
        nu_star: solve_nu_budget(sys.epsilon, sys.delta)?,
        nu: first.nu,
        s: first.s,
        analytic_bound: first.analytic_bound,
        verdict: first.verdict,
        violations: pairs.iter().filter(|p| !p.within_bound).count(),
        pairs,
    })
}
