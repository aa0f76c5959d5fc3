//! The T-round loop: broadcast, local updates, allocation, over-the-air
//! aggregation, server step, evaluation.

use serde::{Deserialize, Serialize};

use super::data::{Dataset, LocalDataset};
use super::local::local_update;
use super::mlp::{Evaluation, Mlp, ModelParams};
use super::optim::Optimizer;
use crate::channel::ChannelState;
use crate::config::{LearningConfig, SystemConfig};
use crate::error::{Error, Result};
use crate::link::{normalized_average, round_trip, GradientPayload};
use crate::power::{allocate_round_masked, expected_mse_with, Binding, LambdaSolver, PowerPlan};
use crate::privacy::{solve_nu_budget, split_budget, PayloadSource, PrivacyLedger, Verdict};
use crate::rng::SeedPolicy;

/// Per-round budgets are shrunk by this relative margin so the summed ν stays
/// strictly below ν* after floating-point accumulation.
pub const BUDGET_MARGIN: f64 = 1e-9;

/// How transmit powers are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationMode {
    /// Privacy-constrained, using the true distortion levels.
    DpAware,
    /// Privacy-constrained, but allocated as if κ = 0.
    DpUnaware,
    /// Peak-power channel inversion only.
    NoPrivacy,
}

impl AllocationMode {
    pub const ALL: [AllocationMode; 3] = [AllocationMode::DpAware, AllocationMode::DpUnaware, AllocationMode::NoPrivacy];

    pub fn as_str(self) -> &'static str {
        match self {
            AllocationMode::DpAware => "dp_aware",
            AllocationMode::DpUnaware => "dp_unaware",
            AllocationMode::NoPrivacy => "no_privacy",
        }
    }

    pub fn is_private(self) -> bool {
        self != AllocationMode::NoPrivacy
    }
}

impl std::str::FromStr for AllocationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::domain(format!("unknown mode {s:?} (expected dp_aware, dp_unaware or no_privacy)")))
    }
}

impl std::fmt::Display for AllocationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    /// Hardware as it really is; drives the simulated distortion.
    pub system: SystemConfig,
    /// Hardware as the allocator believes it to be.
    pub allocation: SystemConfig,
    pub learning: LearningConfig,
    pub private: bool,
    pub solver: LambdaSolver,
}

impl RunSpec {
    pub fn new(system: SystemConfig, learning: LearningConfig, mode: AllocationMode) -> Self {
        let allocation = match mode {
            AllocationMode::DpUnaware => system.with_ideal_hardware(),
            _ => system.clone(),
        };
        Self {
            system,
            allocation,
            learning,
            private: mode.is_private(),
            solver: LambdaSolver::ClosedForm,
        }
    }

    /// Per-round ν caps, or `None` without a privacy constraint.
    pub fn round_caps(&self) -> Result<Option<Vec<f64>>> {
        if !self.private {
            return Ok(None);
        }
        let nu_star = solve_nu_budget(self.system.epsilon, self.system.delta)?;
        Ok(Some(split_budget(nu_star * (1.0 - BUDGET_MARGIN), self.system.num_rounds)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundMetrics {
    /// 1-based: the model evaluated after `round` aggregations.
    pub round: usize,
    pub accuracy: f64,
    pub loss: f64,
    pub lambda: f64,
    pub delta: f64,
    pub sigma: f64,
    /// `(Δ/σ)²` of this round.
    pub ratio: f64,
    /// Cumulative ν after this round.
    pub nu_used: f64,
    /// `‖∇̂F − (1/K) Σ g_k/‖g_k‖‖²` realised this round.
    pub mse_emp: f64,
    pub mse_expected: f64,
    pub binding: Binding,
    pub silent: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub initial: Evaluation,
    pub rounds: Vec<RoundMetrics>,
    pub ledger: PrivacyLedger,
    pub plan: PowerPlan,
    /// Global model broadcast at the start of each round.
    pub trajectory: Vec<ModelParams>,
    pub final_model: ModelParams,
}

impl RunOutcome {
    pub fn final_accuracy(&self) -> f64 {
        self.rounds.last().map_or(self.initial.accuracy, |r| r.accuracy)
    }
}

pub fn model_for(learning: &LearningConfig, data: &Dataset) -> Result<Mlp> {
    if data.dim() != learning.input_dim {
        return Err(Error::dim(format!(
            "data has {} features, config expects {}",
            data.dim(),
            learning.input_dim
        )));
    }
    if data.num_classes() > learning.num_classes {
        return Err(Error::dim(format!(
            "data has {} classes, config expects {}",
            data.num_classes(),
            learning.num_classes
        )));
    }
    Ok(Mlp::new(learning.input_dim, learning.hidden_units, learning.num_classes))
}

/// Replays local training along a recorded global-model trajectory, so the
/// privacy verifier can ask what a device would have sent from another shard.
#[derive(Debug, Clone)]
pub struct TrajectorySource<'a> {
    pub mlp: Mlp,
    pub trajectory: &'a [ModelParams],
    pub learning: &'a LearningConfig,
    pub seeds: SeedPolicy,
}

impl PayloadSource for TrajectorySource<'_> {
    fn payload(&self, shard: &LocalDataset, device: usize, round: usize) -> Result<GradientPayload> {
        let theta = self.trajectory.get(round).ok_or(Error::Index {
            what: "round",
            index: round,
            len: self.trajectory.len(),
        })?;
        local_update(&self.mlp, &theta.0, shard, self.learning, &self.seeds, device, round)
    }
}

/// Local updates of every device for one round.
pub fn collect_payloads(
    mlp: &Mlp,
    theta: &[f64],
    shards: &[LocalDataset],
    learning: &LearningConfig,
    seeds: &SeedPolicy,
    round: usize,
) -> Result<Vec<GradientPayload>> {
    shards
        .iter()
        .enumerate()
        .map(|(k, shard)| local_update(mlp, theta, shard, learning, seeds, k, round))
        .collect()
}

/// Runs all rounds of one training run.
///
/// Fails with [`Error::Infeasible`] if a privacy-constrained run ends with a
/// ledger that is not satisfied.
pub fn federated_run(
    spec: &RunSpec,
    shards: &[LocalDataset],
    test: &Dataset,
    channel: &ChannelState,
    seeds: &SeedPolicy,
) -> Result<RunOutcome> {
    let sys = &spec.system;
    if shards.len() != sys.num_devices || channel.num_devices() != sys.num_devices {
        return Err(Error::dim(format!(
            "{} shards and {} channel devices for {} devices",
            shards.len(),
            channel.num_devices(),
            sys.num_devices
        )));
    }
    if channel.num_rounds() < sys.num_rounds {
        return Err(Error::dim(format!(
            "channel covers {} rounds, run needs {}",
            channel.num_rounds(),
            sys.num_rounds
        )));
    }
    if spec.allocation.num_devices != sys.num_devices {
        return Err(Error::dim("allocation and system configs disagree on K"));
    }
    let mlp = model_for(&spec.learning, test)?;
    let caps = spec.round_caps()?;
    let mut theta = mlp.init(seeds).0;
    let mut server = Optimizer::new(spec.learning.server_optimizer, spec.learning.server_learning_rate, theta.len());
    let initial = mlp.evaluate(&theta, test)?;

    let mut ledger = PrivacyLedger::new(sys.epsilon, sys.delta);
    let mut plan = PowerPlan::default();
    let mut rounds = Vec::with_capacity(sys.num_rounds);
    let mut trajectory = Vec::with_capacity(sys.num_rounds);

    for t in 0..sys.num_rounds {
        trajectory.push(ModelParams(theta.clone()));
        let payloads = collect_payloads(&mlp, &theta, shards, &spec.learning, seeds, t)?;
        let active: Vec<bool> = payloads.iter().map(GradientPayload::is_transmittable).collect();
        if !active.iter().any(|&a| a) {
            return Err(Error::Empty("transmitting devices"));
        }
        let gains = channel.gains(t)?;
        let alloc = allocate_round_masked(&spec.allocation, gains, &active, caps.as_ref().map(|c| c[t]), spec.solver)?;
        let (estimate, diag) = round_trip(&alloc, &payloads, gains, sys, seeds, t)?;
        ledger.record(diag.delta, diag.sigma)?;

        let target = normalized_average(&payloads);
        let mse_emp: f64 = estimate.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum();
        let kappa_on: f64 = (0..sys.num_devices).filter(|&k| active[k]).map(|k| sys.kappas[k]).sum();
        let mse_expected = expected_mse_with(sys.noise_power_mw, kappa_on, sys.num_devices, alloc.lambda, theta.len())?;

        server.step(&mut theta, &estimate);
        let eval = mlp.evaluate(&theta, test)?;
        rounds.push(RoundMetrics {
            round: t + 1,
            accuracy: eval.accuracy,
            loss: eval.loss,
            lambda: alloc.lambda,
            delta: diag.delta,
            sigma: diag.sigma,
            ratio: (diag.delta / diag.sigma).powi(2),
            nu_used: ledger.nu,
            mse_emp,
            mse_expected,
            binding: alloc.binding,
            silent: alloc.silent.len(),
        });
        plan.push(alloc);
    }

    if spec.private && ledger.verdict != Verdict::Satisfied {
        return Err(Error::Infeasible(format!(
            "run finished with ν = {:.6} (slack {:.6}, tail {:.3e}) against δ = {}",
            ledger.nu, ledger.slack, ledger.tail, sys.delta
        )));
    }
    Ok(RunOutcome {
        initial,
        rounds,
        ledger,
        plan,
        trajectory,
        final_model: ModelParams(theta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::draw_channels;
    use crate::config::{OptimizerKind, UpdateMode};
    use crate::learning::data::{partition, synth_dataset, SynthSpec};

    fn setup(kappa: f64) -> (SystemConfig, LearningConfig, Vec<LocalDataset>, Dataset, ChannelState, SeedPolicy) {
        let seeds = SeedPolicy::new(11);
        let data = synth_dataset(
            SynthSpec {
                classes: 3,
                dims: 6,
                per_class: 40,
                separation: 4.0,
            },
            &seeds,
        )
        .unwrap();
        let sys = SystemConfig {
            num_devices: 4,
            num_rounds: 5,
            kappas: vec![kappa; 4],
            ..SystemConfig::reference(kappa)
        };
        let learning = LearningConfig {
            learning_rate: 0.05,
            server_learning_rate: 0.05,
            local_steps: 5,
            batch_size: 8,
            hidden_units: 8,
            input_dim: 6,
            num_classes: 3,
            local_optimizer: OptimizerKind::Sgd,
            server_optimizer: OptimizerKind::Adam,
            update_mode: UpdateMode::ModelDelta,
            model_dim: None,
        };
        let shards = partition(&data, 4, &seeds).unwrap();
        let channel = draw_channels(&sys, &seeds);
        (sys, learning, shards, data, channel, seeds)
    }

    #[test]
    fn private_run_satisfies_budget() {
        let (sys, learning, shards, test, channel, seeds) = setup(0.01);
        let out = federated_run(&RunSpec::new(sys.clone(), learning, AllocationMode::DpAware), &shards, &test, &channel, &seeds).unwrap();
        assert_eq!(out.rounds.len(), 5);
        assert_eq!(out.ledger.verdict, Verdict::Satisfied);
        let nu_star = solve_nu_budget(sys.epsilon, sys.delta).unwrap();
        assert!(out.ledger.nu <= nu_star);
        assert_eq!(out.trajectory.len(), 5);
    }

    #[test]
    fn runs_are_bit_identical() {
        let (sys, learning, shards, test, channel, seeds) = setup(0.1);
        let spec = RunSpec::new(sys, learning, AllocationMode::DpAware);
        let a = federated_run(&spec, &shards, &test, &channel, &seeds).unwrap();
        let b = federated_run(&spec, &shards, &test, &channel, &seeds).unwrap();
        assert_eq!(a.rounds, b.rounds);
        assert_eq!(a.final_model, b.final_model);
    }

    #[test]
    fn unaware_allocation_ignores_kappa() {
        let (sys, learning, shards, test, channel, seeds) = setup(0.1);
        let unaware = federated_run(&RunSpec::new(sys.clone(), learning.clone(), AllocationMode::DpUnaware), &shards, &test, &channel, &seeds).unwrap();
        let ideal = RunSpec::new(sys.with_ideal_hardware(), learning, AllocationMode::DpAware);
        let reference = federated_run(&ideal, &shards, &test, &channel, &seeds).unwrap();
        for (a, b) in unaware.plan.rounds.iter().zip(&reference.plan.rounds) {
            assert_eq!(a.powers, b.powers);
        }
        // true distortion still enters the effective noise
        assert!(unaware.rounds[0].sigma > reference.rounds[0].sigma);
    }

    #[test]
    fn noiseless_training_learns() {
        let (mut sys, mut learning, shards, test, channel, seeds) = setup(0.0);
        sys.noise_power_mw = 1e-12;
        learning.server_optimizer = OptimizerKind::Sgd;
        learning.server_learning_rate = 2.0;
        let out = federated_run(&RunSpec::new(sys, learning, AllocationMode::NoPrivacy), &shards, &test, &channel, &seeds).unwrap();
        assert!(out.final_accuracy() > 0.9, "{:?}", out.rounds.last());
        assert!(out.final_accuracy() > out.initial.accuracy);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in AllocationMode::ALL {
            assert_eq!(m.as_str().parse::<AllocationMode>().unwrap(), m);
        }
        assert!("dp".parse::<AllocationMode>().is_err());
    }
}
