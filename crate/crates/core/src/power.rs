//! Distortion-aware power allocation.
//!
//! Every transmitting device inverts its channel so that `√ρ_k |h_k| = λ` in
//! each round; the server then normalises by `ξ = λ` and the aggregate is
//! unbiased. The common amplitude is the smaller of
//!
//! * `λ̃`, the largest value the peak-power limit `(1 + κ_k) ρ_k ≤ ρ_max`
//!   allows for the weakest device, and
//! * `λ_p`, the largest value that keeps `(Δ/σ)² = 4λ² / (N0 + λ² Σκ)` within
//!   the round's share of the privacy budget.

use std::io::Write;

use serde::Serialize;

use crate::channel::ChannelState;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::privacy::{delta_round, sigma_from_parts};

/// Privacy ceiling on λ for one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaCap {
    Bounded(f64),
    /// `ν_t Σκ ≥ 4`: distortion alone keeps the ratio below the cap.
    Unbounded,
}

impl LambdaCap {
    pub fn value(self) -> f64 {
        match self {
            LambdaCap::Bounded(v) => v,
            LambdaCap::Unbounded => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LambdaSolver {
    #[default]
    ClosedForm,
    LineSearch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Binding {
    Peak,
    Privacy,
}

impl Binding {
    pub fn as_str(self) -> &'static str {
        match self {
            Binding::Peak => "peak",
            Binding::Privacy => "privacy",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoPrivacyAllocation {
    pub powers: Vec<f64>,
    pub lambda_tilde: f64,
    pub weakest: usize,
}

/// One round of a [`PowerPlan`].
#[derive(Debug, Clone, PartialEq)]
pub struct RoundAllocation {
    pub powers: Vec<f64>,
    pub lambda: f64,
    pub lambda_tilde: f64,
    pub lambda_privacy: LambdaCap,
    pub weakest: usize,
    pub receiver_norm: f64,
    pub binding: Binding,
    /// Devices excluded from this round (zero-norm updates).
    pub silent: Vec<usize>,
}

/// `(Δ/σ)²` of an aligned round as a function of λ.
pub fn aligned_ratio(noise_power: f64, kappa_sum: f64, lambda: f64) -> f64 {
    let l2 = lambda * lambda;
    4.0 * l2 / (noise_power + l2 * kappa_sum)
}

fn check_gains(gains: &[f64], n: usize) -> Result<()> {
    if gains.len() != n {
        return Err(Error::dim(format!("{} gains for {n} devices", gains.len())));
    }
    if let Some(k) = gains.iter().position(|g| !(*g > 0.0 && g.is_finite())) {
        return Err(Error::Singular { device: k });
    }
    Ok(())
}

/// Channel-inversion allocation without a privacy constraint.
///
/// The anchor device `j` is the one with the smallest `|h_k|² / (1 + κ_k)`,
/// i.e. the lowest amplitude it can reach at full power. With a common κ this
/// is the weakest channel. Ties go to the lowest index.
pub fn allocate_no_privacy(cfg: &SystemConfig, gains: &[f64]) -> Result<NoPrivacyAllocation> {
    allocate_no_privacy_masked(cfg, gains, &vec![true; gains.len()])
}

pub fn allocate_no_privacy_masked(
    cfg: &SystemConfig,
    gains: &[f64],
    active: &[bool],
) -> Result<NoPrivacyAllocation> {
    check_gains(gains, cfg.num_devices)?;
    if active.len() != gains.len() {
        return Err(Error::dim("activity mask length"));
    }
    let mut weakest: Option<(usize, f64)> = None;
    for (k, (&g, &on)) in gains.iter().zip(active).enumerate() {
        if !on {
            continue;
        }
        let reach = g * g / (1.0 + cfg.kappas[k]);
        match weakest {
            Some((_, best)) if reach >= best => {}
            _ => weakest = Some((k, reach)),
        }
    }
    let (j, reach) = weakest.ok_or(Error::Empty("transmitting devices"))?;
    let lambda_tilde = (cfg.peak_power_mw * reach).sqrt();
    let l2 = lambda_tilde * lambda_tilde;
    let powers = gains
        .iter()
        .zip(active)
        .enumerate()
        .map(|(k, (&g, &on))| match (on, k == j) {
            (false, _) => 0.0,
            (true, true) => cfg.peak_power_mw / (1.0 + cfg.kappas[k]),
            (true, false) => l2 / (g * g),
        })
        .collect();
    Ok(NoPrivacyAllocation {
        powers,
        lambda_tilde,
        weakest: j,
    })
}

/// Closed-form privacy ceiling on λ for a per-round cap `ν_t`.
pub fn lambda_privacy_closed_form(noise_power: f64, kappa_sum: f64, nu_t: f64) -> LambdaCap {
    let denom = 4.0 - nu_t * kappa_sum;
    if denom <= 0.0 {
        LambdaCap::Unbounded
    } else {
        LambdaCap::Bounded((nu_t * noise_power / denom).sqrt())
    }
}

/// Bisection for the largest λ in (0, λ_hi] with `4λ²/(N0 + λ²Σκ) ≤ ν_t`.
pub fn lambda_privacy_line_search(noise_power: f64, kappa_sum: f64, nu_t: f64, lambda_hi: f64) -> f64 {
    if aligned_ratio(noise_power, kappa_sum, lambda_hi) <= nu_t {
        return lambda_hi;
    }
    let (mut lo, mut hi) = (0.0f64, lambda_hi);
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if aligned_ratio(noise_power, kappa_sum, mid) <= nu_t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Allocation for one round. `nu_cap = None` disables the privacy constraint.
pub fn allocate_round(
    cfg: &SystemConfig,
    gains: &[f64],
    nu_cap: Option<f64>,
    solver: LambdaSolver,
) -> Result<RoundAllocation> {
    allocate_round_masked(cfg, gains, &vec![true; gains.len()], nu_cap, solver)
}

pub fn allocate_round_masked(
    cfg: &SystemConfig,
    gains: &[f64],
    active: &[bool],
    nu_cap: Option<f64>,
    solver: LambdaSolver,
) -> Result<RoundAllocation> {
    let base = allocate_no_privacy_masked(cfg, gains, active)?;
    let silent: Vec<usize> = (0..gains.len()).filter(|&k| !active[k]).collect();
    let lambda_privacy = match nu_cap {
        None => LambdaCap::Unbounded,
        Some(nu_t) => {
            if !(nu_t > 0.0) {
                return Err(Error::domain(format!("per-round budget must be positive, got {nu_t}")));
            }
            let kappa_sum: f64 = (0..gains.len()).filter(|&k| active[k]).map(|k| cfg.kappas[k]).sum();
            match solver {
                LambdaSolver::ClosedForm => lambda_privacy_closed_form(cfg.noise_power_mw, kappa_sum, nu_t),
                LambdaSolver::LineSearch => {
                    let v = lambda_privacy_line_search(cfg.noise_power_mw, kappa_sum, nu_t, base.lambda_tilde);
                    if v >= base.lambda_tilde {
                        LambdaCap::Unbounded
                    } else {
                        LambdaCap::Bounded(v)
                    }
                }
            }
        }
    };
    if lambda_privacy.value() >= base.lambda_tilde {
        return Ok(RoundAllocation {
            powers: base.powers,
            lambda: base.lambda_tilde,
            lambda_tilde: base.lambda_tilde,
            lambda_privacy,
            weakest: base.weakest,
            receiver_norm: base.lambda_tilde,
            binding: Binding::Peak,
            silent,
        });
    }
    let mut lambda = lambda_privacy.value();
    let nu_t = nu_cap.expect("bounded cap implies a budget");
    let mut powers = aligned_powers(gains, active, lambda);
    // closed-form rounding can overshoot the cap by an ulp
    while realized_ratio(cfg, gains, &powers)? > nu_t {
        lambda *= 1.0 - 1e-13;
        powers = aligned_powers(gains, active, lambda);
    }
    Ok(RoundAllocation {
        powers,
        lambda,
        lambda_tilde: base.lambda_tilde,
        lambda_privacy,
        weakest: base.weakest,
        receiver_norm: lambda,
        binding: Binding::Privacy,
        silent,
    })
}

fn aligned_powers(gains: &[f64], active: &[bool], lambda: f64) -> Vec<f64> {
    let l2 = lambda * lambda;
    gains
        .iter()
        .zip(active)
        .map(|(g, &on)| if on { l2 / (g * g) } else { 0.0 })
        .collect()
}

fn realized_ratio(cfg: &SystemConfig, gains: &[f64], powers: &[f64]) -> Result<f64> {
    let d = delta_round(gains, powers)?;
    let s = sigma_from_parts(cfg.noise_power_mw, &cfg.kappas, gains, powers)?;
    Ok((d / s).powi(2))
}

/// Expected squared error of the recovered gradient under alignment,
/// `d (N0 + λ² Σκ) / (K² λ²)`, summed over all d entries.
pub fn expected_mse(cfg: &SystemConfig, lambda: f64, dim: usize) -> Result<f64> {
    expected_mse_with(cfg.noise_power_mw, cfg.kappa_sum(), cfg.num_devices, lambda, dim)
}

pub fn expected_mse_with(
    noise_power: f64,
    kappa_sum: f64,
    num_devices: usize,
    lambda: f64,
    dim: usize,
) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::domain(format!("lambda must be positive, got {lambda}")));
    }
    let k = num_devices as f64;
    let l2 = lambda * lambda;
    Ok(dim as f64 * (noise_power + l2 * kappa_sum) / (k * k * l2))
}

/// Per-round allocations for a whole run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PowerPlan {
    pub rounds: Vec<RoundAllocation>,
}

#[derive(Serialize)]
struct PlanRow<'a> {
    round: usize,
    device: usize,
    power_mw: f64,
    lambda: f64,
    lambda_tilde: f64,
    lambda_p: f64,
    binding_constraint: &'a str,
}

impl PowerPlan {
    pub fn num_rounds(&self) -> usize {
        self.rounds.len()
    }

    pub fn round(&self, t: usize) -> Result<&RoundAllocation> {
        self.rounds.get(t).ok_or(Error::Index {
            what: "round",
            index: t,
            len: self.rounds.len(),
        })
    }

    pub fn push(&mut self, round: RoundAllocation) {
        self.rounds.push(round);
    }

    /// CSV with one row per (round, device). An unbounded `λ_p` is written as `inf`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for (t, r) in self.rounds.iter().enumerate() {
            for (k, &p) in r.powers.iter().enumerate() {
                out.serialize(PlanRow {
                    round: t,
                    device: k,
                    power_mw: p,
                    lambda: r.lambda,
                    lambda_tilde: r.lambda_tilde,
                    lambda_p: r.lambda_privacy.value(),
                    binding_constraint: r.binding.as_str(),
                })?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Allocates every round of `state`. `caps[t]` is the round's ν budget;
/// `None` gives the privacy-free plan.
pub fn allocate_plan(
    cfg: &SystemConfig,
    state: &ChannelState,
    caps: Option<&[f64]>,
    solver: LambdaSolver,
) -> Result<PowerPlan> {
    if let Some(c) = caps {
        if c.len() != state.num_rounds() {
            return Err(Error::dim(format!("{} caps for {} rounds", c.len(), state.num_rounds())));
        }
    }
    let mut plan = PowerPlan::default();
    for t in 0..state.num_rounds() {
        plan.push(allocate_round(cfg, state.gains(t)?, caps.map(|c| c[t]), solver)?);
    }
    Ok(plan)
}
