//! Privacy accounting for the over-the-air mechanism.
//!
//! The server sees the aggregate perturbed by the effective noise
//! `w_eff ~ N(0, σ² I)` with `σ² = N0 + Σ_k κ_k ρ_k |h_k|²`. Two adjacent
//! datasets move the noiseless part of the received signal by at most
//! `Δ = 2 max_k √ρ_k |h_k|`, and the run as a whole is characterised by
//!
//! ```text
//! ν = Σ_t (Δ_t / σ_t)²,    s = ε − ν/2.
//! ```
//!
//! The (ε, δ) condition is `P(|Γ| > ε) ≤ 2·Q(s/√ν) = erfc(s / √(2ν)) < δ`
//! together with `s > 0`.

mod verify;

pub use verify::{
    verify_violation_bound, AdjacentPair, BoundReport, PayloadSource,
};

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};

/// Outcome of checking the (ε, δ) condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Satisfied,
    Violated,
    /// `ε − ν/2 ≤ 0`: the tail bound does not apply at all.
    Infeasible,
}

fn check_round_inputs(gains: &[f64], powers: &[f64]) -> Result<()> {
    if gains.len() != powers.len() {
        return Err(Error::dim(format!(
            "{} gains vs {} powers",
            gains.len(),
            powers.len()
        )));
    }
    if let Some(k) = powers.iter().position(|p| !(*p >= 0.0)) {
        return Err(Error::domain(format!(
            "negative transmit power {} at device {k}",
            powers[k]
        )));
    }
    if let Some(k) = gains.iter().position(|g| !(*g >= 0.0)) {
        return Err(Error::domain(format!("negative gain {} at device {k}", gains[k])));
    }
    Ok(())
}

/// Standard deviation of the effective noise, `√(N0 + Σ κ_k ρ_k |h_k|²)`.
pub fn sigma_round(cfg: &SystemConfig, gains: &[f64], powers: &[f64]) -> Result<f64> {
    sigma_from_parts(cfg.noise_power_mw, &cfg.kappas, gains, powers)
}

pub fn sigma_from_parts(
    noise_power: f64,
    kappas: &[f64],
    gains: &[f64],
    powers: &[f64],
) -> Result<f64> {
    check_round_inputs(gains, powers)?;
    if kappas.len() != gains.len() {
        return Err(Error::dim(format!(
            "{} kappas vs {} gains",
            kappas.len(),
            gains.len()
        )));
    }
    let distortion: f64 = kappas
        .iter()
        .zip(gains)
        .zip(powers)
        .map(|((k, g), p)| k * p * g * g)
        .sum();
    Ok((noise_power + distortion).sqrt())
}

/// Sensitivity bound `2 max_k √ρ_k |h_k|`.
pub fn delta_round(gains: &[f64], powers: &[f64]) -> Result<f64> {
    check_round_inputs(gains, powers)?;
    Ok(2.0
        * gains
            .iter()
            .zip(powers)
            .map(|(g, p)| p.sqrt() * g)
            .fold(0.0, f64::max))
}

/// `ν = Σ_t (Δ_t / σ_t)²`.
pub fn nu_total(deltas: &[f64], sigmas: &[f64]) -> Result<f64> {
    if deltas.len() != sigmas.len() {
        return Err(Error::dim(format!(
            "{} deltas vs {} sigmas",
            deltas.len(),
            sigmas.len()
        )));
    }
    let mut nu = 0.0;
    for (t, (d, s)) in deltas.iter().zip(sigmas).enumerate() {
        if !(*s > 0.0) {
            return Err(Error::domain(format!("sigma must be positive (round {t}: {s})")));
        }
        nu += (d / s).powi(2);
    }
    Ok(nu)
}

/// The left side of the (ε, δ) condition: `erfc((ε − ν/2) / √(2ν))`.
///
/// Equal to `(2/√(2πν)) ∫_{ε−ν/2}^∞ exp(−z²/2ν) dz`. Tends to 0 as ν → 0⁺.
pub fn tail_bound(nu: f64, epsilon: f64) -> f64 {
    if nu <= 0.0 {
        return if epsilon > 0.0 { 0.0 } else { 1.0 };
    }
    libm::erfc((epsilon - nu / 2.0) / (2.0 * nu).sqrt())
}

pub fn dp_condition_holds(nu: f64, epsilon: f64, delta: f64) -> Verdict {
    if epsilon - nu / 2.0 <= 0.0 {
        return Verdict::Infeasible;
    }
    if tail_bound(nu, epsilon) < delta {
        Verdict::Satisfied
    } else {
        Verdict::Violated
    }
}

/// Largest ν in (0, 2ε) for which the condition holds.
///
/// Bisection to a relative bracket width of 1e-10. The returned value is the
/// lower end of the final bracket, so it always satisfies the condition.
pub fn solve_nu_budget(epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::domain(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    let (mut lo, mut hi) = (0.0, 2.0 * epsilon);
    let (mut tail_lo, mut tail_hi) = (0.0, 1.0);
    while hi - lo > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        let tail = tail_bound(mid, epsilon);
        assert!(
            tail >= tail_lo && tail <= tail_hi,
            "tail bound not monotone in nu at {mid}"
        );
        if tail < delta {
            lo = mid;
            tail_lo = tail;
        } else {
            hi = mid;
            tail_hi = tail;
        }
    }
    Ok(lo)
}

/// How the total ν budget is divided across rounds.
pub trait BudgetSplit {
    fn split(&self, nu_star: f64, rounds: usize) -> Vec<f64>;
}

/// `ν_t = ν*/T` for every round.
#[derive(Debug, Clone, Copy, Default)]
pub struct EqualSplit;

impl BudgetSplit for EqualSplit {
    fn split(&self, nu_star: f64, rounds: usize) -> Vec<f64> {
        vec![nu_star / rounds as f64; rounds]
    }
}

pub fn split_budget(nu_star: f64, rounds: usize) -> Vec<f64> {
    EqualSplit.split(nu_star, rounds)
}

/// Privacy loss `Γ = Σ_t (‖v_t‖² + 2 w_tᵀ v_t) / (2 σ_t²)`.
pub fn privacy_loss_gamma(v_list: &[Vec<f64>], sigmas: &[f64], noise: &[Vec<f64>]) -> Result<f64> {
    if v_list.len() != sigmas.len() || v_list.len() != noise.len() {
        return Err(Error::dim(format!(
            "{} difference vectors, {} sigmas, {} noise draws",
            v_list.len(),
            sigmas.len(),
            noise.len()
        )));
    }
    let mut gamma = 0.0;
    for (t, ((v, s), w)) in v_list.iter().zip(sigmas).zip(noise).enumerate() {
        if v.len() != w.len() {
            return Err(Error::dim(format!(
                "round {t}: v has {} entries, noise has {}",
                v.len(),
                w.len()
            )));
        }
        if !(*s > 0.0) {
            return Err(Error::domain(format!("sigma must be positive (round {t})")));
        }
        let vv: f64 = v.iter().map(|x| x * x).sum();
        let wv: f64 = v.iter().zip(w).map(|(a, b)| a * b).sum();
        gamma += (vv + 2.0 * wv) / (2.0 * s * s);
    }
    Ok(gamma)
}

/// Per-round (Δ, σ) record of a run and the resulting verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    pub epsilon: f64,
    pub delta: f64,
    pub per_round_delta: Vec<f64>,
    pub per_round_sigma: Vec<f64>,
    pub nu: f64,
    pub slack: f64,
    pub tail: f64,
    pub verdict: Verdict,
}

impl PrivacyLedger {
    pub fn new(epsilon: f64, delta: f64) -> Self {
        Self {
            epsilon,
            delta,
            per_round_delta: Vec::new(),
            per_round_sigma: Vec::new(),
            nu: 0.0,
            slack: epsilon,
            tail: 0.0,
            verdict: dp_condition_holds(0.0, epsilon, delta),
        }
    }

    pub fn from_rounds(epsilon: f64, delta: f64, deltas: &[f64], sigmas: &[f64]) -> Result<Self> {
        let mut ledger = Self::new(epsilon, delta);
        for (d, s) in deltas.iter().zip(sigmas) {
            ledger.record(*d, *s)?;
        }
        if deltas.len() != sigmas.len() {
            return Err(Error::dim("deltas and sigmas differ in length"));
        }
        Ok(ledger)
    }

    pub fn record(&mut self, delta_t: f64, sigma_t: f64) -> Result<()> {
        if !(sigma_t > 0.0) {
            return Err(Error::domain(format!("sigma must be positive, got {sigma_t}")));
        }
        if !(delta_t >= 0.0) {
            return Err(Error::domain(format!("delta must be nonnegative, got {delta_t}")));
        }
        self.per_round_delta.push(delta_t);
        self.per_round_sigma.push(sigma_t);
        self.nu = nu_total(&self.per_round_delta, &self.per_round_sigma)?;
        self.slack = self.epsilon - self.nu / 2.0;
        self.tail = tail_bound(self.nu, self.epsilon);
        self.verdict = dp_condition_holds(self.nu, self.epsilon, self.delta);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(kappas: Vec<f64>, n0: f64) -> SystemConfig {
        SystemConfig {
            num_devices: kappas.len(),
            kappas,
            noise_power_mw: n0,
            ..SystemConfig::reference(0.0)
        }
    }

    #[test]
    fn sigma_examples() {
        let c = cfg(vec![0.0, 0.0], 0.01);
        assert_eq!(sigma_round(&c, &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 0.01f64.sqrt());
        let c = cfg(vec![0.1], 0.01);
        let s = sigma_round(&c, &[1.0], &[10.0]).unwrap();
        assert!((s - 1.01f64.sqrt()).abs() < 1e-15);
        assert!((s - 1.00499).abs() < 1e-5);
        let c = cfg(vec![0.3, 0.2], 0.01);
        assert_eq!(sigma_round(&c, &[1.0, 2.0], &[0.0, 0.0]).unwrap(), 0.01f64.sqrt());
        assert!(matches!(sigma_round(&c, &[1.0, 2.0], &[-1.0, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn delta_examples() {
        assert_eq!(delta_round(&[1.0, 0.4], &[1.0, 4.0]).unwrap(), 2.0);
        assert_eq!(delta_round(&[1.0, 0.4], &[0.0, 0.0]).unwrap(), 0.0);
        // aligned: sqrt(rho) * g = 0.3 everywhere
        let gains = [0.5, 1.5, 3.0];
        let powers: Vec<f64> = gains.iter().map(|g| (0.3 / g) * (0.3 / g)).collect();
        assert!((delta_round(&gains, &powers).unwrap() - 0.6).abs() < 1e-15);
        assert!(delta_round(&[1.0], &[-0.5]).is_err());
    }

    #[test]
    fn nu_examples() {
        assert_eq!(nu_total(&[2.0], &[1.0]).unwrap(), 4.0);
        let r = 1.5f64.sqrt();
        assert!((nu_total(&[r, r, r], &[1.0, 1.0, 1.0]).unwrap() - 4.5).abs() < 1e-14);
        assert!(matches!(nu_total(&[1.0], &[0.0]), Err(Error::Domain(_))));
        assert!(nu_total(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn condition_edges() {
        assert_eq!(dp_condition_holds(1e-12, 25.0, 0.05), Verdict::Satisfied);
        assert_eq!(dp_condition_holds(0.0, 25.0, 0.05), Verdict::Satisfied);
        assert_eq!(dp_condition_holds(50.0, 25.0, 0.05), Verdict::Infeasible);
        assert_eq!(dp_condition_holds(60.0, 25.0, 0.05), Verdict::Infeasible);
        assert_eq!(dp_condition_holds(40.0, 25.0, 0.05), Verdict::Violated);
    }

    #[test]
    fn budget_brackets() {
        for (eps, delta) in [(25.0, 0.05), (1.0, 1e-5), (100.0, 0.5), (3.0, 0.2)] {
            let nu = solve_nu_budget(eps, delta).unwrap();
            assert!(nu > 0.0 && nu < 2.0 * eps);
            assert_eq!(dp_condition_holds(nu * (1.0 - 1e-6), eps, delta), Verdict::Satisfied);
            assert_eq!(dp_condition_holds(nu, eps, delta), Verdict::Satisfied);
            assert_ne!(dp_condition_holds(nu * (1.0 + 1e-6), eps, delta), Verdict::Satisfied);
        }
    }

    #[test]
    fn budget_approaches_boundary_as_delta_grows() {
        let eps = 25.0;
        let nu = solve_nu_budget(eps, 1.0 - 1e-12).unwrap();
        assert!(nu > 2.0 * eps * (1.0 - 1e-4), "{nu}");
        assert!(nu < 2.0 * eps);
        assert!(solve_nu_budget(eps, 1.0).is_err());
        assert!(solve_nu_budget(eps, 0.0).is_err());
    }

    #[test]
    fn reference_budget_matches_normal_quantile() {
        // erfc(s/√(2ν)) = δ  ⇔  s/√ν = Φ⁻¹(1 − δ/2); with δ = 0.05 that is 1.959964...
        let nu = solve_nu_budget(25.0, 0.05).unwrap();
        // (ε − ν/2)/√ν = z  ⇒  ν + 2z√ν − 2ε = 0
        let z = 1.959_963_984_540_054;
        let root = -z + (z * z + 2.0 * 25.0_f64).sqrt();
        assert!((nu - root * root).abs() < 1e-8 * nu, "{nu} vs {}", root * root);
    }

    #[test]
    fn split_conserves_budget() {
        assert_eq!(split_budget(4.5, 3), vec![1.5, 1.5, 1.5]);
        assert_eq!(split_budget(2.7, 1), vec![2.7]);
        for t in 1..40 {
            let s: f64 = split_budget(28.9, t).iter().sum();
            assert!((s - 28.9).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_deterministic_part() {
        let v = vec![vec![0.0; 4], vec![0.0; 4]];
        let w = vec![vec![1.0, -2.0, 0.5, 3.0], vec![0.1; 4]];
        assert_eq!(privacy_loss_gamma(&v, &[1.0, 2.0], &w).unwrap(), 0.0);
        let v = vec![vec![3.0, 4.0]];
        let gamma = privacy_loss_gamma(&v, &[2.0], &[vec![0.0, 0.0]]).unwrap();
        assert!((gamma - 25.0 / 8.0).abs() < 1e-15);
        // quadratic in a common scale when noise is zero
        let v2 = vec![vec![6.0, 8.0]];
        let gamma2 = privacy_loss_gamma(&v2, &[2.0], &[vec![0.0, 0.0]]).unwrap();
        assert!((gamma2 - 4.0 * gamma).abs() < 1e-12);
        assert!(privacy_loss_gamma(&v, &[2.0], &[vec![0.0]]).is_err());
    }

    #[test]
    fn ledger_tracks_nu_and_slack() {
        let ledger = PrivacyLedger::from_rounds(25.0, 0.05, &[0.2, 0.4], &[0.1, 0.2]).unwrap();
        assert!((ledger.nu - 8.0).abs() < 1e-12);
        assert!((ledger.slack - 21.0).abs() < 1e-12);
        assert_eq!(ledger.verdict, Verdict::Satisfied);
        let bad = PrivacyLedger::from_rounds(1.0, 0.05, &[2.0], &[1.0]).unwrap();
        assert_eq!(bad.verdict, Verdict::Infeasible);
    }
}
