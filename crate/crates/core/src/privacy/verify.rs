//! Monte-Carlo check of the analytic tail bound on the privacy loss.
//!
//! For adjacent datasets A and B the noiseless received signals of round `t`
//! differ by `v_t = Σ_k |h_k| (b'_k g'_k − b''_k g''_k)`, and the privacy loss
//! is `Γ = Σ_t (‖v_t‖² + 2 w_tᵀ v_t) / (2σ_t²)` with `w_t ~ N(0, σ_t² I)`.
//! Since `w_tᵀ v_t ~ N(0, σ_t² ‖v_t‖²)` exactly, each draw of Γ needs one
//! standard normal per round instead of one per gradient entry.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{dp_condition_holds, sigma_round, tail_bound, Verdict};
use crate::channel::ChannelState;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::learning::LocalDataset;
use crate::link::GradientPayload;
use crate::power::PowerPlan;
use crate::rng::{std_normal, Purpose, SeedPolicy};

/// Two global datasets that differ in one sample of one device.
#[derive(Debug, Clone)]
pub struct AdjacentPair {
    base: Arc<Vec<LocalDataset>>,
    differing_device: usize,
    replaced: LocalDataset,
}

impl AdjacentPair {
    /// Dataset B is `base` with sample `index` of device `device` replaced by
    /// `(features, label)`.
    pub fn new(base: Arc<Vec<LocalDataset>>, device: usize, index: usize, features: &[f64], label: u8) -> Result<Self> {
        let shard = base.get(device).ok_or(Error::Index {
            what: "device",
            index: device,
            len: base.len(),
        })?;
        if index >= shard.len() {
            return Err(Error::Index {
                what: "sample",
                index,
                len: shard.len(),
            });
        }
        let replaced = shard.with_replaced(index, features, label)?;
        Ok(Self {
            base,
            differing_device: device,
            replaced,
        })
    }

    /// A random pair: a uniformly chosen sample of a uniformly chosen device
    /// is swapped for a uniformly chosen sample of `pool`.
    pub fn random(base: Arc<Vec<LocalDataset>>, pool: &crate::learning::Dataset, seeds: &SeedPolicy, pair_index: u64) -> Result<Self> {
        use rand::Rng;
        if pool.is_empty() {
            return Err(Error::Empty("replacement pool"));
        }
        let mut rng = seeds.stream(Purpose::AdjacentPair, pair_index, 0);
        let device = rng.random_range(0..base.len());
        let index = rng.random_range(0..base[device].len());
        let (x, y) = pool.sample(rng.random_range(0..pool.len()));
        let x = x.to_vec();
        Self::new(base, device, index, &x, y)
    }

    pub fn differing_device(&self) -> usize {
        self.differing_device
    }

    pub fn num_devices(&self) -> usize {
        self.base.len()
    }

    pub fn shard_a(&self, device: usize) -> &LocalDataset {
        &self.base[device]
    }

    pub fn shard_b(&self, device: usize) -> &LocalDataset {
        if device == self.differing_device {
            &self.replaced
        } else {
            &self.base[device]
        }
    }

    /// Number of samples in A not matched in B, per device, compared as
    /// multisets of (features, label).
    pub fn sample_difference(&self) -> Vec<usize> {
        (0..self.base.len())
            .map(|k| multiset_difference(self.shard_a(k), self.shard_b(k)))
            .collect()
    }

    /// The replacement happened to equal the original sample.
    pub fn identical(&self) -> bool {
        self.sample_difference().iter().all(|&d| d == 0)
    }
}

fn sample_key(x: &[f64], y: u8) -> (Vec<u64>, u8) {
    (x.iter().map(|v| v.to_bits()).collect(), y)
}

fn multiset_difference(a: &LocalDataset, b: &LocalDataset) -> usize {
    let mut ka: Vec<_> = (0..a.len()).map(|i| {
        let (x, y) = a.sample(i);
        sample_key(x, y)
    }).collect();
    let mut kb: Vec<_> = (0..b.len()).map(|i| {
        let (x, y) = b.sample(i);
        sample_key(x, y)
    }).collect();
    ka.sort_unstable();
    kb.sort_unstable();
    let (mut i, mut j, mut unmatched) = (0, 0, 0);
    while i < ka.len() && j < kb.len() {
        match ka[i].cmp(&kb[j]) {
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => {
                unmatched += 1;
                i += 1;
            }
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    unmatched + (ka.len() - i)
}

/// Produces the update a device would send in a given round from a given shard.
pub trait PayloadSource {
    fn payload(&self, shard: &LocalDataset, device: usize, round: usize) -> Result<GradientPayload>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// ν of the plan, `Σ_t (Δ_t/σ_t)²`.
    pub nu: f64,
    pub s: f64,
    pub analytic_bound: f64,
    pub empirical_prob: f64,
    pub n_samples: usize,
    pub verdict: Verdict,
    /// Binomial standard error at the analytic bound.
    pub stderr: f64,
    /// `Σ_t ‖v_t‖² / σ_t²` for this pair; never exceeds `nu`.
    pub nu_pair: f64,
    pub within_bound: bool,
}

const MC_CHUNK: usize = 4096;

/// Estimates `Pr(|Γ| > ε)` for `pair` under `plan` and compares it with the
/// analytic bound.
pub fn verify_violation_bound(
    pair: &AdjacentPair,
    plan: &PowerPlan,
    state: &ChannelState,
    cfg: &SystemConfig,
    source: &dyn PayloadSource,
    n_samples: usize,
    seeds: &SeedPolicy,
) -> Result<BoundReport> {
    if n_samples < 10_000 {
        return Err(Error::domain(format!("need at least 10^4 samples, got {n_samples}")));
    }
    if pair.num_devices() != cfg.num_devices {
        return Err(Error::dim(format!("pair has {} devices, config {}", pair.num_devices(), cfg.num_devices)));
    }
    let rounds = plan.num_rounds();
    let mut deltas = Vec::with_capacity(rounds);
    let mut sigmas = Vec::with_capacity(rounds);
    let mut v_norms = Vec::with_capacity(rounds);
    for t in 0..rounds {
        let alloc = plan.round(t)?;
        let gains = state.gains(t)?;
        let sigma = sigma_round(cfg, gains, &alloc.powers)?;
        deltas.push(super::delta_round(gains, &alloc.powers)?);
        sigmas.push(sigma);
        // every other device holds the same shard under the same substreams,
        // so its update is bit-identical in A and B and cancels
        let k = pair.differing_device();
        let amp = gains[k] * alloc.powers[k].sqrt();
        let mut v_norm = 0.0;
        if amp > 0.0 {
            let a = source.payload(pair.shard_a(k), k, t)?;
            let b = source.payload(pair.shard_b(k), k, t)?;
            let unit = |p: &GradientPayload, i: usize| if p.is_transmittable() { p.vector[i] / p.norm } else { 0.0 };
            let sq: f64 = (0..a.dim()).map(|i| (amp * (unit(&a, i) - unit(&b, i))).powi(2)).sum();
            v_norm = sq.sqrt();
        }
        v_norms.push(v_norm);
    }
    let nu = super::nu_total(&deltas, &sigmas)?;
    let eps = cfg.epsilon;
    let s = eps - nu / 2.0;
    let verdict = dp_condition_holds(nu, eps, cfg.delta);
    let analytic_bound = tail_bound(nu, eps);

    // Γ = Σ_t (a_t + c_t z_t) with a_t = ‖v‖²/(2σ²), c_t = ‖v‖/σ
    let shift: f64 = v_norms.iter().zip(&sigmas).map(|(v, s)| v * v / (2.0 * s * s)).sum();
    let scales: Vec<f64> = v_norms.iter().zip(&sigmas).map(|(v, s)| v / s).collect();
    let nu_pair: f64 = scales.iter().map(|c| c * c).sum();
    let mut exceed = 0usize;
    if nu_pair > 0.0 {
        let mut done = 0;
        let mut chunk = 0u64;
        while done < n_samples {
            let n = MC_CHUNK.min(n_samples - done);
            let mut rng = seeds.stream(Purpose::MonteCarlo, chunk, 0);
            for _ in 0..n {
                let gamma: f64 = shift + scales.iter().map(|c| c * std_normal(&mut rng)).sum::<f64>();
                if gamma.abs() > eps {
                    exceed += 1;
                }
            }
            done += n;
            chunk += 1;
        }
    } else if shift > eps {
        exceed = n_samples;
    }
    let empirical_prob = exceed as f64 / n_samples as f64;
    let p = analytic_bound.clamp(0.0, 1.0);
    let stderr = (p * (1.0 - p) / n_samples as f64).sqrt();
    Ok(BoundReport {
        nu,
        s,
        analytic_bound,
        empirical_prob,
        n_samples,
        verdict,
        stderr,
        nu_pair,
        within_bound: empirical_prob <= analytic_bound + 3.0 * stderr,
    })
}
