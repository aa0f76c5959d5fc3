//! Analog uplink: scaling, transmitter distortion, superposition, receiver
//! noise and server-side recovery.
//!
//! Each gradient entry is one real baseband sample. Device `k` sends
//! `x_k = b_k g_k + e_k` with `b_k = √ρ_k / ‖g_k‖` and `e_k ~ N(0, κ_k ρ_k I)`;
//! the server receives `y = Σ |h_k| x_k + w`, `w ~ N(0, N0 I)`, and forms
//! `y / (K ξ)`.

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::power::RoundAllocation;
use crate::privacy::{delta_round, sigma_round};
use crate::rng::{fill_gaussian, Purpose, SeedPolicy};

#[derive(Debug, Clone, PartialEq)]
pub struct GradientPayload {
    pub device: usize,
    pub vector: Vec<f64>,
    pub norm: f64,
}

impl GradientPayload {
    pub fn new(device: usize, vector: Vec<f64>) -> Self {
        let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        Self { device, vector, norm }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    /// A zero or non-finite norm cannot be scaled to unit power.
    pub fn is_transmittable(&self) -> bool {
        self.norm > 0.0 && self.norm.is_finite()
    }

    pub fn unit(&self) -> Vec<f64> {
        self.vector.iter().map(|x| x / self.norm).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSignal {
    pub samples: Vec<f64>,
    pub round: usize,
    pub sigma_effective: f64,
}

/// Per-round quantities handed to the privacy ledger and the metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkDiagnostics {
    pub lambda: f64,
    pub delta: f64,
    pub sigma: f64,
    pub silent: Vec<usize>,
}

/// Amplitude scaling `√ρ / ‖g‖`.
pub fn scale_factor(power: f64, payload: &GradientPayload) -> Result<f64> {
    if !(power >= 0.0) {
        return Err(Error::domain(format!("negative power {power}")));
    }
    if power == 0.0 {
        return Ok(0.0);
    }
    if !payload.is_transmittable() {
        return Err(Error::domain(format!("device {} has a zero-norm update", payload.device)));
    }
    Ok(power.sqrt() / payload.norm)
}

/// Distorted transmit vectors for all devices in one round.
pub fn transmit(
    alloc: &RoundAllocation,
    payloads: &[GradientPayload],
    kappas: &[f64],
    seeds: &SeedPolicy,
    round: usize,
) -> Result<Vec<Vec<f64>>> {
    if payloads.len() != alloc.powers.len() || kappas.len() != payloads.len() {
        return Err(Error::dim(format!(
            "{} payloads, {} powers, {} kappas",
            payloads.len(),
            alloc.powers.len(),
            kappas.len()
        )));
    }
    payloads
        .iter()
        .zip(&alloc.powers)
        .enumerate()
        .map(|(k, (payload, &power))| {
            let b = scale_factor(power, payload)?;
            let mut x = vec![0.0; payload.dim()];
            let variance = kappas[k] * power;
            if variance > 0.0 {
                let mut rng = seeds.stream(Purpose::Distortion, k as u64, round as u64);
                fill_gaussian(&mut rng, variance, &mut x);
            }
            if b > 0.0 {
                for (xi, gi) in x.iter_mut().zip(&payload.vector) {
                    *xi += b * gi;
                }
            }
            Ok(x)
        })
        .collect()
}

/// Gain-weighted superposition plus receiver noise.
pub fn superpose(
    transmits: &[Vec<f64>],
    gains: &[f64],
    noise_power: f64,
    sigma_effective: f64,
    seeds: &SeedPolicy,
    round: usize,
) -> Result<ReceivedSignal> {
    if transmits.len() != gains.len() {
        return Err(Error::dim(format!("{} transmits for {} gains", transmits.len(), gains.len())));
    }
    let dim = transmits.first().map_or(0, Vec::len);
    if transmits.iter().any(|x| x.len() != dim) {
        return Err(Error::dim("transmit vectors differ in length"));
    }
    let mut y = vec![0.0; dim];
    if noise_power > 0.0 {
        let mut rng = seeds.stream(Purpose::ReceiverNoise, 0, round as u64);
        fill_gaussian(&mut rng, noise_power, &mut y);
    }
    for (x, &g) in transmits.iter().zip(gains) {
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += g * xi;
        }
    }
    Ok(ReceivedSignal {
        samples: y,
        round,
        sigma_effective,
    })
}

/// Server estimate `y / (K ξ)`.
pub fn recover_gradient(y: &ReceivedSignal, receiver_norm: f64, num_devices: usize) -> Result<Vec<f64>> {
    if !(receiver_norm > 0.0) {
        return Err(Error::domain(format!("receiver normaliser must be positive, got {receiver_norm}")));
    }
    if num_devices == 0 {
        return Err(Error::domain("no devices"));
    }
    let scale = 1.0 / (num_devices as f64 * receiver_norm);
    Ok(y.samples.iter().map(|v| v * scale).collect())
}

/// The noiseless target `(1/K) Σ_k g_k / ‖g_k‖` over transmitting devices.
pub fn normalized_average(payloads: &[GradientPayload]) -> Vec<f64> {
    let k = payloads.len() as f64;
    let dim = payloads.first().map_or(0, GradientPayload::dim);
    let mut out = vec![0.0; dim];
    for p in payloads.iter().filter(|p| p.is_transmittable()) {
        for (o, v) in out.iter_mut().zip(&p.vector) {
            *o += v / p.norm / k;
        }
    }
    out
}

/// transmit → superpose → recover for one round. `cfg` carries the true
/// distortion levels, which may differ from those used to allocate.
pub fn round_trip(
    alloc: &RoundAllocation,
    payloads: &[GradientPayload],
    gains: &[f64],
    cfg: &SystemConfig,
    seeds: &SeedPolicy,
    round: usize,
) -> Result<(Vec<f64>, LinkDiagnostics)> {
    let sigma = sigma_round(cfg, gains, &alloc.powers)?;
    let delta = delta_round(gains, &alloc.powers)?;
    let transmits = transmit(alloc, payloads, &cfg.kappas, seeds, round)?;
    let y = superpose(&transmits, gains, cfg.noise_power_mw, sigma, seeds, round)?;
    let estimate = recover_gradient(&y, alloc.receiver_norm, cfg.num_devices)?;
    Ok((
        estimate,
        LinkDiagnostics {
            lambda: alloc.lambda,
            delta,
            sigma,
            silent: alloc.silent.clone(),
        },
    ))
}
