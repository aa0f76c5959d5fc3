//! Physical, privacy and learning constants.
//!
//! Everything inside the crate works in linear milliwatts. Decibel values only
//! appear in the JSON file format (`*_dbm` keys) and are converted on load.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ViolationList};
use crate::rng::SeedPolicy;

pub fn dbm_to_linear(p_dbm: f64) -> Result<f64> {
    if !p_dbm.is_finite() {
        return Err(Error::Config(ViolationList(vec![ConfigViolation::new(
            "power_dbm",
            format!("must be finite, got {p_dbm}"),
        )])));
    }
    Ok(10f64.powf(p_dbm / 10.0))
}

pub fn linear_to_dbm(p_mw: f64) -> Result<f64> {
    if !(p_mw.is_finite() && p_mw > 0.0) {
        return Err(Error::Config(ViolationList(vec![ConfigViolation::new(
            "power_mw",
            format!("must be finite and positive, got {p_mw}"),
        )])));
    }
    Ok(10.0 * p_mw.log10())
}

/// Transmit error-vector magnitude (as a fraction) for a distortion coefficient.
pub fn kappa_to_evm(kappa: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&kappa) {
        return Err(Error::Config(ViolationList(vec![ConfigViolation::new(
            "kappa",
            format!("kappa out of [0,1): {kappa}"),
        )])));
    }
    Ok(kappa.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigViolation {
    pub field: String,
    pub message: String,
}

impl ConfigViolation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// System-level constants: device count, horizon, power budget, receiver
/// noise, the (ε, δ) target and per-device distortion coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub num_devices: usize,
    pub num_rounds: usize,
    pub peak_power_mw: f64,
    pub noise_power_mw: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub kappas: Vec<f64>,
}

impl SystemConfig {
    /// The evaluation setup: K = 50, T = 10, 10 dBm peak power, -20 dBm
    /// noise, ε = 25, δ = 0.05 and a common distortion level.
    pub fn reference(kappa: f64) -> Self {
        Self {
            num_devices: 50,
            num_rounds: 10,
            peak_power_mw: 10.0,
            noise_power_mw: 0.01,
            epsilon: 25.0,
            delta: 0.05,
            kappas: vec![kappa; 50],
        }
    }

    pub fn kappa_sum(&self) -> f64 {
        self.kappas.iter().sum()
    }

    /// Same system with every device treated as distortion-free.
    pub fn with_ideal_hardware(&self) -> Self {
        Self {
            kappas: vec![0.0; self.num_devices],
            ..self.clone()
        }
    }

    pub fn with_kappa(&self, kappa: f64) -> Self {
        Self {
            kappas: vec![kappa; self.num_devices],
            ..self.clone()
        }
    }

    fn violations(&self, out: &mut Vec<ConfigViolation>) {
        if self.num_devices < 1 {
            out.push(ConfigViolation::new("num_devices", "must be at least 1"));
        }
        if self.num_rounds < 1 {
            out.push(ConfigViolation::new("num_rounds", "must be at least 1"));
        }
        if !(self.peak_power_mw.is_finite() && self.peak_power_mw > 0.0) {
            out.push(ConfigViolation::new(
                "peak_power",
                format!("must be positive, got {} mW", self.peak_power_mw),
            ));
        }
        if !(self.noise_power_mw.is_finite() && self.noise_power_mw > 0.0) {
            out.push(ConfigViolation::new(
                "noise_power",
                format!("must be positive, got {} mW", self.noise_power_mw),
            ));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            out.push(ConfigViolation::new(
                "epsilon",
                format!("epsilon must be positive, got {}", self.epsilon),
            ));
        }
        if self.delta.is_nan() || self.delta <= 0.0 {
            out.push(ConfigViolation::new(
                "delta",
                format!("delta must be positive, got {}", self.delta),
            ));
        } else if self.delta > 1.0 {
            out.push(ConfigViolation::new(
                "delta",
                format!("delta must be at most 1, got {}", self.delta),
            ));
        }
        if self.kappas.len() != self.num_devices {
            out.push(ConfigViolation::new(
                "kappas",
                format!(
                    "expected {} entries (one per device), got {}",
                    self.num_devices,
                    self.kappas.len()
                ),
            ));
        }
        for (k, &kappa) in self.kappas.iter().enumerate() {
            if !(0.0..1.0).contains(&kappa) {
                out.push(ConfigViolation::new(
                    format!("kappas[{k}]"),
                    format!("kappa out of [0,1): {kappa}"),
                ));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// What a device sends after local training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// `local_steps` optimizer steps, then `|B_k| (θ_global - θ_local) / η`.
    ModelDelta,
    /// One full-shard gradient, `|B_k| ∇F_k(θ)`.
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningConfig {
    pub learning_rate: f64,
    pub server_learning_rate: f64,
    pub local_steps: usize,
    pub batch_size: usize,
    pub hidden_units: usize,
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    #[serde(default = "default_local_optimizer")]
    pub local_optimizer: OptimizerKind,
    #[serde(default = "default_server_optimizer")]
    pub server_optimizer: OptimizerKind,
    #[serde(default = "default_update_mode")]
    pub update_mode: UpdateMode,
    /// Optional in files; checked against the architecture when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_dim: Option<usize>,
}

fn default_input_dim() -> usize {
    784
}
fn default_num_classes() -> usize {
    10
}
fn default_local_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}
fn default_server_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}
fn default_update_mode() -> UpdateMode {
    UpdateMode::ModelDelta
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            server_learning_rate: 0.01,
            local_steps: 30,
            batch_size: 128,
            hidden_units: 100,
            input_dim: default_input_dim(),
            num_classes: default_num_classes(),
            local_optimizer: OptimizerKind::Adam,
            server_optimizer: OptimizerKind::Adam,
            update_mode: UpdateMode::ModelDelta,
            model_dim: None,
        }
    }
}

impl LearningConfig {
    /// Flattened parameter count of the one-hidden-layer network.
    pub fn derived_model_dim(&self) -> usize {
        self.input_dim * self.hidden_units
            + self.hidden_units
            + self.hidden_units * self.num_classes
            + self.num_classes
    }

    fn violations(&self, out: &mut Vec<ConfigViolation>) {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            out.push(ConfigViolation::new(
                "learning_rate",
                format!("must be positive, got {}", self.learning_rate),
            ));
        }
        if !(self.server_learning_rate.is_finite() && self.server_learning_rate > 0.0) {
            out.push(ConfigViolation::new(
                "server_learning_rate",
                format!("must be positive, got {}", self.server_learning_rate),
            ));
        }
        for (name, v) in [
            ("local_steps", self.local_steps),
            ("batch_size", self.batch_size),
            ("hidden_units", self.hidden_units),
            ("input_dim", self.input_dim),
            ("num_classes", self.num_classes),
        ] {
            if v == 0 {
                out.push(ConfigViolation::new(name, "must be at least 1"));
            }
        }
        if let Some(d) = self.model_dim {
            let expected = self.derived_model_dim();
            if d != expected {
                out.push(ConfigViolation::new(
                    "model_dim",
                    format!("{d} does not match the architecture ({expected})"),
                ));
            }
        }
    }
}

/// Checks every invariant of both configs and reports all violations at once.
pub fn validate_config(
    cfg: &SystemConfig,
    lcfg: &LearningConfig,
) -> std::result::Result<(), ViolationList> {
    let mut out = Vec::new();
    cfg.violations(&mut out);
    lcfg.violations(&mut out);
    if out.is_empty() {
        Ok(())
    } else {
        Err(ViolationList(out))
    }
}

pub fn validate_system(cfg: &SystemConfig) -> Result<()> {
    let mut out = Vec::new();
    cfg.violations(&mut out);
    if out.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(ViolationList(out)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemFile {
    num_devices: usize,
    num_rounds: usize,
    peak_power_dbm: f64,
    noise_power_dbm: f64,
    epsilon: f64,
    delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kappas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    system: SystemFile,
    learning: LearningConfig,
    seed: SeedPolicy,
}

/// The three config sections as read from a JSON file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub learning: LearningConfig,
    pub seed: SeedPolicy,
}

impl ExperimentConfig {
    pub fn reference(kappa: f64, master_seed: u64) -> Self {
        Self {
            system: SystemConfig::reference(kappa),
            learning: LearningConfig::default(),
            seed: SeedPolicy::new(master_seed),
        }
    }

    /// Parses and validates. All violations are reported together.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: ConfigFile = serde_json::from_str(s)?;
        let mut out = Vec::new();
        let peak = dbm_field(file.system.peak_power_dbm, "peak_power_dbm", &mut out);
        let noise = dbm_field(file.system.noise_power_dbm, "noise_power_dbm", &mut out);
        let kappas = match (file.system.kappa, file.system.kappas) {
            (Some(k), None) => vec![k; file.system.num_devices],
            (None, Some(ks)) => ks,
            (Some(_), Some(_)) => {
                out.push(ConfigViolation::new(
                    "kappa",
                    "give either `kappa` or `kappas`, not both",
                ));
                Vec::new()
            }
            (None, None) => {
                out.push(ConfigViolation::new("kappas", "missing"));
                Vec::new()
            }
        };
        let cfg = Self {
            system: SystemConfig {
                num_devices: file.system.num_devices,
                num_rounds: file.system.num_rounds,
                peak_power_mw: peak,
                noise_power_mw: noise,
                epsilon: file.system.epsilon,
                delta: file.system.delta,
                kappas,
            },
            learning: file.learning,
            seed: file.seed,
        };
        if let Err(ViolationList(v)) = validate_config(&cfg.system, &cfg.learning) {
            // kappa list errors are already explained above
            if out.is_empty() {
                out = v;
            } else {
                out.extend(v.into_iter().filter(|v| v.field != "kappas"));
            }
        }
        if out.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(ViolationList(out)))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let file = ConfigFile {
            system: SystemFile {
                num_devices: self.system.num_devices,
                num_rounds: self.system.num_rounds,
                peak_power_dbm: linear_to_dbm(self.system.peak_power_mw)?,
                noise_power_dbm: linear_to_dbm(self.system.noise_power_mw)?,
                epsilon: self.system.epsilon,
                delta: self.system.delta,
                kappa: None,
                kappas: Some(self.system.kappas.clone()),
            },
            learning: self.learning.clone(),
            seed: self.seed,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }
}

fn dbm_field(v: f64, name: &str, out: &mut Vec<ConfigViolation>) -> f64 {
    match dbm_to_linear(v) {
        Ok(mw) => mw,
        Err(_) => {
            out.push(ConfigViolation::new(name, format!("must be finite, got {v}")));
            f64::NAN
        }
    }
}
