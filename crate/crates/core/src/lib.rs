//! Simulator for federated learning over an analog multiple-access channel
//! where transmitter distortion and receiver noise provide differential
//! privacy.

pub mod channel;
pub mod config;
pub mod error;
pub mod learning;
pub mod link;
pub mod power;
pub mod privacy;
pub mod rng;

pub use config::{ExperimentConfig, LearningConfig, SystemConfig};
pub use error::{Error, Result};
pub use rng::{Purpose, SeedPolicy};
