//! Experiment harness: sweeps, privacy verification and plot data.

pub mod error;
pub mod experiment;
pub mod files;
pub mod plot;
pub mod verify;

pub use error::{HarnessError, Result};

use std::path::Path;

use otadp::learning::{load_mnist_dir, Dataset};

/// Train and test splits from an MNIST-layout directory.
pub fn load_data(dir: &Path) -> Result<(Dataset, Dataset)> {
    Ok((load_mnist_dir(dir, true)?, load_mnist_dir(dir, false)?))
}
