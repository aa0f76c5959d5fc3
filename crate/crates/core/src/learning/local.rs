//! Device-side training.

use rand::seq::SliceRandom;

use super::data::LocalDataset;
use super::mlp::{Batch, Mlp};
use super::optim::Optimizer;
use crate::config::{LearningConfig, UpdateMode};
use crate::error::{Error, Result};
use crate::link::GradientPayload;
use crate::rng::{Purpose, SeedPolicy};

#[derive(Debug, Clone, Copy)]
pub enum BatchSelection<'a> {
    /// Every sample of the shard (the exact local gradient).
    Full,
    Indices(&'a [usize]),
}

/// Mean gradient of the loss over the selected samples of `shard`.
pub fn local_gradient(mlp: &Mlp, theta: &[f64], shard: &LocalDataset, selection: BatchSelection) -> Result<Vec<f64>> {
    if shard.is_empty() {
        return Err(Error::Empty("shard"));
    }
    let batch = match selection {
        BatchSelection::Full => Batch::full(shard),
        BatchSelection::Indices(idx) => {
            if let Some(&i) = idx.iter().find(|&&i| i >= shard.len()) {
                return Err(Error::Index {
                    what: "sample",
                    index: i,
                    len: shard.len(),
                });
            }
            Batch::from_indices(shard, idx)
        }
    };
    Ok(mlp.loss_and_gradient(theta, batch.x.view(), &batch.labels)?.1)
}

/// Index sets for `steps` minibatches: consecutive chunks of a shuffled
/// order, reshuffled whenever the order runs out. A batch at least as large
/// as the shard is the whole shard every step.
pub fn batch_schedule(n: usize, batch_size: usize, steps: usize, seeds: &SeedPolicy, device: usize, round: usize) -> Vec<Vec<usize>> {
    if batch_size >= n {
        return vec![(0..n).collect(); steps];
    }
    let mut rng = seeds.stream(Purpose::Batch, device as u64, round as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut pos = 0;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut b = Vec::with_capacity(batch_size);
        while b.len() < batch_size {
            if pos == n {
                order.shuffle(&mut rng);
                pos = 0;
            }
            let take = (batch_size - b.len()).min(n - pos);
            b.extend_from_slice(&order[pos..pos + take]);
            pos += take;
        }
        out.push(b);
    }
    out
}

/// Runs one device's local work for `round` and returns its scaled update.
///
/// * [`UpdateMode::Gradient`]: `|B_k| ∇F_k(θ)` over the full shard.
/// * [`UpdateMode::ModelDelta`]: `local_steps` minibatch steps of the local
///   optimizer (fresh state each round) from `θ`, then
///   `|B_k| (θ − θ_local) / η`.
pub fn local_update(
    mlp: &Mlp,
    theta_global: &[f64],
    shard: &LocalDataset,
    lcfg: &LearningConfig,
    seeds: &SeedPolicy,
    device: usize,
    round: usize,
) -> Result<GradientPayload> {
    if shard.is_empty() {
        return Err(Error::Empty("shard"));
    }
    let size = shard.len() as f64;
    let vector = match lcfg.update_mode {
        UpdateMode::Gradient => {
            let mut g = local_gradient(mlp, theta_global, shard, BatchSelection::Full)?;
            g.iter_mut().for_each(|v| *v *= size);
            g
        }
        UpdateMode::ModelDelta => {
            let mut theta = theta_global.to_vec();
            let mut opt = Optimizer::new(lcfg.local_optimizer, lcfg.learning_rate, theta.len());
            for idx in batch_schedule(shard.len(), lcfg.batch_size, lcfg.local_steps, seeds, device, round) {
                let g = local_gradient(mlp, &theta, shard, BatchSelection::Indices(&idx))?;
                opt.step(&mut theta, &g);
            }
            let scale = size / lcfg.learning_rate;
            theta_global.iter().zip(&theta).map(|(g, l)| scale * (g - l)).collect()
        }
    };
    Ok(GradientPayload::new(device, vector))
}
