//! Counter-based random substreams.
//!
//! Every random draw in the simulator comes from a generator keyed by
//! `(master seed, purpose, device, round)`. The key is hashed into a ChaCha8
//! seed, so the sequence for one key never depends on which other keys were
//! used before it or on which thread consumes it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// What a substream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Channel = 1,
    Distortion = 2,
    ReceiverNoise = 3,
    Partition = 4,
    ModelInit = 5,
    Batch = 6,
    Synthetic = 7,
    MonteCarlo = 8,
    AdjacentPair = 9,
    Trial = 10,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedPolicy {
    pub master_seed: u64,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix(words: &[u64]) -> u64 {
    let mut state = 0u64;
    let mut acc = 0u64;
    for &w in words {
        state ^= w;
        acc = splitmix64(&mut state);
        state = acc;
    }
    acc
}

impl SeedPolicy {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    /// Independent policy for one trial of a multi-trial sweep.
    pub fn for_trial(&self, trial: u64) -> Self {
        Self::new(mix(&[self.master_seed, Purpose::Trial as u64, trial]))
    }

    /// Policy derived from an arbitrary label, e.g. one sweep cell.
    pub fn derive(&self, label: &str) -> Self {
        let mut words = vec![self.master_seed, 0x6c61_6265_6c00_0000];
        words.extend(label.bytes().map(u64::from));
        Self::new(mix(&words))
    }

    pub fn stream(&self, purpose: Purpose, device: u64, round: u64) -> ChaCha8Rng {
        let mut state = mix(&[self.master_seed, purpose as u64, device, round]);
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

/// Standard normal sample (ziggurat, fixed by the `rand_distr` release).
#[inline]
pub fn std_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Fills `out` with i.i.d. N(0, variance) samples.
pub fn fill_gaussian<R: rand::Rng + ?Sized>(rng: &mut R, variance: f64, out: &mut [f64]) {
    let sd = variance.sqrt();
    for x in out {
        *x = sd * std_normal(rng);
    }
}
