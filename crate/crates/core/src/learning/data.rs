use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{std_normal, Purpose, SeedPolicy};

/// Labelled feature vectors stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    num_classes: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
}

/// A device's shard. Same representation as the global set.
pub type LocalDataset = Dataset;

impl Dataset {
    pub fn new(dim: usize, num_classes: usize, features: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if dim == 0 || num_classes == 0 {
            return Err(Error::dim("dataset needs positive dim and class count"));
        }
        if features.len() != dim * labels.len() {
            return Err(Error::dim(format!(
                "{} feature values for {} samples of dim {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&l| l as usize >= num_classes) {
            return Err(Error::domain(format!(
                "label {} at sample {i} outside {num_classes} classes",
                labels[i]
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("non-finite feature value"));
        }
        Ok(Self {
            dim,
            num_classes,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> (&[f64], u8) {
        (&self.features[i * self.dim..(i + 1) * self.dim], self.labels[i])
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let (x, y) = self.sample(i);
            features.extend_from_slice(x);
            labels.push(y);
        }
        Self {
            dim: self.dim,
            num_classes: self.num_classes,
            features,
            labels,
        }
    }

    /// Copy with sample `i` replaced.
    pub fn with_replaced(&self, i: usize, x: &[f64], y: u8) -> Result<Self> {
        if i >= self.len() {
            return Err(Error::Index {
                what: "sample",
                index: i,
                len: self.len(),
            });
        }
        if x.len() != self.dim || y as usize >= self.num_classes {
            return Err(Error::dim("replacement sample does not fit the dataset"));
        }
        let mut out = self.clone();
        out.features[i * self.dim..(i + 1) * self.dim].copy_from_slice(x);
        out.labels[i] = y;
        Ok(out)
    }
}

/// Gaussian class blobs: class `c` is centred at `separation · e_(c mod dims)`
/// (negated for every second wrap-around) with unit-variance isotropic noise.
#[derive(Debug, Clone, Copy)]
pub struct SynthSpec {
    pub classes: usize,
    pub dims: usize,
    pub per_class: usize,
    pub separation: f64,
}

pub fn synth_dataset(spec: SynthSpec, seeds: &SeedPolicy) -> Result<Dataset> {
    if spec.classes > 2 * spec.dims {
        return Err(Error::domain("need at least classes/2 dimensions"));
    }
    let n = spec.classes * spec.per_class;
    let mut features = Vec::with_capacity(n * spec.dims);
    let mut labels = Vec::with_capacity(n);
    for c in 0..spec.classes {
        let mut rng = seeds.stream(Purpose::Synthetic, c as u64, 0);
        let axis = c % spec.dims;
        let sign = if (c / spec.dims) % 2 == 0 { 1.0 } else { -1.0 };
        for _ in 0..spec.per_class {
            for j in 0..spec.dims {
                let centre = if j == axis { sign * spec.separation } else { 0.0 };
                features.push(centre + std_normal(&mut rng));
            }
            labels.push(c as u8);
        }
    }
    Dataset::new(spec.dims, spec.classes, features, labels)
}

/// Random even split into `k` disjoint shards whose sizes differ by at most one.
pub fn partition(dataset: &Dataset, k: usize, seeds: &SeedPolicy) -> Result<Vec<LocalDataset>> {
    if k == 0 {
        return Err(Error::domain("cannot partition into zero shards"));
    }
    if k > dataset.len() {
        return Err(Error::domain(format!(
            "{k} shards requested for {} samples",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut seeds.stream(Purpose::Partition, 0, 0));
    let base = dataset.len() / k;
    let extra = dataset.len() % k;
    let mut shards = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        shards.push(dataset.subset(&order[start..start + size]));
        start += size;
    }
    Ok(shards)
}
