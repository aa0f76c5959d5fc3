//! One-hidden-layer ReLU network with a softmax cross-entropy head.
//!
//! Parameters live in one flat vector laid out as
//! `[W1 (input × hidden, row-major), b1 (hidden), W2 (hidden × classes), b2 (classes)]`.

use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;

use super::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{Purpose, SeedPolicy};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams(pub Vec<f64>);

impl ModelParams {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

/// Contiguous copy of selected samples.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Array2<f64>,
    pub labels: Vec<u8>,
}

impl Batch {
    pub fn from_indices(data: &Dataset, indices: &[usize]) -> Self {
        let mut x = Array2::zeros((indices.len(), data.dim()));
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            let (feat, y) = data.sample(i);
            x.row_mut(row).assign(&ArrayView1::from(feat));
            labels.push(y);
        }
        Self { x, labels }
    }

    pub fn full(data: &Dataset) -> Self {
        let x = Array2::from_shape_vec((data.len(), data.dim()), data.features().to_vec())
            .expect("dataset storage is row-major n × dim");
        Self {
            x,
            labels: data.labels().to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

struct Views<'a> {
    w1: ArrayView2<'a, f64>,
    b1: ArrayView1<'a, f64>,
    w2: ArrayView2<'a, f64>,
    b2: ArrayView1<'a, f64>,
}

struct ViewsMut<'a> {
    w1: ArrayViewMut2<'a, f64>,
    b1: ArrayViewMut1<'a, f64>,
    w2: ArrayViewMut2<'a, f64>,
    b2: ArrayViewMut1<'a, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

impl Mlp {
    pub fn new(input: usize, hidden: usize, classes: usize) -> Self {
        Self {
            input,
            hidden,
            classes,
        }
    }

    pub fn dim(&self) -> usize {
        self.input * self.hidden + self.hidden + self.hidden * self.classes + self.classes
    }

    fn split_lens(&self) -> [usize; 4] {
        [
            self.input * self.hidden,
            self.hidden,
            self.hidden * self.classes,
            self.classes,
        ]
    }

    fn views<'a>(&self, theta: &'a [f64]) -> Views<'a> {
        let [a, b, c, _] = self.split_lens();
        let (w1, rest) = theta.split_at(a);
        let (b1, rest) = rest.split_at(b);
        let (w2, b2) = rest.split_at(c);
        Views {
            w1: ArrayView2::from_shape((self.input, self.hidden), w1).expect("W1 shape"),
            b1: ArrayView1::from(b1),
            w2: ArrayView2::from_shape((self.hidden, self.classes), w2).expect("W2 shape"),
            b2: ArrayView1::from(b2),
        }
    }

    fn views_mut<'a>(&self, theta: &'a mut [f64]) -> ViewsMut<'a> {
        let [a, b, c, _] = self.split_lens();
        let (w1, rest) = theta.split_at_mut(a);
        let (b1, rest) = rest.split_at_mut(b);
        let (w2, b2) = rest.split_at_mut(c);
        ViewsMut {
            w1: ArrayViewMut2::from_shape((self.input, self.hidden), w1).expect("W1 shape"),
            b1: ArrayViewMut1::from(b1),
            w2: ArrayViewMut2::from_shape((self.hidden, self.classes), w2).expect("W2 shape"),
            b2: ArrayViewMut1::from(b2),
        }
    }

    /// Uniform fan-in initialisation `U(−1/√fan_in, 1/√fan_in)` for weights,
    /// zero biases.
    pub fn init(&self, seeds: &SeedPolicy) -> ModelParams {
        let mut theta = vec![0.0; self.dim()];
        let mut rng = seeds.stream(Purpose::ModelInit, 0, 0);
        {
            let mut v = self.views_mut(&mut theta);
            let a1 = 1.0 / (self.input as f64).sqrt();
            v.w1.mapv_inplace(|_| rng.random_range(-a1..a1));
            let a2 = 1.0 / (self.hidden as f64).sqrt();
            v.w2.mapv_inplace(|_| rng.random_range(-a2..a2));
            v.b1.fill(0.0);
            v.b2.fill(0.0);
        }
        ModelParams(theta)
    }

    fn check(&self, theta: &[f64], x: &ArrayView2<f64>, labels: &[u8]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::dim(format!("theta has {} entries, model needs {}", theta.len(), self.dim())));
        }
        if x.ncols() != self.input || x.nrows() != labels.len() {
            return Err(Error::dim(format!(
                "batch {}×{} with {} labels for input dim {}",
                x.nrows(),
                x.ncols(),
                labels.len(),
                self.input
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::Empty("batch"));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= self.classes) {
            return Err(Error::domain(format!("label {l} outside {} classes", self.classes)));
        }
        Ok(())
    }

    fn hidden_pre(&self, v: &Views, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z1 = x.dot(&v.w1);
        z1 += &v.b1;
        z1
    }

    /// Mean cross-entropy over the batch and the raw logits.
    pub fn forward_loss(&self, theta: &[f64], x: ArrayView2<f64>, labels: &[u8]) -> Result<(f64, Array2<f64>)> {
        self.check(theta, &x, labels)?;
        let v = self.views(theta);
        let hidden = self.hidden_pre(&v, &x).mapv_into(relu);
        let mut logits = hidden.dot(&v.w2);
        logits += &v.b2;
        let loss = mean_cross_entropy(&logits, labels);
        Ok((loss, logits))
    }

    /// Mean loss and its gradient with respect to the flat parameter vector.
    pub fn loss_and_gradient(&self, theta: &[f64], x: ArrayView2<f64>, labels: &[u8]) -> Result<(f64, Vec<f64>)> {
        self.check(theta, &x, labels)?;
        let v = self.views(theta);
        let n = x.nrows() as f64;
        let z1 = self.hidden_pre(&v, &x);
        let a1 = z1.mapv(relu);
        let mut logits = a1.dot(&v.w2);
        logits += &v.b2;
        let loss = mean_cross_entropy(&logits, labels);

        // dL/dlogits = (softmax − onehot) / n
        let mut dz2 = softmax_rows(&logits);
        for (mut row, &y) in dz2.rows_mut().into_iter().zip(labels) {
            row[y as usize] -= 1.0;
        }
        dz2.mapv_inplace(|g| g / n);

        let mut grad = vec![0.0; self.dim()];
        {
            let mut g = self.views_mut(&mut grad);
            g.w2.assign(&a1.t().dot(&dz2));
            g.b2.assign(&dz2.sum_axis(Axis(0)));
            let mut dz1 = dz2.dot(&v.w2.t());
            dz1.zip_mut_with(&z1, |d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
            g.w1.assign(&x.t().dot(&dz1));
            g.b1.assign(&dz1.sum_axis(Axis(0)));
        }
        Ok((loss, grad))
    }

    pub fn evaluate(&self, theta: &[f64], data: &Dataset) -> Result<Evaluation> {
        if data.is_empty() {
            return Err(Error::Empty("test set"));
        }
        const CHUNK: usize = 1000;
        let mut correct = 0usize;
        let mut loss_sum = 0.0;
        let batch = Batch::full(data);
        let mut start = 0;
        while start < batch.len() {
            let end = (start + CHUNK).min(batch.len());
            let labels = &batch.labels[start..end];
            let (loss, logits) = self.forward_loss(theta, batch.x.slice(s![start..end, ..]), labels)?;
            loss_sum += loss * (end - start) as f64;
            for (row, &y) in logits.rows().into_iter().zip(labels) {
                if argmax(row) == y as usize {
                    correct += 1;
                }
            }
            start = end;
        }
        Ok(Evaluation {
            accuracy: correct as f64 / batch.len() as f64,
            loss: loss_sum / batch.len() as f64,
        })
    }
}

#[inline]
fn relu(z: f64) -> f64 {
    z.max(0.0)
}

fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|z| (z - m).exp());
        let total = row.sum();
        row.mapv_inplace(|e| e / total);
    }
    p
}

fn mean_cross_entropy(logits: &Array2<f64>, labels: &[u8]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        total += lse - row[y as usize];
    }
    total / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn layout_dimension() {
        assert_eq!(Mlp::new(784, 100, 10).dim(), 784 * 100 + 100 + 100 * 10 + 10);
    }

    #[test]
    fn zero_weights_give_uniform_loss() {
        let m = Mlp::new(3, 4, 10);
        let theta = vec![0.0; m.dim()];
        let x = array![[0.5, -1.0, 2.0], [0.0, 0.0, 1.0]];
        let (loss, _) = m.forward_loss(&theta, x.view(), &[3, 7]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((loss - 2.3026).abs() < 1e-4);
    }

    #[test]
    fn confident_prediction_has_small_loss() {
        let m = Mlp::new(1, 1, 2);
        // hidden = relu(x), logits = [0, 50·hidden]
        let theta = vec![1.0, 0.0, 0.0, 50.0, 0.0, 0.0];
        let (loss, _) = m.forward_loss(&theta, array![[1.0]].view(), &[1]).unwrap();
        assert!(loss < 1e-20);
    }

    #[test]
    fn duplicated_batch_same_gradient() {
        let m = Mlp::new(3, 5, 4);
        let theta = m.init(&SeedPolicy::new(1)).0;
        let x = array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]];
        let x2 = array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.5], [0.1, 0.2, 0.3], [1.0, -1.0, 0.5]];
        let (_, g1) = m.loss_and_gradient(&theta, x.view(), &[0, 3]).unwrap();
        let (_, g2) = m.loss_and_gradient(&theta, x2.view(), &[0, 3, 0, 3]).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_network_bias_gradient_is_softmax_formula() {
        // at θ = 0 the output is uniform, so dL/db2_c = 1/C − freq(c)
        let m = Mlp::new(2, 3, 4);
        let theta = vec![0.0; m.dim()];
        let x = array![[1.0, -1.0], [-1.0, 1.0], [0.5, -0.5], [-0.5, 0.5]];
        let labels = [0u8, 0, 1, 3];
        let (_, g) = m.loss_and_gradient(&theta, x.view(), &labels).unwrap();
        let b2 = &g[m.dim() - 4..];
        let freq = [0.5, 0.25, 0.0, 0.25];
        for c in 0..4 {
            assert!((b2[c] - (0.25 - freq[c])).abs() < 1e-15);
        }
        // no signal reaches the hidden layer through zero weights
        assert!(g[..m.dim() - 4].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors() {
        let m = Mlp::new(2, 2, 2);
        let theta = vec![0.0; m.dim()];
        assert!(m.forward_loss(&theta[1..], array![[1.0, 2.0]].view(), &[0]).is_err());
        assert!(m.forward_loss(&theta, array![[1.0, 2.0, 3.0]].view(), &[0]).is_err());
        assert!(m.forward_loss(&theta, array![[1.0, 2.0]].view(), &[2]).is_err());
    }

    #[test]
    fn memorised_set_scores_one() {
        // identity-like network that copies the input to the logits
        let m = Mlp::new(3, 3, 3);
        let mut theta = vec![0.0; m.dim()];
        for i in 0..3 {
            theta[i * 3 + i] = 1.0;
            theta[9 + 3 + i * 3 + i] = 1.0;
        }
        let data = Dataset::new(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], vec![0, 1, 2]).unwrap();
        assert_eq!(m.evaluate(&theta, &data).unwrap().accuracy, 1.0);
        let empty = Dataset::new(3, 3, vec![], vec![]).unwrap();
        assert!(m.evaluate(&theta, &empty).is_err());
    }
}
