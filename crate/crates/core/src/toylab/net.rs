//! Small ReLU MLPs standing in for the two pretrained networks.

use sha2::{Digest, Sha256};

use crate::disentangler::DisentanglerNet;
use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_nt, matmul_tn, Rng, Tensor};
use crate::training::Adam;

use super::data::Dataset;

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `[outputs × inputs]`
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

/// Fully connected classifier: ReLU after every layer but the last.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyNet {
    layers: Vec<Linear>,
}

#[derive(Clone, Debug)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-2,
        }
    }
}

impl ToyNet {
    /// He-uniform weights and zero biases for layer widths `dims`.
    pub fn new(dims: &[usize], rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Precondition(format!("invalid layer widths {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = (6.0 / w[0] as f64).sqrt();
                Linear {
                    weight: Tensor::new(vec![w[1], w[0]], rng.uniform_vec(w[0] * w[1], -bound, bound))
                        .expect("sized above"),
                    bias: vec![0.0; w[1]],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].weight.rows() != pair[1].weight.cols() {
                return Err(Error::Shape {
                    left: pair[0].weight.shape().to_vec(),
                    right: pair[1].weight.shape().to_vec(),
                    context: "consecutive layers",
                });
            }
        }
        if layers.is_empty() || layers.iter().any(|l| l.bias.len() != l.weight.rows()) {
            return Err(Error::Precondition("bias widths must match layer outputs".into()));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    /// Number of hidden (tappable) layers.
    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn width(&self, hidden: usize) -> usize {
        self.layers[hidden].weight.rows()
    }

    fn affine(layer: &Linear, x: &Tensor) -> Tensor {
        let mut z = matmul_nt(x, &layer.weight).expect("layer widths checked");
        let n = layer.bias.len();
        for (i, v) in z.data_mut().iter_mut().enumerate() {
            *v += layer.bias[i % n];
        }
        z
    }

    /// Every layer's output: post-ReLU activations for hidden layers, logits last.
    pub fn forward_all(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        if x.cols() != self.layers[0].weight.cols() {
            return Err(Error::Shape {
                left: x.shape().to_vec(),
                right: self.layers[0].weight.shape().to_vec(),
                context: "toy net input",
            });
        }
        let mut outs: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = outs.last().unwrap_or(x);
            let z = Self::affine(layer, input);
            outs.push(if i + 1 < self.layers.len() { z.map(|v| v.max(0.0)) } else { z });
        }
        Ok(outs)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_all(x)?.pop().expect("at least one layer"))
    }

    /// Post-ReLU activation of hidden layer `hidden` (0-based).
    pub fn feature(&self, x: &Tensor, hidden: usize) -> Result<Tensor> {
        if hidden >= self.hidden_layers() {
            return Err(Error::Precondition(format!(
                "layer {hidden} is not a hidden layer (net has {})",
                self.hidden_layers()
            )));
        }
        let mut outs = self.forward_all(x)?;
        Ok(outs.swap_remove(hidden))
    }

    /// Logits computed from a hidden activation onwards.
    pub fn logits_from(&self, feature: &Tensor, hidden: usize) -> Result<Tensor> {
        let mut h = feature.clone();
        for (i, layer) in self.layers.iter().enumerate().skip(hidden + 1) {
            let z = Self::affine(layer, &h);
            h = if i + 1 < self.layers.len() { z.map(|v| v.max(0.0)) } else { z };
        }
        Ok(h)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        let pred = self.predict(&data.inputs)?;
        let hits = pred.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / data.len().max(1) as f64)
    }

    /// Mean softmax cross-entropy and its gradient for every layer.
    pub fn loss_and_grads(&self, x: &Tensor, labels: &[usize]) -> Result<(f64, Vec<Linear>)> {
        let outs = self.forward_all(x)?;
        let logits = outs.last().expect("at least one layer");
        let n = x.rows();
        let c = logits.cols();
        let mut delta = vec![0.0; n * c];
        let mut loss = 0.0;
        for r in 0..n {
            let row = logits.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            loss += z.ln() + max - row[labels[r]];
            for j in 0..c {
                let target = if j == labels[r] { 1.0 } else { 0.0 };
                delta[r * c + j] = (exps[j] / z - target) / n as f64;
            }
        }
        let mut delta = Tensor::new(vec![n, c], delta)?;
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let input = if i == 0 { x } else { &outs[i - 1] };
            let gw = matmul_tn(&delta, input)?;
            let mut gb = vec![0.0; delta.cols()];
            for r in 0..n {
                for (b, d) in gb.iter_mut().zip(delta.row(r)) {
                    *b += d;
                }
            }
            grads.push(Linear { weight: gw, bias: gb });
            if i > 0 {
                let back = matmul(&delta, &self.layers[i].weight)?;
                let mask = &outs[i - 1];
                let data = back
                    .data()
                    .iter()
                    .zip(mask.data())
                    .map(|(g, a)| if *a > 0.0 { *g } else { 0.0 })
                    .collect();
                delta = Tensor::new(back.shape().to_vec(), data)?;
            }
        }
        grads.reverse();
        Ok((loss / n as f64, grads))
    }

    /// Mini-batch Adam on softmax cross-entropy. Returns per-epoch mean loss.
    pub fn train(&mut self, data: &Dataset, schedule: &TrainSchedule, rng: &mut Rng) -> Result<Vec<f64>> {
        let mut adam = Adam::new(schedule.learning_rate);
        let mut history = Vec::with_capacity(schedule.epochs);
        for epoch in 1..=schedule.epochs {
            let order = rng.permutation(data.len());
            let mut total = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(schedule.batch_size.max(1)) {
                let batch = data.subset(chunk);
                let (loss, grads) = self.loss_and_grads(&batch.inputs, &batch.labels)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, loss });
                }
                adam.tick();
                for (i, (layer, g)) in self.layers.iter_mut().zip(&grads).enumerate() {
                    adam.update(2 * i, layer.weight.data_mut(), g.weight.data());
                    adam.update(2 * i + 1, &mut layer.bias, &g.bias);
                }
                total += loss;
                batches += 1;
            }
            history.push(total / batches.max(1) as f64);
        }
        Ok(history)
    }

    /// Permuted twin: hidden layer `hidden` emits `A·x` for the
    /// permutation `A` (`out[i] = x[perm[i]]`) and the following layer
    /// absorbs `A⁻¹`, so network outputs are unchanged.
    pub fn permuted_twin(&self, hidden: usize, perm: &[usize]) -> Result<ToyNet> {
        if hidden >= self.hidden_layers() {
            return Err(Error::Precondition(format!("layer {hidden} is not a hidden layer")));
        }
        let width = self.width(hidden);
        if !is_permutation(perm, width) {
            return Err(Error::Precondition(format!(
                "expected a permutation of {width} elements, got length {}",
                perm.len()
            )));
        }
        let mut twin = self.clone();
        let tapped = &self.layers[hidden];
        let cols = tapped.weight.cols();
        let mut w = vec![0.0; width * cols];
        let mut b = vec![0.0; width];
        for (i, &src) in perm.iter().enumerate() {
            w[i * cols..(i + 1) * cols].copy_from_slice(tapped.weight.row(src));
            b[i] = tapped.bias[src];
        }
        twin.layers[hidden] = Linear {
            weight: Tensor::new(vec![width, cols], w)?,
            bias: b,
        };
        // next layer: W_rev = W · A⁻¹, i.e. column i of W_rev is column perm[i] of W
        let next = &self.layers[hidden + 1].weight;
        let rows = next.rows();
        let mut w = vec![0.0; rows * width];
        for r in 0..rows {
            for (i, &src) in perm.iter().enumerate() {
                w[r * width + i] = next.get(r, src);
            }
        }
        twin.layers[hidden + 1].weight = Tensor::new(vec![rows, width], w)?;
        Ok(twin)
    }

    /// Zeroes the `fraction` smallest-magnitude weights of each of the
    /// first `layers` layers. Biases are kept.
    pub fn magnitude_pruned(&self, fraction: f64, layers: usize) -> Result<ToyNet> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Precondition(format!("pruning fraction {fraction} outside [0, 1]")));
        }
        let mut pruned = self.clone();
        for layer in pruned.layers.iter_mut().take(layers) {
            let data = layer.weight.data_mut();
            let count = (fraction * data.len() as f64).round() as usize;
            let mut idx: Vec<usize> = (0..data.len()).collect();
            // stable on ties: smaller index first
            idx.sort_by(|&a, &b| data[a].abs().total_cmp(&data[b].abs()).then(a.cmp(&b)));
            for &i in idx.iter().take(count) {
                data[i] = 0.0;
            }
        }
        Ok(pruned)
    }

    /// Fraction of exactly-zero weights.
    pub fn sparsity(&self) -> f64 {
        let total: usize = self.layers.iter().map(|l| l.weight.len()).sum();
        let zeros: usize = self
            .layers
            .iter()
            .map(|l| l.weight.data().iter().filter(|&&v| v == 0.0).count())
            .sum();
        zeros as f64 / total as f64
    }

    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.layers {
            for v in l.weight.data().iter().chain(&l.bias) {
                h.update(v.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

pub fn net_checksum(net: &DisentanglerNet) -> String {
    let mut h = Sha256::new();
    for w in net.weights() {
        for v in w.data() {
            h.update(v.to_le_bytes());
        }
    }
    for v in net.p_values() {
        h.update(v.to_le_bytes());
    }
    for k in 1..=net.order() {
        for v in net.sigma(k) {
            h.update(v.to_le_bytes());
        }
    }
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn is_permutation(perm: &[usize], n: usize) -> bool {
    if perm.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    perm.iter().all(|&p| p < n && !std::mem::replace(&mut seen[p], true))
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
