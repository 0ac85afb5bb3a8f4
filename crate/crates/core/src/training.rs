//! Feature batches and their standardization, the reconstruction objective
//! with its order penalty, analytic gradients and the Adam fitting loop.

use std::io::Write;

use crate::disentangler::{DisentanglerNet, Mode, SIGMA_FLOOR};
use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_nt, matmul_tn, pooled_variance_of, Rng, Tensor};

/// Floor applied to per-element standard deviations during normalization.
pub const STD_FLOOR: f64 = 1e-8;

/// Default penalty weight on the order scalars.
pub const DEFAULT_LAMBDA: f64 = 0.1;
/// Penalty weight used for noisy shallow features (AlexNet-style layers).
pub const ALEXNET_LAMBDA: f64 = 8.0;

#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    /// Per normalized unit (feature element in dense mode, channel in conv mode).
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub mode: Mode,
}

/// `N` samples of an intermediate-layer feature, sample axis first.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBatch {
    tensor: Tensor,
    norm_stats: Option<NormStats>,
    source_tag: String,
}

impl FeatureBatch {
    /// `shape[0]` is the sample count.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::Precondition("a batch needs a sample axis".into()));
        }
        let tensor = if shape[0] == 0 {
            if !data.is_empty() {
                return Err(Error::Shape {
                    left: shape,
                    right: vec![data.len()],
                    context: "empty batch with data",
                });
            }
            Tensor::zeros(shape)
        } else {
            Tensor::new(shape, data)?
        };
        Ok(Self {
            tensor,
            norm_stats: None,
            source_tag: String::new(),
        })
    }

    pub fn from_tensor(tensor: Tensor) -> Self {
        Self {
            tensor,
            norm_stats: None,
            source_tag: String::new(),
        }
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.source_tag = tag.into();
        self
    }

    pub fn tag(&self) -> &str {
        &self.source_tag
    }

    pub fn norm_stats(&self) -> Option<&NormStats> {
        self.norm_stats.as_ref()
    }

    pub fn samples(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn feature_shape(&self) -> &[usize] {
        &self.tensor.shape()[1..]
    }

    pub fn feature_len(&self) -> usize {
        self.feature_shape().iter().product()
    }

    pub fn data(&self) -> &[f64] {
        self.tensor.data()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.tensor.into_data()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let d = self.feature_len();
        &self.tensor.data()[i * d..(i + 1) * d]
    }

    /// Batch restricted to the given sample indices, in that order.
    pub fn select(&self, indices: &[usize]) -> FeatureBatch {
        let mut data = Vec::with_capacity(indices.len() * self.feature_len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let mut shape = self.shape().to_vec();
        shape[0] = indices.len();
        FeatureBatch {
            tensor: Tensor::new(shape, data).expect("selection preserves feature shape"),
            norm_stats: self.norm_stats.clone(),
            source_tag: self.source_tag.clone(),
        }
    }

    /// Feature elements restricted to `elements` (dense layout).
    pub fn select_elements(&self, elements: &[usize]) -> FeatureBatch {
        let n = self.samples();
        let mut data = Vec::with_capacity(n * elements.len());
        for s in 0..n {
            let row = self.sample(s);
            data.extend(elements.iter().map(|&e| row[e]));
        }
        FeatureBatch::new(vec![n, elements.len()], data).expect("selection is consistent")
            .with_tag(self.source_tag.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FeatureBatch {
        FeatureBatch {
            tensor: self.tensor.map(f),
            norm_stats: None,
            source_tag: self.source_tag.clone(),
        }
    }

    /// Elementwise sum with another batch of the same shape.
    pub fn add(&self, other: &FeatureBatch) -> Result<FeatureBatch> {
        Ok(FeatureBatch::from_tensor(self.tensor.add(&other.tensor)?).with_tag(self.source_tag.clone()))
    }

    pub fn sub(&self, other: &FeatureBatch) -> Result<FeatureBatch> {
        Ok(FeatureBatch::from_tensor(self.tensor.sub(&other.tensor)?).with_tag(self.source_tag.clone()))
    }

    /// Standardizes with previously computed statistics (e.g. from a
    /// training split).
    pub fn apply_norm(&self, stats: &NormStats) -> Result<FeatureBatch> {
        let units = unit_count(self.feature_shape(), stats.mode);
        if units != stats.mean.len() {
            return Err(Error::Shape {
                left: self.shape().to_vec(),
                right: vec![stats.mean.len()],
                context: "normalization statistics",
            });
        }
        let per_unit = per_unit_len(self.feature_shape(), stats.mode);
        let d = self.feature_len();
        let data = self
            .data()
            .iter()
            .enumerate()
            .map(|(idx, &v)| {
                let u = (idx % d) / per_unit;
                (v - stats.mean[u]) / stats.std[u]
            })
            .collect();
        Ok(FeatureBatch {
            tensor: Tensor::new(self.shape().to_vec(), data)?,
            norm_stats: Some(stats.clone()),
            source_tag: self.source_tag.clone(),
        })
    }

    /// Undoes a normalization recorded on this batch.
    pub fn denormalize(&self) -> Result<FeatureBatch> {
        let stats = self
            .norm_stats
            .as_ref()
            .ok_or_else(|| Error::Precondition("batch carries no normalization statistics".into()))?;
        let per_unit = per_unit_len(self.feature_shape(), stats.mode);
        let d = self.feature_len();
        let data = self
            .data()
            .iter()
            .enumerate()
            .map(|(idx, &v)| {
                let u = (idx % d) / per_unit;
                v * stats.std[u] + stats.mean[u]
            })
            .collect();
        Ok(FeatureBatch {
            tensor: Tensor::new(self.shape().to_vec(), data)?,
            norm_stats: None,
            source_tag: self.source_tag.clone(),
        })
    }
}

fn unit_count(feature_shape: &[usize], mode: Mode) -> usize {
    match mode {
        Mode::Dense => feature_shape.iter().product(),
        Mode::Conv1x1 => feature_shape.first().copied().unwrap_or(1),
    }
}

fn per_unit_len(feature_shape: &[usize], mode: Mode) -> usize {
    match mode {
        Mode::Dense => 1,
        Mode::Conv1x1 => feature_shape.iter().skip(1).product(),
    }
}

/// Zero-mean, unit-variance standardization over the batch: per element in
/// dense mode, per channel (pooled over positions) in conv mode. Constant
/// units are centered and divided by [`STD_FLOOR`].
pub fn normalize(batch: &FeatureBatch, mode: Mode) -> Result<FeatureBatch> {
    let n = batch.samples();
    if n < 2 {
        return Err(Error::Precondition(format!("normalization needs at least 2 samples, got {n}")));
    }
    let shape = batch.feature_shape();
    let units = unit_count(shape, mode);
    let per_unit = per_unit_len(shape, mode);
    let d = batch.feature_len();
    let count = (n * per_unit) as f64;
    let mut mean = vec![0.0; units];
    for s in 0..n {
        for (idx, v) in batch.sample(s).iter().enumerate() {
            mean[idx / per_unit] += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; units];
    for s in 0..n {
        for (idx, v) in batch.sample(s).iter().enumerate() {
            let u = idx / per_unit;
            var[u] += (v - mean[u]) * (v - mean[u]);
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / count).sqrt().max(STD_FLOOR)).collect();
    debug_assert_eq!(units * per_unit, d);
    batch.apply_norm(&NormStats { mean, std, mode })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Number of nonlinear orders `K`.
    pub order: usize,
    pub mode: Mode,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub sigma_momentum: f64,
    /// Relative loss change over [`CONVERGENCE_WINDOW`] epochs that stops training.
    pub convergence_tol: f64,
}

pub const CONVERGENCE_WINDOW: usize = 10;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            order: 3,
            mode: Mode::Dense,
            lambda: DEFAULT_LAMBDA,
            epochs: 300,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            sigma_momentum: 0.9,
            convergence_tol: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Precondition("lambda must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Precondition("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Precondition("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.sigma_momentum) {
            return Err(Error::Precondition("sigma_momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub recon: f64,
    pub penalty: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.recon + self.penalty
    }
}

/// Gradient of the objective with respect to every `W_k` and `p_k`.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub weights: Vec<Tensor>,
    /// `p[k-1]` is `∂loss/∂p_k`.
    pub p: Vec<f64>,
}

struct Prepared {
    x: Tensor,
    target: Tensor,
    samples: usize,
}

fn prepare(net: &DisentanglerNet, x: &FeatureBatch, x_star: &FeatureBatch) -> Result<Prepared> {
    if x.samples() == 0 {
        return Err(Error::NoSamples);
    }
    if x.samples() != x_star.samples() {
        return Err(Error::Shape {
            left: x.shape().to_vec(),
            right: x_star.shape().to_vec(),
            context: "source and target sample counts",
        });
    }
    let mode = net.mode();
    let rows = mode.to_rows(x);
    let target = mode.to_rows(x_star);
    if rows.rows() != target.rows() || target.cols() != net.dim_out() || rows.cols() != net.dim_in() {
        return Err(Error::Shape {
            left: x.shape().to_vec(),
            right: x_star.shape().to_vec(),
            context: "source/target features vs net dimensions",
        });
    }
    Ok(Prepared {
        x: rows,
        target,
        samples: x.samples(),
    })
}

fn penalty(net: &DisentanglerNet, lambda: f64) -> f64 {
    lambda * net.p_values().iter().map(|p| p * p).sum::<f64>()
}

fn recon_rows(net: &DisentanglerNet, p: &Prepared) -> Result<f64> {
    let (out, _) = net.forward_rows(&p.x)?;
    let sq: f64 = out
        .data()
        .iter()
        .zip(p.target.data())
        .map(|(g, t)| (g - t) * (g - t))
        .sum();
    Ok(sq / p.samples as f64)
}

/// Mean squared reconstruction error per sample plus `λ Σ p_k²`.
pub fn loss_terms(net: &DisentanglerNet, x: &FeatureBatch, x_star: &FeatureBatch, lambda: f64) -> Result<LossTerms> {
    let prepared = prepare(net, x, x_star)?;
    Ok(LossTerms {
        recon: recon_rows(net, &prepared)?,
        penalty: penalty(net, lambda),
    })
}

pub fn loss(net: &DisentanglerNet, x: &FeatureBatch, x_star: &FeatureBatch, lambda: f64) -> Result<f64> {
    loss_terms(net, x, x_star, lambda).map(|t| t.total())
}

pub fn gradients(net: &DisentanglerNet, x: &FeatureBatch, x_star: &FeatureBatch, lambda: f64) -> Result<Gradients> {
    let prepared = prepare(net, x, x_star)?;
    Ok(backprop(net, &prepared, lambda)?.0)
}

/// Backpropagation through the recursion with `Σ` held constant. Also
/// returns the reconstruction term and the `h_k` activations of the pass.
fn backprop(net: &DisentanglerNet, p: &Prepared, lambda: f64) -> Result<(Gradients, f64, Vec<Tensor>)> {
    let order = net.order();
    let d = net.dim_in();
    let x = &p.x;
    // forward, keeping block inputs u_k and the normalized ReLU outputs r_{k+1}
    let mut h: Vec<Option<Tensor>> = vec![None; order + 1];
    let mut inputs: Vec<Option<Tensor>> = vec![None; order + 1];
    let mut relu_out: Vec<Vec<f64>> = vec![Vec::new(); order + 1];
    h[order] = Some(matmul_nt(x, net.weight(order))?);
    for k in (0..order).rev() {
        let upper = h[k + 1].as_ref().expect("computed");
        let inv = net.inv_std(k + 1);
        let pk = net.p(k + 1);
        let r: Vec<f64> = upper
            .data()
            .iter()
            .enumerate()
            .map(|(idx, hv)| (hv * inv[idx % d]).max(0.0))
            .collect();
        let mut u = x.clone();
        for (uv, rv) in u.data_mut().iter_mut().zip(&r) {
            *uv += pk * rv;
        }
        h[k] = Some(matmul_nt(&u, net.weight(k))?);
        inputs[k] = Some(u);
        relu_out[k + 1] = r;
    }
    let h: Vec<Tensor> = h.into_iter().map(|t| t.expect("computed")).collect();

    let scale = 2.0 / p.samples as f64;
    let mut sq = 0.0;
    let delta0: Vec<f64> = h[0]
        .data()
        .iter()
        .zip(p.target.data())
        .map(|(g, t)| {
            sq += (g - t) * (g - t);
            scale * (g - t)
        })
        .collect();
    let recon = sq / p.samples as f64;

    let mut grad_w: Vec<Option<Tensor>> = vec![None; order + 1];
    let mut grad_p = vec![0.0; order];
    let mut delta = Tensor::new(h[0].shape().to_vec(), delta0)?;
    for k in 0..order {
        let u = inputs[k].as_ref().expect("computed");
        grad_w[k] = Some(matmul_tn(&delta, u)?);
        let grad_u = matmul(&delta, net.weight(k))?;
        let r = &relu_out[k + 1];
        grad_p[k] = grad_u.data().iter().zip(r).map(|(g, rv)| g * rv).sum();
        let inv = net.inv_std(k + 1);
        let pk = net.p(k + 1);
        let next: Vec<f64> = grad_u
            .data()
            .iter()
            .zip(r)
            .enumerate()
            .map(|(idx, (g, rv))| if *rv > 0.0 { pk * g * inv[idx % d] } else { 0.0 })
            .collect();
        delta = Tensor::new(h[k + 1].shape().to_vec(), next)?;
    }
    grad_w[order] = Some(matmul_tn(&delta, x)?);
    for (g, pk) in grad_p.iter_mut().zip(net.p_values()) {
        *g += 2.0 * lambda * pk;
    }
    Ok((
        Gradients {
            weights: grad_w.into_iter().map(|t| t.expect("computed")).collect(),
            p: grad_p,
        },
        recon,
        h,
    ))
}

/// Adam with per-group moment buffers.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }

    /// Starts a new optimization step; call once before updating the groups.
    pub fn tick(&mut self) {
        self.step += 1;
    }

    pub fn update(&mut self, group: usize, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        if self.moments.len() <= group {
            self.moments.resize(group + 1, (Vec::new(), Vec::new()));
        }
        let (m, v) = &mut self.moments[group];
        if m.len() != params.len() {
            *m = vec![0.0; params.len()];
            *v = vec![0.0; params.len()];
        }
        let t = self.step.max(1) as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub recon: f64,
    pub penalty: f64,
    pub p: Vec<f64>,
    /// `Var(x* − g(x)) / Var(x*)` on the full training batch.
    pub residual_ratio: f64,
}

fn column_variances(t: &Tensor) -> Vec<f64> {
    let (m, c) = (t.rows(), t.cols());
    let mut mean = vec![0.0; c];
    for r in 0..m {
        for (mu, v) in mean.iter_mut().zip(t.row(r)) {
            *mu += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    let mut var = vec![0.0; c];
    for r in 0..m {
        for ((s, v), mu) in var.iter_mut().zip(t.row(r)).zip(&mean) {
            *s += (v - mu) * (v - mu);
        }
    }
    var.into_iter().map(|s| (s / m as f64).max(SIGMA_FLOOR)).collect()
}

/// Sets every `Σ_k` from the full batch, top block first, so each estimate
/// sees the already calibrated blocks above it.
fn calibrate_sigma(net: &mut DisentanglerNet, x: &Tensor) -> Result<()> {
    for k in (1..=net.order()).rev() {
        let (_, trace) = net.forward_rows(x)?;
        net.set_sigma(k, column_variances(&trace.h[k]));
    }
    Ok(())
}

fn evaluate(net: &DisentanglerNet, all: &Prepared, lambda: f64, epoch: usize) -> Result<EpochRecord> {
    let (out, _) = net.forward_rows(&all.x)?;
    let residual: Vec<f64> = all.target.data().iter().zip(out.data()).map(|(t, g)| t - g).collect();
    let recon = residual.iter().map(|r| r * r).sum::<f64>() / all.samples as f64;
    let target_var = pooled_variance_of(all.target.data())?;
    let residual_ratio = if target_var > 0.0 {
        pooled_variance_of(&residual)? / target_var
    } else {
        0.0
    };
    let pen = penalty(net, lambda);
    let loss = recon + pen;
    if !loss.is_finite() {
        return Err(Error::Diverged { epoch, loss });
    }
    Ok(EpochRecord {
        epoch,
        loss,
        recon,
        penalty: pen,
        p: net.p_values().to_vec(),
        residual_ratio,
    })
}

/// Fits `g` so that `g(x) ≈ x*` under the penalized objective. Both batches
/// are expected to be normalized already.
pub fn fit(x: &FeatureBatch, x_star: &FeatureBatch, cfg: &TrainConfig) -> Result<(DisentanglerNet, Vec<EpochRecord>)> {
    cfg.validate()?;
    if x.samples() == 0 {
        return Err(Error::NoSamples);
    }
    let mode = cfg.mode;
    let dim_in = mode.vector_len(x.feature_shape());
    let dim_out = mode.vector_len(x_star.feature_shape());
    if mode == Mode::Conv1x1 && mode.spatial(x.feature_shape()) != mode.spatial(x_star.feature_shape()) {
        return Err(Error::Shape {
            left: x.shape().to_vec(),
            right: x_star.shape().to_vec(),
            context: "spatial sizes of source and target",
        });
    }
    let mut rng = Rng::new(cfg.seed);
    let mut net = DisentanglerNet::init(dim_in, dim_out, cfg.order, mode, &mut rng)?;
    let all = prepare(&net, x, x_star)?;
    calibrate_sigma(&mut net, &all.x)?;

    let n = x.samples();
    let positions = mode.positions(x.feature_shape());
    let mut adam = Adam::new(cfg.learning_rate);
    let mut history: Vec<EpochRecord> = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    let full_batch = cfg.batch_size >= n;

    for epoch in 1..=cfg.epochs {
        if !full_batch {
            order = rng.permutation(n);
        }
        for chunk in order.chunks(cfg.batch_size) {
            let batch = if full_batch {
                Prepared {
                    x: all.x.clone(),
                    target: all.target.clone(),
                    samples: n,
                }
            } else {
                gather_rows(&all, chunk, positions)?
            };
            let (grads, recon, h) = backprop(&net, &batch, cfg.lambda)?;
            if !recon.is_finite() {
                return Err(Error::Diverged { epoch, loss: recon });
            }
            adam.tick();
            for (k, g) in grads.weights.iter().enumerate() {
                adam.update(k, net.weights_mut()[k].data_mut(), g.data());
            }
            adam.update(cfg.order + 1, net.p_mut(), &grads.p);
            let m = cfg.sigma_momentum;
            for k in 1..=cfg.order {
                let batch_var = column_variances(&h[k]);
                let updated = net
                    .sigma(k)
                    .iter()
                    .zip(&batch_var)
                    .map(|(s, b)| m * s + (1.0 - m) * b)
                    .collect();
                net.set_sigma(k, updated);
            }
        }
        let record = evaluate(&net, &all, cfg.lambda, epoch)?;
        history.push(record);
        if history.len() > CONVERGENCE_WINDOW {
            let now = history[history.len() - 1].loss;
            let then = history[history.len() - 1 - CONVERGENCE_WINDOW].loss;
            if (then - now).abs() <= cfg.convergence_tol * then.abs().max(f64::MIN_POSITIVE) {
                break;
            }
        }
    }
    Ok((net, history))
}

fn gather_rows(all: &Prepared, samples: &[usize], positions: usize) -> Result<Prepared> {
    let (cx, ct) = (all.x.cols(), all.target.cols());
    let mut xs = Vec::with_capacity(samples.len() * positions * cx);
    let mut ts = Vec::with_capacity(samples.len() * positions * ct);
    for &s in samples {
        for q in 0..positions {
            xs.extend_from_slice(all.x.row(s * positions + q));
            ts.extend_from_slice(all.target.row(s * positions + q));
        }
    }
    Ok(Prepared {
        x: Tensor::new(vec![samples.len() * positions, cx], xs)?,
        target: Tensor::new(vec![samples.len() * positions, ct], ts)?,
        samples: samples.len(),
    })
}

/// Writes the training log as CSV:
/// `epoch,loss,recon_term,penalty_term,p_1..p_K,residual_ratio`.
pub fn write_log_csv<W: Write>(mut w: W, order: usize, records: &[EpochRecord]) -> Result<()> {
    let mut header = String::from("epoch,loss,recon_term,penalty_term");
    for k in 1..=order {
        header.push_str(&format!(",p_{k}"));
    }
    header.push_str(",residual_ratio");
    writeln!(w, "{header}")?;
    for r in records {
        let mut line = format!("{},{},{},{}", r.epoch, r.loss, r.recon, r.penalty);
        for p in &r.p {
            line.push_str(&format!(",{p}"));
        }
        line.push_str(&format!(",{}", r.residual_ratio));
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rows: &[&[f64]]) -> FeatureBatch {
        let d = rows[0].len();
        FeatureBatch::new(vec![rows.len(), d], rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    #[test]
    fn normalize_two_samples() {
        let out = normalize(&batch(&[&[0.0], &[2.0]]), Mode::Dense).unwrap();
        assert_eq!(out.data(), &[-1.0, 1.0]);
        let stats = out.norm_stats().unwrap();
        assert_eq!((stats.mean[0], stats.std[0]), (1.0, 1.0));
        assert_eq!(out.denormalize().unwrap().data(), &[0.0, 2.0]);
    }

    #[test]
    fn normalize_constant_element() {
        let out = normalize(&batch(&[&[3.0, 1.0], &[3.0, 5.0], &[3.0, 2.0]]), Mode::Dense).unwrap();
        assert_eq!(out.norm_stats().unwrap().std[0], STD_FLOOR);
        for s in 0..3 {
            assert_eq!(out.sample(s)[0], 0.0);
        }
    }

    #[test]
    fn normalize_is_idempotent() {
        let mut rng = Rng::new(2);
        let raw = FeatureBatch::new(vec![40, 6], rng.uniform_vec(240, -3.0, 7.0)).unwrap();
        let once = normalize(&raw, Mode::Dense).unwrap();
        let twice = normalize(&once, Mode::Dense).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn normalize_per_channel_in_conv_mode() {
        let mut rng = Rng::new(3);
        let raw = FeatureBatch::new(vec![5, 2, 3, 3], rng.uniform_vec(90, 0.0, 4.0)).unwrap();
        let out = normalize(&raw, Mode::Conv1x1).unwrap();
        assert_eq!(out.norm_stats().unwrap().mean.len(), 2);
        let rows = Mode::Conv1x1.to_rows(&out);
        for c in 0..2 {
            let col: Vec<f64> = (0..rows.rows()).map(|r| rows.get(r, c)).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((pooled_variance_of(&col).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_needs_two_samples() {
        assert!(matches!(normalize(&batch(&[&[1.0]]), Mode::Dense), Err(Error::Precondition(_))));
    }

    #[test]
    fn loss_hand_example() {
        // W_0 = 0 gives g(x) = 0, so the per-sample error vector is (1, 0)
        let net = DisentanglerNet::from_parts(
            Mode::Dense,
            vec![Tensor::zeros(vec![2, 2]), Tensor::zeros(vec![2, 2])],
            vec![0.5],
            vec![vec![1.0, 1.0]],
        )
        .unwrap();
        let l = loss(&net, &batch(&[&[3.0, 4.0]]), &batch(&[&[1.0, 0.0]]), 0.1).unwrap();
        assert!((l - 1.025).abs() < 1e-15);
    }

    #[test]
    fn perfect_fit_with_zero_p_has_zero_loss() {
        let net = DisentanglerNet::from_parts(
            Mode::Dense,
            vec![Tensor::identity(2), Tensor::identity(2)],
            vec![0.0],
            vec![vec![1.0, 1.0]],
        )
        .unwrap();
        let x = batch(&[&[1.0, -2.0], &[0.5, 3.0]]);
        assert_eq!(loss(&net, &x, &x, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn zero_weights_leave_only_penalty_gradient() {
        let net = DisentanglerNet::from_parts(
            Mode::Dense,
            vec![Tensor::zeros(vec![2, 2]), Tensor::zeros(vec![2, 2]), Tensor::zeros(vec![2, 2])],
            vec![0.7, -1.3],
            vec![vec![1.0, 1.0], vec![1.0, 1.0]],
        )
        .unwrap();
        let x = batch(&[&[1.0, 2.0], &[-1.0, 0.5]]);
        let y = batch(&[&[0.3, -0.2], &[1.0, 1.0]]);
        let g = gradients(&net, &x, &y, 0.1).unwrap();
        assert_eq!(g.p, vec![2.0 * 0.1 * 0.7, 2.0 * 0.1 * -1.3]);
        let g0 = gradients(&net, &x, &y, 0.0).unwrap();
        assert_eq!(g0.p, vec![0.0, 0.0]);
    }

    #[test]
    fn defaults_match_documented_values() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lambda, 0.1);
        assert_eq!(ALEXNET_LAMBDA, 8.0);
        assert_eq!((cfg.epochs, cfg.convergence_tol), (300, 1e-6));
        assert_eq!(cfg.learning_rate, 1e-3);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cfg = TrainConfig { lambda: -1.0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn log_csv_layout() {
        let rec = EpochRecord {
            epoch: 1,
            loss: 1.5,
            recon: 1.25,
            penalty: 0.25,
            p: vec![1.0, 0.5],
            residual_ratio: 0.1,
        };
        let mut out = Vec::new();
        write_log_csv(&mut out, 2, &[rec]).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "epoch,loss,recon_term,penalty_term,p_1,p_2,residual_ratio\n1,1.5,1.25,0.25,1,0.5,0.1\n"
        );
    }
}
