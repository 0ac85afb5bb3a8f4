//! The recursive `K+1`-block disentangler network `g` and its exact
//! order-wise decomposition.
//!
//! Block `k` computes `h_k = W_k [x + p_{k+1} ReLU(Σ_{k+1}^{-1/2} h_{k+1})]`
//! for `k < K` and `h_K = W_K x`; the network output is `h_0`. Recording the
//! ReLU gates of one forward pass turns every branch into a linear map, so
//! `g(x)` splits exactly into one component per order.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::numerics::{matmul_nt, Rng, Tensor};
use crate::training::FeatureBatch;

/// Lower bound on every variance estimate in `Σ_k`.
pub const SIGMA_FLOOR: f64 = 1e-5;

const NET_MAGIC: &[u8; 6] = b"KCNET1";

/// How a feature batch is presented to the linear blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Each sample's feature is flattened into one vector.
    Dense,
    /// Features are `[C, spatial...]` maps; every spatial position is a
    /// channel vector and all positions share one linear map.
    Conv1x1,
}

impl Mode {
    /// Convolutional mode with the given kernel size. Only 1×1 kernels keep
    /// the per-position linearity the gated replay relies on.
    pub fn conv(kernel: usize) -> Result<Mode> {
        if kernel == 1 {
            Ok(Mode::Conv1x1)
        } else {
            Err(Error::Unsupported(format!(
                "kernel size {kernel}: gated replay needs 1x1 kernels"
            )))
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Mode::Dense => 0,
            Mode::Conv1x1 => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Mode> {
        match code {
            0 => Ok(Mode::Dense),
            1 => Ok(Mode::Conv1x1),
            c => Err(Error::Format(format!("unknown mode code {c}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Dense => "dense",
            Mode::Conv1x1 => "conv1x1",
        }
    }

    /// Vector length the blocks see for a sample of the given feature shape.
    pub fn vector_len(self, feature_shape: &[usize]) -> usize {
        match self {
            Mode::Dense => feature_shape.iter().product(),
            Mode::Conv1x1 => feature_shape.first().copied().unwrap_or(1),
        }
    }

    /// Number of vectors each sample contributes.
    pub fn positions(self, feature_shape: &[usize]) -> usize {
        match self {
            Mode::Dense => 1,
            Mode::Conv1x1 => feature_shape.iter().skip(1).product(),
        }
    }

    /// Lays a batch out as a `[rows × vector_len]` matrix. Rows of one sample
    /// are contiguous; in conv mode row `n·P + q` is position `q` of sample `n`.
    pub fn to_rows(self, batch: &FeatureBatch) -> Tensor {
        let n = batch.samples();
        let shape = batch.feature_shape();
        let c = self.vector_len(shape);
        let positions = self.positions(shape);
        match self {
            Mode::Dense => Tensor::new(vec![n, c], batch.data().to_vec())
                .expect("dense layout preserves length"),
            Mode::Conv1x1 => {
                let src = batch.data();
                let mut out = vec![0.0; n * positions * c];
                for s in 0..n {
                    let base = s * c * positions;
                    for ch in 0..c {
                        for q in 0..positions {
                            out[(s * positions + q) * c + ch] = src[base + ch * positions + q];
                        }
                    }
                }
                Tensor::new(vec![n * positions, c], out).expect("conv layout preserves length")
            }
        }
    }

    /// Inverse of [`Mode::to_rows`]: `rows` has `samples·P` rows of width
    /// `channels`; `spatial` is the per-sample spatial shape.
    pub fn from_rows(self, rows: &Tensor, samples: usize, spatial: &[usize]) -> FeatureBatch {
        let c = rows.cols();
        match self {
            Mode::Dense => FeatureBatch::new(vec![samples, c], rows.data().to_vec())
                .expect("dense layout preserves length"),
            Mode::Conv1x1 => {
                let positions: usize = spatial.iter().product();
                let src = rows.data();
                let mut out = vec![0.0; samples * c * positions];
                for s in 0..samples {
                    let base = s * c * positions;
                    for q in 0..positions {
                        let row = &src[(s * positions + q) * c..(s * positions + q + 1) * c];
                        for (ch, &v) in row.iter().enumerate() {
                            out[base + ch * positions + q] = v;
                        }
                    }
                }
                let mut shape = vec![samples, c];
                shape.extend_from_slice(spatial);
                FeatureBatch::new(shape, out).expect("conv layout preserves length")
            }
        }
    }

    pub fn spatial(self, feature_shape: &[usize]) -> Vec<usize> {
        match self {
            Mode::Dense => Vec::new(),
            Mode::Conv1x1 => feature_shape.iter().skip(1).copied().collect(),
        }
    }
}

/// Parameters of the disentangler network.
///
/// `weights[k]` is `W_k`, stored as `[outputs × inputs]`. Blocks `k ≥ 1` map
/// the input dimension onto itself; only `W_0` maps to the target dimension.
/// `p[k-1]` and `sigma[k-1]` hold `p_k` and the diagonal of `Σ_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct DisentanglerNet {
    mode: Mode,
    dim_in: usize,
    dim_out: usize,
    weights: Vec<Tensor>,
    p: Vec<f64>,
    sigma: Vec<Vec<f64>>,
}

/// Everything one forward pass records: the pre-normalization activations
/// `h_0..h_K` (as row matrices) and the binary gates of blocks `1..K`.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub h: Vec<Tensor>,
    /// `gates[k-1]` holds `A_k`, row-major like `h[k]`.
    pub gates: Vec<Vec<bool>>,
}

impl ForwardTrace {
    pub fn gate(&self, k: usize) -> &[bool] {
        &self.gates[k - 1]
    }
}

/// `x* = x^(0) + … + x^(K) + xΔ`.
#[derive(Clone, Debug)]
pub struct OrderDecomposition {
    pub components: Vec<FeatureBatch>,
    pub residual: FeatureBatch,
    pub target: FeatureBatch,
    /// `g(x)` as produced by the forward pass.
    pub output: FeatureBatch,
}

impl OrderDecomposition {
    pub fn order(&self) -> usize {
        self.components.len() - 1
    }

    /// Elementwise sum of all order components.
    pub fn component_sum(&self) -> FeatureBatch {
        let mut acc = vec![0.0; self.output.data().len()];
        for c in &self.components {
            for (a, v) in acc.iter_mut().zip(c.data()) {
                *a += v;
            }
        }
        FeatureBatch::new(self.output.shape().to_vec(), acc).expect("components share a shape")
    }

    /// `max |Σ_k x^(k) − g(x)|`.
    pub fn additivity_error(&self) -> f64 {
        self.component_sum()
            .data()
            .iter()
            .zip(self.output.data())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl DisentanglerNet {
    /// Glorot-uniform weights, `p_k = 1` and unit placeholder variances.
    pub fn init(dim_in: usize, dim_out: usize, order: usize, mode: Mode, rng: &mut Rng) -> Result<Self> {
        if dim_in == 0 || dim_out == 0 {
            return Err(Error::Precondition("dimensions must be positive".into()));
        }
        let mut weights = Vec::with_capacity(order + 1);
        for k in 0..=order {
            let out = if k == 0 { dim_out } else { dim_in };
            let bound = (6.0 / (dim_in + out) as f64).sqrt();
            weights.push(Tensor::new(vec![out, dim_in], rng.uniform_vec(out * dim_in, -bound, bound))?);
        }
        Ok(Self {
            mode,
            dim_in,
            dim_out,
            weights,
            p: vec![1.0; order],
            sigma: vec![vec![1.0; dim_in]; order],
        })
    }

    /// Assembles a net from explicit parameters. Variances below
    /// [`SIGMA_FLOOR`] are raised to it.
    pub fn from_parts(mode: Mode, weights: Vec<Tensor>, p: Vec<f64>, sigma: Vec<Vec<f64>>) -> Result<Self> {
        let order = weights
            .len()
            .checked_sub(1)
            .ok_or_else(|| Error::Precondition("at least one block is required".into()))?;
        let w0 = &weights[0];
        if w0.shape().len() != 2 {
            return Err(Error::Precondition("weights must be matrices".into()));
        }
        let (dim_out, dim_in) = (w0.shape()[0], w0.shape()[1]);
        for (k, w) in weights.iter().enumerate().skip(1) {
            if w.shape() != [dim_in, dim_in] {
                return Err(Error::Shape {
                    left: w.shape().to_vec(),
                    right: vec![dim_in, dim_in],
                    context: if k == 1 { "block 1 weight" } else { "higher block weight" },
                });
            }
        }
        if p.len() != order {
            return Err(Error::Precondition(format!("expected {order} p-scalars, got {}", p.len())));
        }
        if sigma.len() != order {
            return Err(Error::SigmaUninitialized { block: sigma.len() + 1 });
        }
        let mut sigma = sigma;
        for (i, s) in sigma.iter_mut().enumerate() {
            if s.len() != dim_in {
                return Err(Error::SigmaUninitialized { block: i + 1 });
            }
            for v in s.iter_mut() {
                if !(v.is_finite()) {
                    return Err(Error::SigmaUninitialized { block: i + 1 });
                }
                *v = v.max(SIGMA_FLOOR);
            }
        }
        Ok(Self {
            mode,
            dim_in,
            dim_out,
            weights,
            p,
            sigma,
        })
    }

    pub fn order(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn weight(&self, k: usize) -> &Tensor {
        &self.weights[k]
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    /// `p_k` for `k` in `1..=K`.
    pub fn p(&self, k: usize) -> f64 {
        self.p[k - 1]
    }

    pub fn p_values(&self) -> &[f64] {
        &self.p
    }

    /// Diagonal of `Σ_k` for `k` in `1..=K`.
    pub fn sigma(&self, k: usize) -> &[f64] {
        &self.sigma[k - 1]
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [Tensor] {
        &mut self.weights
    }

    pub(crate) fn p_mut(&mut self) -> &mut [f64] {
        &mut self.p
    }

    pub(crate) fn set_sigma(&mut self, k: usize, values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.dim_in);
        self.sigma[k - 1] = values.into_iter().map(|v| v.max(SIGMA_FLOOR)).collect();
    }

    /// Total number of trainable scalars (weights and p).
    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Tensor::len).sum::<usize>() + self.p.len()
    }

    /// Inverse standard deviations `Σ_k^{-1/2}`.
    pub(crate) fn inv_std(&self, k: usize) -> Vec<f64> {
        self.sigma[k - 1].iter().map(|s| 1.0 / s.sqrt()).collect()
    }

    fn check_sigma(&self) -> Result<()> {
        for (i, s) in self.sigma.iter().enumerate() {
            if s.len() != self.dim_in || s.iter().any(|v| !(*v >= SIGMA_FLOOR)) {
                return Err(Error::SigmaUninitialized { block: i + 1 });
            }
        }
        Ok(())
    }

    pub(crate) fn check_rows(&self, rows: &Tensor) -> Result<()> {
        if rows.cols() != self.dim_in {
            return Err(Error::Shape {
                left: rows.shape().to_vec(),
                right: vec![rows.rows(), self.dim_in],
                context: "disentangler input",
            });
        }
        self.check_sigma()
    }

    /// Forward recursion over a `[rows × dim_in]` matrix.
    pub fn forward_rows(&self, x: &Tensor) -> Result<(Tensor, ForwardTrace)> {
        self.check_rows(x)?;
        let order = self.order();
        let mut h: Vec<Option<Tensor>> = vec![None; order + 1];
        let mut gates = vec![Vec::new(); order];
        h[order] = Some(matmul_nt(x, &self.weights[order])?);
        for k in (0..order).rev() {
            let upper = h[k + 1].as_ref().expect("computed above");
            let inv = self.inv_std(k + 1);
            let pk = self.p[k];
            let d = self.dim_in;
            let mut input = x.clone();
            let mut gate = vec![false; upper.len()];
            for (idx, (&hv, u)) in upper.data().iter().zip(input.data_mut()).enumerate() {
                let v = hv * inv[idx % d];
                if v > 0.0 {
                    gate[idx] = true;
                    *u += pk * v;
                }
            }
            gates[k] = gate;
            h[k] = Some(matmul_nt(&input, &self.weights[k])?);
        }
        let h: Vec<Tensor> = h.into_iter().map(|t| t.expect("every block computed")).collect();
        Ok((h[0].clone(), ForwardTrace { h, gates }))
    }

    /// Rebuilds each order component through the linear chain
    /// `W_0 · p_1 A_1 Σ_1^{-1/2} W_1 · … · p_k A_k Σ_k^{-1/2} W_k · x`
    /// using the supplied gates (`gates[k-1]` is `A_k`).
    pub fn replay_rows(&self, x: &Tensor, gates: &[Vec<bool>]) -> Result<Vec<Tensor>> {
        self.check_rows(x)?;
        let order = self.order();
        if gates.len() != order || gates.iter().any(|g| g.len() != x.rows() * self.dim_in) {
            return Err(Error::Precondition("gate masks do not match the input".into()));
        }
        let d = self.dim_in;
        let mut components = Vec::with_capacity(order + 1);
        for k in 0..=order {
            let mut z = matmul_nt(x, &self.weights[k])?;
            for j in (1..=k).rev() {
                let inv = self.inv_std(j);
                let pj = self.p[j - 1];
                let gate = &gates[j - 1];
                for (idx, v) in z.data_mut().iter_mut().enumerate() {
                    *v = if gate[idx] { pj * (*v * inv[idx % d]) } else { 0.0 };
                }
                z = matmul_nt(&z, &self.weights[j - 1])?;
            }
            components.push(z);
        }
        Ok(components)
    }

    fn check_batch(&self, x: &FeatureBatch) -> Result<()> {
        if x.samples() == 0 {
            return Err(Error::NoSamples);
        }
        if self.mode.vector_len(x.feature_shape()) != self.dim_in {
            return Err(Error::Shape {
                left: x.shape().to_vec(),
                right: vec![self.dim_in],
                context: "input feature vs net input dimension",
            });
        }
        Ok(())
    }

    /// `g(x)` together with the recorded trace.
    pub fn forward(&self, x: &FeatureBatch) -> Result<(FeatureBatch, ForwardTrace)> {
        self.check_batch(x)?;
        let rows = self.mode.to_rows(x);
        let (out, trace) = self.forward_rows(&rows)?;
        let spatial = self.mode.spatial(x.feature_shape());
        Ok((self.mode.from_rows(&out, x.samples(), &spatial), trace))
    }

    /// Splits `x*` into the `K+1` order components of `g(x)` and the
    /// residual `x* − g(x)`. Gates come from one recorded forward pass.
    pub fn decompose(&self, x: &FeatureBatch, x_star: &FeatureBatch) -> Result<OrderDecomposition> {
        self.check_batch(x)?;
        let spatial = self.mode.spatial(x.feature_shape());
        let mut expected = vec![x.samples(), self.dim_out];
        expected.extend_from_slice(&spatial);
        let star_shape_ok = match self.mode {
            Mode::Dense => x_star.samples() == x.samples() && x_star.feature_len() == self.dim_out,
            Mode::Conv1x1 => x_star.shape() == expected.as_slice(),
        };
        if !star_shape_ok {
            return Err(Error::Shape {
                left: x_star.shape().to_vec(),
                right: expected,
                context: "target feature vs net output",
            });
        }
        let rows = self.mode.to_rows(x);
        let (out, trace) = self.forward_rows(&rows)?;
        let parts = self.replay_rows(&rows, &trace.gates)?;
        let reshape = |t: &Tensor| -> Result<FeatureBatch> {
            let b = self.mode.from_rows(t, x.samples(), &spatial);
            FeatureBatch::new(x_star.shape().to_vec(), b.into_data())
        };
        let output = reshape(&out)?;
        let components = parts.iter().map(reshape).collect::<Result<Vec<_>>>()?;
        let residual_data = x_star
            .data()
            .iter()
            .zip(output.data())
            .map(|(t, g)| t - g)
            .collect();
        let residual = FeatureBatch::new(x_star.shape().to_vec(), residual_data)?;
        Ok(OrderDecomposition {
            components,
            residual,
            target: x_star.clone(),
            output,
        })
    }

    /// Same net with every `p_k` for `k > keep` set to zero.
    pub fn with_orders_silenced_above(&self, keep: usize) -> Self {
        let mut net = self.clone();
        for (i, p) in net.p.iter_mut().enumerate() {
            if i + 1 > keep {
                *p = 0.0;
            }
        }
        net
    }

    /// Drops blocks above `keep`, yielding a `keep`-order net.
    pub fn truncated(&self, keep: usize) -> Result<Self> {
        if keep > self.order() {
            return Err(Error::Precondition(format!("cannot truncate order {} to {keep}", self.order())));
        }
        Self::from_parts(
            self.mode,
            self.weights[..=keep].to_vec(),
            self.p[..keep].to_vec(),
            self.sigma[..keep].to_vec(),
        )
    }

    /// Writes the `KCNET1` checkpoint: magic, then `u32` order, mode, input
    /// and output dims, then `W_0..W_K`, `p_1..p_K` and `Σ_1..Σ_K` as
    /// little-endian `f64`.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(NET_MAGIC)?;
        for v in [self.order() as u32, self.mode.code(), self.dim_in as u32, self.dim_out as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        let scalars = self
            .weights
            .iter()
            .flat_map(|t| t.data().iter())
            .chain(self.p.iter())
            .chain(self.sigma.iter().flatten());
        for v in scalars {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let mut cur = ByteCursor::new(&buf);
        if cur.take(6)? != NET_MAGIC {
            return Err(Error::Format("bad magic, expected KCNET1".into()));
        }
        let order = cur.u32()? as usize;
        let mode = Mode::from_code(cur.u32()?)?;
        let dim_in = cur.u32()? as usize;
        let dim_out = cur.u32()? as usize;
        if dim_in == 0 || dim_out == 0 {
            return Err(Error::Format("zero dimension in checkpoint".into()));
        }
        let expected = (dim_out * dim_in + order * dim_in * dim_in + order + order * dim_in) * 8;
        if cur.remaining() != expected {
            return Err(Error::Format(format!(
                "payload is {} bytes, expected {expected}",
                cur.remaining()
            )));
        }
        let mut weights = Vec::with_capacity(order + 1);
        for k in 0..=order {
            let out = if k == 0 { dim_out } else { dim_in };
            weights.push(Tensor::new(vec![out, dim_in], cur.f64s(out * dim_in)?)?);
        }
        let p = cur.f64s(order)?;
        let sigma = (0..order).map(|_| cur.f64s(dim_in)).collect::<Result<Vec<_>>>()?;
        Self::from_parts(mode, weights, p, sigma)
    }
}

pub(crate) struct ByteCursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}
