//! Dense row-major tensors, a seeded RNG and the pooled-statistics kernels.
//!
//! Every reduction sums in ascending index order so that repeated runs are
//! bit-identical.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::training::FeatureBatch;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) && !data.is_empty() {
            return Err(Error::Shape {
                left: shape,
                right: vec![data.len()],
                context: "tensor shape vs data length",
            });
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                left: shape,
                right: vec![data.len()],
                context: "tensor shape vs data length",
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a 2-D tensor from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Precondition("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() < 2 {
            return 1;
        }
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape {
                left: self.shape,
                right: shape,
                context: "reshape",
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip(other, "sub", |a, b| a - b)
    }

    fn zip(&self, other: &Tensor, context: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                left: self.shape.clone(),
                right: other.shape.clone(),
                context,
            });
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn transpose(&self) -> Result<Self> {
        let (m, n) = self.dims2("transpose")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Self::new(vec![n, m], out)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        Ok(self
            .sub(other)?
            .data
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs())))
    }

    fn dims2(&self, context: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::Shape {
                left: self.shape.clone(),
                right: vec![0, 0],
                context,
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }
}

/// `a · b` for `a: m×k`, `b: k×n`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul lhs")?;
    let (k2, n) = b.dims2("matmul rhs")?;
    if k != k2 {
        return Err(Error::Shape {
            left: a.shape.clone(),
            right: b.shape.clone(),
            context: "matmul inner dimensions",
        });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `a · bᵀ` for `a: m×k`, `b: n×k`. Rows of `b` are output units, which is
/// how weight matrices are stored.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul_nt lhs")?;
    let (n, k2) = b.dims2("matmul_nt rhs")?;
    if k != k2 {
        return Err(Error::Shape {
            left: a.shape.clone(),
            right: b.shape.clone(),
            context: "matmul_nt inner dimensions",
        });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b.data[j * k..(j + 1) * k];
            out[i * n + j] = dot(arow, brow);
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `aᵀ · b` for `a: m×k`, `b: m×n`; sums over the shared row index.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul_tn lhs")?;
    let (m2, n) = b.dims2("matmul_tn rhs")?;
    if m != m2 {
        return Err(Error::Shape {
            left: a.shape.clone(),
            right: b.shape.clone(),
            context: "matmul_tn shared rows",
        });
    }
    let mut out = vec![0.0; k * n];
    for r in 0..m {
        let arow = &a.data[r * k..(r + 1) * k];
        let brow = &b.data[r * n..(r + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![k, n], out)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn relu(t: &Tensor) -> Tensor {
    t.map(|v| v.max(0.0))
}

/// Population variance of every value around one grand mean.
pub fn pooled_variance_of(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::NoSamples);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok(ss / n)
}

/// Variance pooled jointly over all samples and all feature elements.
pub fn pooled_variance(batch: &FeatureBatch) -> Result<f64> {
    if batch.samples() == 0 {
        return Err(Error::NoSamples);
    }
    pooled_variance_of(batch.data())
}

/// Seeded generator; the ChaCha8 stream is identical across platforms.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream, keyed by `stream`.
    pub fn fork(&self, stream: u64) -> Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(stream.wrapping_add(1));
        let seed = r.next_u64();
        Rng::new(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            p.swap(i, j);
        }
        p
    }

    pub fn uniform_vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform(lo, hi)).collect()
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let out = matmul(&Tensor::identity(2), &t(&[&[3.0], &[5.0]])).unwrap();
        assert_eq!(out.data(), &[3.0, 5.0]);
    }

    #[test]
    fn matmul_hand_example() {
        let out = matmul(&t(&[&[1.0, 2.0], &[3.0, 4.0]]), &t(&[&[1.0], &[1.0]])).unwrap();
        assert_eq!(out.shape(), &[2, 1]);
        assert_eq!(out.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let b = t(&[&[1.0, -2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let out = matmul(&Tensor::zeros(vec![2, 2]), &b).unwrap();
        assert_eq!(out.shape(), &[2, 3]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let err = matmul(&Tensor::zeros(vec![2, 3]), &Tensor::zeros(vec![2, 2])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn transposed_variants_agree() {
        let mut rng = Rng::new(3);
        let a = Tensor::new(vec![4, 3], rng.uniform_vec(12, -1.0, 1.0)).unwrap();
        let b = Tensor::new(vec![5, 3], rng.uniform_vec(15, -1.0, 1.0)).unwrap();
        let nt = matmul_nt(&a, &b).unwrap();
        let plain = matmul(&a, &b.transpose().unwrap()).unwrap();
        assert!(nt.max_abs_diff(&plain).unwrap() < 1e-15);

        let c = Tensor::new(vec![4, 2], rng.uniform_vec(8, -1.0, 1.0)).unwrap();
        let tn = matmul_tn(&a, &c).unwrap();
        let plain = matmul(&a.transpose().unwrap(), &c).unwrap();
        assert!(tn.max_abs_diff(&plain).unwrap() < 1e-15);
    }

    #[test]
    fn relu_cases() {
        let x = Tensor::new(vec![3], vec![1.0, -1.0, 0.0]).unwrap();
        assert_eq!(relu(&x).data(), &[1.0, 0.0, 0.0]);
        let neg = Tensor::new(vec![2], vec![-3.0, -0.5]).unwrap();
        assert_eq!(relu(&neg).data(), &[0.0, 0.0]);
        let pos = Tensor::new(vec![1], vec![2.5]).unwrap();
        assert_eq!(relu(&pos).data(), &[2.5]);
    }

    #[test]
    fn pooled_variance_small_cases() {
        assert_eq!(pooled_variance_of(&[4.0, 4.0, 4.0]).unwrap(), 0.0);
        assert_eq!(pooled_variance_of(&[0.0, 2.0]).unwrap(), 1.0);
        let one = FeatureBatch::new(vec![1, 2], vec![1.0, 3.0]).unwrap();
        assert_eq!(pooled_variance(&one).unwrap(), 1.0);
        assert!(matches!(pooled_variance_of(&[]), Err(Error::NoSamples)));
    }

    #[test]
    fn rng_is_deterministic_and_forks_differ() {
        let a: Vec<u64> = (0..4).map({
            let mut r = Rng::new(9);
            move |_| r.next_u64()
        }).collect();
        let b: Vec<u64> = (0..4).map({
            let mut r = Rng::new(9);
            move |_| r.next_u64()
        }).collect();
        assert_eq!(a, b);
        let root = Rng::new(9);
        assert_ne!(root.fork(1).next_u64(), root.fork(2).next_u64());
        let mut p = Rng::new(1).permutation(10);
        p.sort_unstable();
        assert_eq!(p, (0..10).collect::<Vec<_>>());
    }
}
