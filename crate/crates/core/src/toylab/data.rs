use crate::numerics::{Rng, Tensor};

/// Labeled inputs of a synthetic classification task.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let d = self.inputs.cols();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.inputs.row(i));
        }
        Dataset {
            inputs: Tensor::new(vec![indices.len(), d], data).expect("subset keeps width"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// First and second half.
    pub fn halves(&self) -> (Dataset, Dataset) {
        let mid = self.len() / 2;
        let first: Vec<usize> = (0..mid).collect();
        let second: Vec<usize> = (mid..self.len()).collect();
        (self.subset(&first), self.subset(&second))
    }
}

/// Gaussian-mixture classification: every class owns a few isotropic
/// clusters with centers drawn once per task.
#[derive(Clone, Debug)]
pub struct MixtureTask {
    pub input_dim: usize,
    pub classes: usize,
    pub spread: f64,
    centers: Vec<(usize, Vec<f64>)>,
}

impl MixtureTask {
    pub fn new(input_dim: usize, classes: usize, modes_per_class: usize, spread: f64, rng: &mut Rng) -> Self {
        let mut centers = Vec::with_capacity(classes * modes_per_class);
        for c in 0..classes {
            for _ in 0..modes_per_class {
                centers.push((c, rng.normal_vec(input_dim)));
            }
        }
        Self {
            input_dim,
            classes,
            spread,
            centers,
        }
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Dataset {
        let mut data = Vec::with_capacity(n * self.input_dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let (label, center) = &self.centers[rng.below(self.centers.len())];
            data.extend(center.iter().map(|c| c + self.spread * rng.normal()));
            labels.push(*label);
        }
        Dataset {
            inputs: Tensor::new(vec![n, self.input_dim], data).expect("sized above"),
            labels,
            classes: self.classes,
        }
    }
}
