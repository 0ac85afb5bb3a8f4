//! Disentangling and quantifying consistent knowledge between the
//! intermediate-layer features of two neural networks.
//!
//! A recursive gated network `g` reconstructs a target feature `x*` from a
//! source feature `x`; recording its ReLU gates splits `g(x)` into exact
//! per-order components, and what `g` cannot reconstruct is the residual
//! `xΔ = x* − g(x)`.

pub mod disentangler;
pub mod error;
pub mod fpk;
pub mod heatmap;
pub mod metrics;
pub mod numerics;
pub mod toylab;
pub mod training;

pub use disentangler::{DisentanglerNet, ForwardTrace, Mode, OrderDecomposition};
pub use error::{Error, Result};
pub use metrics::{ConsistencyReport, ReportMeta};
pub use numerics::{Rng, Tensor};
pub use training::{FeatureBatch, TrainConfig};
