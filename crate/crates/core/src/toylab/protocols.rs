//! The experiment protocols. Every `run_*` function is a pure function of
//! `(spec, seed)`.

use crate::disentangler::{DisentanglerNet, Mode, OrderDecomposition};
use crate::error::{Error, Result};
use crate::metrics::{self, order_variance_table, ConsistencyReport, ReportMeta};
use crate::numerics::{Rng, Tensor};
use crate::training::{fit, normalize, EpochRecord, FeatureBatch, TrainConfig};

use super::data::{Dataset, MixtureTask};
use super::net::{net_checksum, ToyNet, TrainSchedule};
use super::spec::{dims, ExperimentSpec, Protocol};

// Independent random streams derived from one seed.
const STREAM_TASK: u64 = 0;
const STREAM_DATA: u64 = 1;
const STREAM_NET_A: u64 = 2;
const STREAM_NET_B: u64 = 3;
const STREAM_PERM: u64 = 4;
const STREAM_NOISE_A: u64 = 5;
const STREAM_NOISE_B: u64 = 6;
const STREAM_HEADS: u64 = 7;
const STREAM_G: u64 = 8;

/// Everything one seed of a protocol produced.
#[derive(Clone, Debug, Default)]
pub struct SeedResult {
    pub seed: u64,
    /// Named scalars, in a protocol-defined order.
    pub metrics: Vec<(String, f64)>,
    pub notes: Vec<(String, String)>,
    pub reports: Vec<(String, ConsistencyReport)>,
    /// Batches to export as heatmaps, keyed by a file prefix.
    pub heatmaps: Vec<(String, FeatureBatch)>,
}

impl SeedResult {
    fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Default::default()
        }
    }

    fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

pub fn run_seed(spec: &ExperimentSpec, seed: u64) -> Result<SeedResult> {
    match spec.protocol {
        Protocol::PermTwin => run_perm_twin(spec, seed),
        Protocol::StabilityInit | Protocol::StabilityData => run_stability(spec, seed),
        Protocol::Refine => run_refinement(spec, seed),
        Protocol::PruneDiscard => run_prune_discard(spec, seed),
        Protocol::Diagnose => run_diagnose(spec, seed),
    }
}

/// Train, pool and test splits of one synthetic task.
#[derive(Clone, Debug)]
pub struct Lab {
    pub task: MixtureTask,
    pub train: Dataset,
    pub pool: Dataset,
    pub test: Dataset,
}

impl Lab {
    pub fn new(spec: &ExperimentSpec, seed: u64) -> Self {
        let root = Rng::new(seed);
        let task = MixtureTask::new(
            spec.input_dim,
            spec.classes,
            spec.modes_per_class,
            spec.spread,
            &mut root.fork(STREAM_TASK),
        );
        let mut rng = root.fork(STREAM_DATA);
        let train = task.sample(spec.train_samples, &mut rng);
        let pool = task.sample(spec.pool_samples, &mut rng);
        let test = task.sample(spec.test_samples, &mut rng);
        Self { task, train, pool, test }
    }
}

fn train_net(spec: &ExperimentSpec, layer_dims: &[usize], data: &Dataset, rng: &mut Rng) -> Result<ToyNet> {
    let mut net = ToyNet::new(layer_dims, rng)?;
    let schedule = TrainSchedule {
        epochs: spec.net_epochs,
        learning_rate: spec.net_lr,
        ..TrainSchedule::default()
    };
    net.train(data, &schedule, rng)?;
    Ok(net)
}

pub fn feature(net: &ToyNet, inputs: &Tensor, layer: usize, tag: &str) -> Result<FeatureBatch> {
    Ok(FeatureBatch::from_tensor(net.feature(inputs, layer)?).with_tag(tag))
}

pub fn g_config(spec: &ExperimentSpec, seed: u64) -> TrainConfig {
    TrainConfig {
        order: spec.k,
        mode: Mode::Dense,
        lambda: spec.lambda,
        epochs: spec.g_epochs,
        batch_size: spec.g_batch,
        learning_rate: spec.g_lr,
        seed,
        ..TrainConfig::default()
    }
}

/// A fitted disentangler together with its decomposition of the fitting pair.
#[derive(Clone, Debug)]
pub struct Fitted {
    pub net: DisentanglerNet,
    pub decomposition: OrderDecomposition,
    pub history: Vec<EpochRecord>,
    pub report: ConsistencyReport,
}

/// Fits `g` on already-normalized batches and decomposes the same pair.
pub fn fit_and_decompose(x: &FeatureBatch, x_star: &FeatureBatch, cfg: &TrainConfig) -> Result<Fitted> {
    let (net, history) = fit(x, x_star, cfg)?;
    let decomposition = net.decompose(x, x_star)?;
    let report = order_variance_table(&decomposition).with_meta(ReportMeta {
        source: x.tag().to_string(),
        target: x_star.tag().to_string(),
        order: cfg.order,
        lambda: Some(cfg.lambda),
        seed: Some(cfg.seed),
    });
    Ok(Fitted {
        net,
        decomposition,
        history,
        report,
    })
}

fn g_seed(seed: u64, index: u64) -> u64 {
    Rng::new(seed).fork(STREAM_G + index).next_u64()
}

pub fn run_perm_twin(spec: &ExperimentSpec, seed: u64) -> Result<SeedResult> {
    let lab = Lab::new(spec, seed);
    let root = Rng::new(seed);
    let tap = spec.tap();
    let original = train_net(spec, &spec.net_dims(), &lab.train, &mut root.fork(STREAM_NET_A))?;
    let perm = root.fork(STREAM_PERM).permutation(spec.width);
    let twin = original.permuted_twin(tap, &perm)?;

    let x = feature(&twin, &lab.pool.inputs, tap, "twin")?;
    let x_star = feature(&original, &lab.pool.inputs, tap, "original")?;

    let mut out = SeedResult::new(seed);
    let output_gap = twin
        .logits(&lab.test.inputs)?
        .max_abs_diff(&original.logits(&lab.test.inputs)?)?;
    out.metric("output_max_abs_diff", output_gap);

    let analytic = analytic_inverse(&perm)?;
    let residual = analytic.decompose(&x, &x_star)?.residual;
    let worst = residual.data().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    out.metric("analytic_residual_max", worst);

    let fitted = fit_and_decompose(&normalize(&x, Mode::Dense)?, &normalize(&x_star, Mode::Dense)?, &g_config(spec, g_seed(seed, 0)))?;
    out.metric("residual_ratio", fitted.report.instability);
    out.metric("order0_share", fitted.report.order0_share());
    out.metric("epochs", fitted.history.len() as f64);
    out.reports.push(("twin_to_original".into(), fitted.report));
    Ok(out)
}

/// The `K = 0` disentangler `W_0 = A⁻¹` that maps a permuted feature back.
pub fn analytic_inverse(perm: &[usize]) -> Result<DisentanglerNet> {
    let n = perm.len();
    let mut w = vec![0.0; n * n];
    for (i, &j) in perm.iter().enumerate() {
        w[j * n + i] = 1.0;
    }
    DisentanglerNet::from_parts(Mode::Dense, vec![Tensor::new(vec![n, n], w)?], vec![], vec![])
}

/// Symmetric instability between two nets at one hidden layer, with the
/// two directional reports.
pub fn layer_instability(
    a: &ToyNet,
    b: &ToyNet,
    inputs: &Tensor,
    layer: usize,
    cfg: &TrainConfig,
) -> Result<(f64, ConsistencyReport, ConsistencyReport)> {
    let xa = normalize(&feature(a, inputs, layer, "A")?, Mode::Dense)?;
    let xb = normalize(&feature(b, inputs, layer, "B")?, Mode::Dense)?;
    let ab = fit_and_decompose(&xa, &xb, cfg)?;
    let ba = fit_and_decompose(&xb, &xa, &TrainConfig { seed: cfg.seed ^ 1, ..cfg.clone() })?;
    let r_ab = metrics::instability_ratio(&ab.decomposition.residual, &xb)?;
    let r_ba = metrics::instability_ratio(&ba.decomposition.residual, &xa)?;
    Ok((metrics::symmetric_instability(r_ab, r_ba)?, ab.report, ba.report))
}

pub fn run_stability(spec: &ExperimentSpec, seed: u64) -> Result<SeedResult> {
    let lab = Lab::new(spec, seed);
    let root = Rng::new(seed);
    let layer_dims = spec.net_dims();
    let (a, b) = match spec.protocol {
        Protocol::StabilityInit => (
            train_net(spec, &layer_dims, &lab.train, &mut root.fork(STREAM_NET_A))?,
            train_net(spec, &layer_dims, &lab.train, &mut root.fork(STREAM_NET_B))?,
        ),
        Protocol::StabilityData => {
            // same initialization, disjoint halves of the training data
            let (first, second) = lab.train.halves();
            (
                train_net(spec, &layer_dims, &first, &mut root.fork(STREAM_NET_A))?,
                train_net(spec, &layer_dims, &second, &mut root.fork(STREAM_NET_A))?,
            )
        }
        other => return Err(Error::Spec(format!("{other} is not a stability protocol"))),
    };
    let mut out = SeedResult::new(seed);
    out.metric("accuracy_a", a.accuracy(&lab.test)?);
    out.metric("accuracy_b", b.accuracy(&lab.test)?);
    let mut per_layer = Vec::new();
    for layer in 0..spec.depth {
        let cfg = g_config(spec, g_seed(seed, layer as u64));
        let (inst, ab, ba) = layer_instability(&a, &b, &lab.pool.inputs, layer, &cfg)?;
        out.metric(format!("instability_layer{}", layer + 1), inst);
        out.reports.push((format!("layer{}_a_to_b", layer + 1), ab));
        out.reports.push((format!("layer{}_b_to_a", layer + 1), ba));
        per_layer.push(inst);
    }
    // reported, not required: whether the deepest layer is the least stable
    let deepest_least_stable = per_layer.last() >= per_layer.first();
    out.notes.push(("deeper_less_stable".into(), deepest_least_stable.to_string()));
    Ok(out)
}

/// Parameters of the two backbones and the disentangler, locked while heads
/// train on top of them.
pub struct FrozenBackbone<'a> {
    nets: Vec<&'a ToyNet>,
    g: Vec<&'a DisentanglerNet>,
    checksum: String,
}

impl<'a> FrozenBackbone<'a> {
    pub fn freeze(nets: Vec<&'a ToyNet>, g: Vec<&'a DisentanglerNet>) -> Self {
        let checksum = Self::digest(&nets, &g);
        Self { nets, g, checksum }
    }

    fn digest(nets: &[&ToyNet], g: &[&DisentanglerNet]) -> String {
        let parts: Vec<String> = nets
            .iter()
            .map(|n| n.checksum())
            .chain(g.iter().map(|n| net_checksum(n)))
            .collect();
        parts.join(":")
    }

    /// Checksum taken at freezing time.
    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    /// Fails if any frozen parameter changed since [`Self::freeze`].
    pub fn verify(&self) -> Result<()> {
        let now = Self::digest(&self.nets, &self.g);
        if now != self.checksum {
            return Err(Error::ProtocolViolation(
                "frozen parameters changed during head training".into(),
            ));
        }
        Ok(())
    }

    /// Frozen parameters never become trainable again.
    pub fn unfreeze(self) -> Result<()> {
        Err(Error::ProtocolViolation(
            "backbone and disentangler parameters must stay fixed while heads train".into(),
        ))
    }
}

/// Trains a linear softmax head on `train` features and returns its test
/// accuracy.
pub fn head_accuracy(
    spec: &ExperimentSpec,
    train: &FeatureBatch,
    train_labels: &[usize],
    test: &FeatureBatch,
    test_labels: &[usize],
    rng: &mut Rng,
) -> Result<f64> {
    let d = train.feature_len();
    let mut head = ToyNet::new(&[d, spec.classes], rng)?;
    let data = Dataset {
        inputs: Tensor::new(vec![train.samples(), d], train.data().to_vec())?,
        labels: train_labels.to_vec(),
        classes: spec.classes,
    };
    let schedule = TrainSchedule {
        epochs: spec.head_epochs,
        learning_rate: spec.head_lr,
        ..TrainSchedule::default()
    };
    head.train(&data, &schedule, rng)?;
    head.accuracy(&Dataset {
        inputs: Tensor::new(vec![test.samples(), d], test.data().to_vec())?,
        labels: test_labels.to_vec(),
        classes: spec.classes,
    })
}

/// Adds Gaussian noise with standard deviation `std[c] / snr` to the first
/// `channels` elements of every sample.
pub fn inject_noise(batch: &FeatureBatch, channels: usize, snr: f64, std: &[f64], rng: &mut Rng) -> FeatureBatch {
    if channels == 0 || snr <= 0.0 {
        return batch.clone();
    }
    let d = batch.feature_len();
    let mut data = batch.data().to_vec();
    for sample in data.chunks_mut(d) {
        for (c, v) in sample.iter_mut().take(channels).enumerate() {
            *v += rng.normal() * std[c] / snr;
        }
    }
    FeatureBatch::new(batch.shape().to_vec(), data)
        .expect("shape unchanged")
        .with_tag(batch.tag())
}

fn element_std(batch: &FeatureBatch) -> Vec<f64> {
    let d = batch.feature_len();
    let n = batch.samples() as f64;
    (0..d)
        .map(|e| {
            let mean = (0..batch.samples()).map(|s| batch.sample(s)[e]).sum::<f64>() / n;
            ((0..batch.samples()).map(|s| (batch.sample(s)[e] - mean).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect()
}

/// Tapped features of a net on the pool, head and test splits, with
/// independent noise per split drawn from `rng`.
fn noisy_splits(
    spec: &ExperimentSpec,
    net: &ToyNet,
    splits: [&Tensor; 3],
    tag: &str,
    rng: &mut Rng,
) -> Result<[FeatureBatch; 3]> {
    let tap = spec.tap();
    let clean: Vec<FeatureBatch> = splits
        .iter()
        .map(|x| feature(net, x, tap, tag))
        .collect::<Result<_>>()?;
    let std = element_std(&clean[0]);
    let noisy: Vec<FeatureBatch> = clean
        .iter()
        .map(|b| inject_noise(b, spec.noise_channels, spec.noise_snr, &std, rng))
        .collect();
    let pool = normalize(&noisy[0], Mode::Dense)?;
    let stats = pool.norm_stats().expect("normalized").clone();
    Ok([pool, noisy[1].apply_norm(&stats)?, noisy[2].apply_norm(&stats)?])
}

fn reconstruct(g: &DisentanglerNet, x: &FeatureBatch) -> Result<FeatureBatch> {
    Ok(g.forward(x)?.0)
}

pub fn run_refinement(spec: &ExperimentSpec, seed: u64) -> Result<SeedResult> {
    if spec.update_backbone {
        return Err(Error::ProtocolViolation(
            "refinement heads must train on frozen features".into(),
        ));
    }
    let lab = Lab::new(spec, seed);
    let root = Rng::new(seed);
    let layer_dims = spec.net_dims();
    let a = train_net(spec, &layer_dims, &lab.train, &mut root.fork(STREAM_NET_A))?;
    let b = train_net(spec, &layer_dims, &lab.train, &mut root.fork(STREAM_NET_B))?;

    let labeled = lab.train.subset(&(0..spec.head_samples.min(lab.train.len())).collect::<Vec<_>>());
    let splits = [&lab.pool.inputs, &labeled.inputs, &lab.test.inputs];
    let [pool_a, head_a, test_a] = noisy_splits(spec, &a, splits, "A", &mut root.fork(STREAM_NOISE_A))?;
    let [pool_b, _, _] = noisy_splits(spec, &b, splits, "B", &mut root.fork(STREAM_NOISE_B))?;

    // g sees features only; labels are used by the heads alone
    let fitted = fit_and_decompose(&pool_a, &pool_b, &g_config(spec, g_seed(seed, 0)))?;
    let g = &fitted.net;

    let frozen = FrozenBackbone::freeze(vec![&a, &b], vec![g]);
    // both heads start from the same initialization
    let heads = root.fork(STREAM_HEADS);
    let raw = head_accuracy(spec, &head_a, &labeled.labels, &test_a, &lab.test.labels, &mut heads.fork(0))?;
    let refined = head_accuracy(
        spec,
        &reconstruct(g, &head_a)?,
        &labeled.labels,
        &reconstruct(g, &test_a)?,
        &lab.test.labels,
        &mut heads.fork(0),
    )?;
    frozen.verify()?;

    let mut out = SeedResult::new(seed);
    out.metric("accuracy_raw", raw);
    out.metric("accuracy_refined", refined);
    out.metric("gain_points", 100.0 * (refined - raw));
    out.metric("residual_ratio", fitted.report.instability);
    out.metric("checksum_unchanged", 1.0);
    out.notes.push(("frozen_checksum".into(), frozen.checksum().to_string()));
    out.reports.push(("a_to_b".into(), fitted.report));
    Ok(out)
}

/// Spearman rank correlation with average ranks for ties. Zero when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Residual maps reshaped for display: a square map when the width is a
/// perfect square, a one-row strip otherwise.
fn display_shape(batch: &FeatureBatch) -> Result<FeatureBatch> {
    let d = batch.feature_len();
    let side = (d as f64).sqrt().round() as usize;
    let shape = if side * side == d {
        vec![batch.samples(), 1, side, side]
    } else {
        vec![batch.samples(), 1, 1, d]
    };
    FeatureBatch::new(shape, batch.data().to_vec())
}

pub fn fraction_label(f: f64) -> String {
    format!("{f}")
}

pub fn run_prune_discard(spec: &ExperimentSpec, seed: u64) -> Result<SeedResult> {
    let lab = Lab::new(spec, seed);
    let root = Rng::new(seed);
    let tap = spec.tap();
    let original = train_net(spec, &spec.net_dims(), &lab.train, &mut root.fork(STREAM_NET_A))?;
    let target = normalize(&feature(&original, &lab.pool.inputs, tap, "original")?, Mode::Dense)?;

    let mut out = SeedResult::new(seed);
    let mut curve = Vec::with_capacity(spec.fractions.len());
    for (i, &fraction) in spec.fractions.iter().enumerate() {
        let pruned = original.magnitude_pruned(fraction, tap + 1)?;
        let label = fraction_label(fraction);
        let source = normalize(&feature(&pruned, &lab.pool.inputs, tap, "pruned")?, Mode::Dense)?;
        let fitted = fit_and_decompose(&source, &target, &g_config(spec, g_seed(seed, i as u64)))?;
        out.metric(format!("accuracy@{label}"), pruned.accuracy(&lab.test)?);
        out.metric(format!("var_residual@{label}"), fitted.report.var_residual);
        curve.push(fitted.report.var_residual);
        let shown: Vec<usize> = (0..spec.heatmap_samples.min(source.samples())).collect();
        out.heatmaps.push((
            format!("residual_f{label}"),
            display_shape(&fitted.decomposition.residual.select(&shown))?,
        ));
        out.reports.push((format!("fraction_{label}"), fitted.report));
    }
    out.metric("spearman", spearman(&spec.fractions, &curve));
    Ok(out)
}

pub fn run_diagnose(spec: &ExperimentSpec, seed: u64) -> Result<SeedResult> {
    if spec.update_backbone {
        return Err(Error::ProtocolViolation(
            "diagnosis heads must train on frozen features".into(),
        ));
    }
    let lab = Lab::new(spec, seed);
    let root = Rng::new(seed);
    let weak_dims = dims(spec.input_dim, spec.weak_width, spec.weak_depth, spec.classes);
    let strong_dims = dims(spec.input_dim, spec.strong_width, spec.strong_depth, spec.classes);
    let weak = train_net(spec, &weak_dims, &lab.train, &mut root.fork(STREAM_NET_A))?;
    // equal architectures make the strong net the weak net itself
    let strong = if strong_dims == weak_dims {
        weak.clone()
    } else {
        train_net(spec, &strong_dims, &lab.train, &mut root.fork(STREAM_NET_B))?
    };

    let labeled = lab.train.subset(&(0..spec.head_samples.min(lab.train.len())).collect::<Vec<_>>());
    let split = |net: &ToyNet, tag: &str| -> Result<[FeatureBatch; 3]> {
        let last = net.hidden_layers() - 1;
        let pool = normalize(&feature(net, &lab.pool.inputs, last, tag)?, Mode::Dense)?;
        let stats = pool.norm_stats().expect("normalized").clone();
        let head = feature(net, &labeled.inputs, last, tag)?.apply_norm(&stats)?;
        let test = feature(net, &lab.test.inputs, last, tag)?.apply_norm(&stats)?;
        Ok([pool, head, test])
    };
    let [pool_w, head_w, test_w] = split(&weak, "weak")?;
    let [pool_s, head_s, test_s] = split(&strong, "strong")?;

    let weak_to_strong = fit_and_decompose(&pool_w, &pool_s, &g_config(spec, g_seed(seed, 0)))?;
    let strong_to_weak = fit_and_decompose(&pool_s, &pool_w, &g_config(spec, g_seed(seed, 1)))?;
    let (unreliable, blind) = metrics::diagnose(&strong_to_weak.decomposition, &weak_to_strong.decomposition);

    let frozen = FrozenBackbone::freeze(vec![&weak, &strong], vec![&weak_to_strong.net, &strong_to_weak.net]);
    let heads = root.fork(STREAM_HEADS);
    let (train_y, test_y) = (&labeled.labels, &lab.test.labels);

    // (a) blind spots added back: g(x_weak) + (x_strong − g(x_weak))
    let with_blind = |x_w: &FeatureBatch, x_s: &FeatureBatch| -> Result<FeatureBatch> {
        let g = reconstruct(&weak_to_strong.net, x_w)?;
        g.add(&x_s.sub(&g)?)
    };
    let raw_a = head_accuracy(spec, &head_w, train_y, &test_w, test_y, &mut heads.fork(0))?;
    let plus_blind = head_accuracy(
        spec,
        &with_blind(&head_w, &head_s)?,
        train_y,
        &with_blind(&test_w, &test_s)?,
        test_y,
        &mut heads.fork(0),
    )?;
    // (b) unreliable components removed: g(x_strong) in place of x_weak
    let raw_b = head_accuracy(spec, &head_w, train_y, &test_w, test_y, &mut heads.fork(1))?;
    let minus_unreliable = head_accuracy(
        spec,
        &reconstruct(&strong_to_weak.net, &head_s)?,
        train_y,
        &reconstruct(&strong_to_weak.net, &test_s)?,
        test_y,
        &mut heads.fork(1),
    )?;
    frozen.verify()?;

    let mut out = SeedResult::new(seed);
    out.metric("accuracy_weak_net", weak.accuracy(&lab.test)?);
    out.metric("accuracy_strong_net", strong.accuracy(&lab.test)?);
    out.metric("accuracy_raw_weak", raw_a);
    out.metric("accuracy_plus_blind_spots", plus_blind);
    out.metric("accuracy_raw_weak_2", raw_b);
    out.metric("accuracy_minus_unreliable", minus_unreliable);
    out.metric("var_blind_spots", crate::numerics::pooled_variance(&blind)?);
    out.metric("var_unreliable", crate::numerics::pooled_variance(&unreliable)?);
    out.notes.push(("frozen_checksum".into(), frozen.checksum().to_string()));
    out.reports.push(("weak_to_strong".into(), weak_to_strong.report));
    out.reports.push(("strong_to_weak".into(), strong_to_weak.report));
    Ok(out)
}
