//! Experiment spec files: flat `key = value` lines, `#` starts a comment.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    PermTwin,
    StabilityInit,
    StabilityData,
    Refine,
    PruneDiscard,
    Diagnose,
}

impl Protocol {
    pub const ALL: [Protocol; 6] = [
        Protocol::PermTwin,
        Protocol::StabilityInit,
        Protocol::StabilityData,
        Protocol::Refine,
        Protocol::PruneDiscard,
        Protocol::Diagnose,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::PermTwin => "perm_twin",
            Protocol::StabilityInit => "stability_init",
            Protocol::StabilityData => "stability_data",
            Protocol::Refine => "refine",
            Protocol::PruneDiscard => "prune_discard",
            Protocol::Diagnose => "diagnose",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::UnknownProtocol(s.to_string()))
    }
}

/// Everything a toy experiment needs. Defaults depend on the protocol.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub protocol: Protocol,
    pub seeds: Vec<u64>,

    // synthetic task
    pub input_dim: usize,
    pub classes: usize,
    pub modes_per_class: usize,
    pub spread: f64,
    pub train_samples: usize,
    /// Unlabeled samples the disentangler is fitted on.
    pub pool_samples: usize,
    pub test_samples: usize,

    // toy networks
    pub width: usize,
    pub depth: usize,
    /// Hidden layer whose feature is compared (0-based); `None` = last.
    pub tap_layer: Option<usize>,
    pub net_epochs: usize,
    pub net_lr: f64,

    // disentangler
    pub k: usize,
    pub lambda: f64,
    pub g_epochs: usize,
    pub g_lr: f64,
    pub g_batch: usize,

    // prune_discard
    pub fractions: Vec<f64>,
    pub heatmap_samples: usize,

    // refine
    /// Channels of each net's tapped feature that receive independent noise.
    pub noise_channels: usize,
    /// Signal-to-noise ratio (standard deviations) on the noisy channels; 0 disables noise.
    pub noise_snr: f64,
    pub head_samples: usize,
    pub head_epochs: usize,
    pub head_lr: f64,
    /// Requests that backbone and disentangler parameters be updated while
    /// heads train. Always refused by `refine` and `diagnose`.
    pub update_backbone: bool,

    // diagnose
    pub weak_width: usize,
    pub weak_depth: usize,
    pub strong_width: usize,
    pub strong_depth: usize,

    /// Seeds run concurrently on at most this many threads.
    pub threads: usize,
}

impl ExperimentSpec {
    pub fn defaults(protocol: Protocol) -> Self {
        let mut s = Self {
            name: protocol.name().to_string(),
            protocol,
            seeds: vec![1, 2, 3, 4, 5],
            input_dim: 8,
            classes: 4,
            modes_per_class: 2,
            spread: 0.6,
            train_samples: 1000,
            pool_samples: 600,
            test_samples: 1000,
            width: 32,
            depth: 2,
            tap_layer: None,
            net_epochs: 30,
            net_lr: 1e-2,
            k: 3,
            lambda: 0.1,
            g_epochs: 100,
            g_lr: 3e-3,
            g_batch: 32,
            fractions: vec![0.0, 0.25, 0.5, 0.75, 0.9],
            heatmap_samples: 4,
            noise_channels: 0,
            noise_snr: 0.0,
            head_samples: 0,
            head_epochs: 0,
            head_lr: 0.0,
            update_backbone: false,
            weak_width: 16,
            weak_depth: 2,
            strong_width: 64,
            strong_depth: 4,
            threads: 1,
        };
        match protocol {
            Protocol::PermTwin => {
                s.seeds = vec![1];
                s.g_epochs = 150;
                s.g_lr = 1e-2;
            }
            Protocol::StabilityInit | Protocol::StabilityData => {
                s.depth = 3;
            }
            Protocol::Refine => {
                s.width = 16;
                s.noise_channels = 8;
                s.noise_snr = 1.0;
                s.head_samples = 60;
                s.head_epochs = 300;
                s.head_lr = 1e-2;
                s.pool_samples = 2000;
                s.k = 2;
            }
            Protocol::PruneDiscard => {
                s.width = 64;
            }
            Protocol::Diagnose => {
                // a dense 2-D mixture whose boundary needs capacity
                s.input_dim = 2;
                s.classes = 3;
                s.modes_per_class = 10;
                s.spread = 0.08;
                s.train_samples = 2000;
                s.net_epochs = 60;
                s.head_samples = 200;
                s.head_epochs = 300;
                s.head_lr = 1e-2;
                s.k = 2;
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Spec(format!("line {}: expected `key = value`", lineno + 1)))?;
            pairs.push((lineno + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let protocol: Protocol = pairs
            .iter()
            .find(|(_, k, _)| k == "protocol")
            .ok_or_else(|| Error::Spec("missing `protocol` key".into()))?
            .2
            .parse()?;
        let mut spec = Self::defaults(protocol);
        for (line, key, value) in &pairs {
            spec.set(key, value)
                .map_err(|e| Error::Spec(format!("line {line}: {e}")))?;
        }
        spec.validate()?;
        Ok(spec)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("invalid value `{v}` for `{key}`"))
        }
        fn list<T: FromStr>(key: &str, v: &str) -> std::result::Result<Vec<T>, String> {
            v.split(',').map(|p| num(key, p.trim())).collect()
        }
        match key {
            "protocol" => {}
            "name" => self.name = value.to_string(),
            "seeds" => self.seeds = list(key, value)?,
            "input_dim" => self.input_dim = num(key, value)?,
            "classes" => self.classes = num(key, value)?,
            "modes_per_class" => self.modes_per_class = num(key, value)?,
            "spread" => self.spread = num(key, value)?,
            "train_samples" => self.train_samples = num(key, value)?,
            "pool_samples" => self.pool_samples = num(key, value)?,
            "test_samples" => self.test_samples = num(key, value)?,
            "width" => self.width = num(key, value)?,
            "depth" => self.depth = num(key, value)?,
            "tap_layer" => {
                self.tap_layer = if value == "last" { None } else { Some(num(key, value)?) }
            }
            "net_epochs" => self.net_epochs = num(key, value)?,
            "net_lr" => self.net_lr = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "g_epochs" => self.g_epochs = num(key, value)?,
            "g_lr" => self.g_lr = num(key, value)?,
            "g_batch" => self.g_batch = num(key, value)?,
            "fractions" => self.fractions = list(key, value)?,
            "heatmap_samples" => self.heatmap_samples = num(key, value)?,
            "noise_channels" => self.noise_channels = num(key, value)?,
            "noise_snr" => self.noise_snr = num(key, value)?,
            "head_samples" => self.head_samples = num(key, value)?,
            "head_epochs" => self.head_epochs = num(key, value)?,
            "head_lr" => self.head_lr = num(key, value)?,
            "update_backbone" => self.update_backbone = num(key, value)?,
            "weak_width" => self.weak_width = num(key, value)?,
            "weak_depth" => self.weak_depth = num(key, value)?,
            "strong_width" => self.strong_width = num(key, value)?,
            "strong_depth" => self.strong_depth = num(key, value)?,
            "threads" => self.threads = num(key, value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Spec(m.to_string()));
        if self.seeds.is_empty() {
            return fail("at least one seed is required");
        }
        if self.input_dim == 0 || self.classes < 2 || self.modes_per_class == 0 {
            return fail("task needs input_dim ≥ 1, classes ≥ 2, modes_per_class ≥ 1");
        }
        if self.width == 0 || self.depth == 0 || self.weak_width == 0 || self.strong_width == 0 {
            return fail("network widths and depths must be positive");
        }
        if self.weak_depth == 0 || self.strong_depth == 0 {
            return fail("network depths must be positive");
        }
        if let Some(t) = self.tap_layer {
            if t >= self.depth {
                return fail("tap_layer must index a hidden layer");
            }
        }
        if self.pool_samples < 2 || self.train_samples < 2 || self.test_samples == 0 {
            return fail("sample counts too small");
        }
        if !(self.lambda >= 0.0) || self.g_batch == 0 {
            return fail("lambda must be ≥ 0 and g_batch ≥ 1");
        }
        if self.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return fail("pruning fractions must lie in [0, 1]");
        }
        if self.protocol == Protocol::Refine && self.noise_channels > self.width {
            return fail("noise_channels exceeds the tapped width");
        }
        if matches!(self.protocol, Protocol::Refine | Protocol::Diagnose) && self.head_samples < 2 {
            return fail("head_samples must be at least 2");
        }
        Ok(())
    }

    pub fn tap(&self) -> usize {
        self.tap_layer.unwrap_or(self.depth - 1)
    }

    /// Layer widths of the standard toy net.
    pub fn net_dims(&self) -> Vec<usize> {
        dims(self.input_dim, self.width, self.depth, self.classes)
    }
}

pub(crate) fn dims(input: usize, width: usize, depth: usize, classes: usize) -> Vec<usize> {
    let mut d = vec![input];
    d.extend(std::iter::repeat_n(width, depth));
    d.push(classes);
    d
}
