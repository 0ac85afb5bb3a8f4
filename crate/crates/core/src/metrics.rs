//! Consistency measures: instability ratios, per-order variance tables and
//! the blind-spot / unreliable-feature split between a weak and a strong net.

use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::disentangler::OrderDecomposition;
use crate::error::{Error, Result};
use crate::numerics::pooled_variance;
use crate::training::FeatureBatch;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub source: String,
    pub target: String,
    pub order: usize,
    pub lambda: Option<f64>,
    pub seed: Option<u64>,
}

/// Pooled variances of every order component, the residual and the target.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyReport {
    pub var_per_order: Vec<f64>,
    pub var_residual: f64,
    pub var_target: f64,
    /// `Var(xΔ) / Var(x*)`; zero when the target itself has no variance.
    pub instability: f64,
    pub meta: ReportMeta,
}

/// `Var(residual) / Var(raw)` with both variances pooled over samples and
/// elements.
pub fn instability_ratio(residual: &FeatureBatch, raw: &FeatureBatch) -> Result<f64> {
    let raw_var = pooled_variance(raw)?;
    if raw_var == 0.0 {
        return Err(Error::Degenerate("raw feature has zero variance".into()));
    }
    Ok(pooled_variance(residual)? / raw_var)
}

/// Mean of the two directional instabilities.
pub fn symmetric_instability(r_a: f64, r_b: f64) -> Result<f64> {
    if !(r_a >= 0.0 && r_b >= 0.0) {
        return Err(Error::Precondition("instability ratios must be non-negative".into()));
    }
    Ok((r_a + r_b) / 2.0)
}

pub fn order_variance_table(dec: &OrderDecomposition) -> ConsistencyReport {
    let var = |b: &FeatureBatch| pooled_variance(b).unwrap_or(0.0);
    let var_per_order: Vec<f64> = dec.components.iter().map(var).collect();
    let var_residual = var(&dec.residual);
    let var_target = var(&dec.target);
    let instability = if var_target > 0.0 { var_residual / var_target } else { 0.0 };
    ConsistencyReport {
        meta: ReportMeta {
            source: String::new(),
            target: dec.target.tag().to_string(),
            order: dec.order(),
            lambda: None,
            seed: None,
        },
        var_per_order,
        var_residual,
        var_target,
        instability,
    }
}

/// Residuals of the two reconstruction directions between a weak and a
/// strong net: `strong_to_weak` rebuilds the weak feature from the strong
/// one, `weak_to_strong` the other way round. Returns
/// `(unreliable, blind_spots)`.
pub fn diagnose(strong_to_weak: &OrderDecomposition, weak_to_strong: &OrderDecomposition) -> (FeatureBatch, FeatureBatch) {
    (
        strong_to_weak.residual.clone().with_tag("unreliable"),
        weak_to_strong.residual.clone().with_tag("blind_spots"),
    )
}

/// Share of the pooled sum of squares contributed by each feature element
/// (around the single grand mean). Shares sum to one.
pub fn element_variance_shares(batch: &FeatureBatch) -> Result<Vec<f64>> {
    if batch.samples() == 0 {
        return Err(Error::NoSamples);
    }
    let data = batch.data();
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    let d = batch.feature_len();
    let mut shares = vec![0.0; d];
    for (idx, v) in data.iter().enumerate() {
        shares[idx % d] += (v - mean) * (v - mean);
    }
    let total: f64 = shares.iter().sum();
    if total == 0.0 {
        return Ok(vec![0.0; d]);
    }
    shares.iter_mut().for_each(|s| *s /= total);
    Ok(shares)
}

impl ConsistencyReport {
    pub fn with_meta(mut self, meta: ReportMeta) -> Self {
        self.meta = meta;
        self
    }

    /// `Var(x^(0)) / Σ_k Var(x^(k))`.
    pub fn order0_share(&self) -> f64 {
        let total: f64 = self.var_per_order.iter().sum();
        if total > 0.0 {
            self.var_per_order[0] / total
        } else {
            0.0
        }
    }

    /// `(label, variance)` rows in the order `x^(0), …, x^(K), xΔ`.
    pub fn rows(&self) -> Vec<(String, f64)> {
        let mut rows: Vec<(String, f64)> = self
            .var_per_order
            .iter()
            .enumerate()
            .map(|(k, v)| (format!("x_order_{k}"), *v))
            .collect();
        rows.push(("residual".to_string(), self.var_residual));
        rows
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "component,variance,fraction_of_target")?;
        for (label, v) in self.rows() {
            let frac = if self.var_target > 0.0 { v / self.var_target } else { 0.0 };
            writeln!(w, "{label},{v},{frac}")?;
        }
        Ok(())
    }

    /// Flat JSON object with `var_order_k`, `var_residual`, `var_target`,
    /// `instability`, `order0_share` and `meta`.
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        for (k, v) in self.var_per_order.iter().enumerate() {
            m.insert(format!("var_order_{k}"), Value::from(*v));
        }
        m.insert("var_residual".into(), Value::from(self.var_residual));
        m.insert("var_target".into(), Value::from(self.var_target));
        m.insert("instability".into(), Value::from(self.instability));
        m.insert("order0_share".into(), Value::from(self.order0_share()));
        m.insert("meta".into(), serde_json::to_value(&self.meta).expect("meta serializes"));
        Value::Object(m)
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Format("report must be a JSON object".into()))?;
        let num = |key: &str| -> Result<f64> {
            obj.get(key)
                .and_then(Value::as_f64)
                .ok_or_else(|| Error::Format(format!("missing numeric key {key}")))
        };
        let mut var_per_order = Vec::new();
        while let Some(v) = obj.get(&format!("var_order_{}", var_per_order.len())) {
            var_per_order.push(
                v.as_f64()
                    .ok_or_else(|| Error::Format("non-numeric order variance".into()))?,
            );
        }
        let meta = match obj.get("meta") {
            Some(m) => serde_json::from_value(m.clone())?,
            None => ReportMeta::default(),
        };
        Ok(Self {
            var_per_order,
            var_residual: num("var_residual")?,
            var_target: num("var_target")?,
            instability: num("instability")?,
            meta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disentangler::{DisentanglerNet, Mode};
    use crate::numerics::Rng;

    fn b(shape: Vec<usize>, data: Vec<f64>) -> FeatureBatch {
        FeatureBatch::new(shape, data).unwrap()
    }

    #[test]
    fn instability_cases() {
        let raw = b(vec![4, 1], vec![-2.0, 2.0, -2.0, 2.0]);
        let zeros = b(vec![4, 1], vec![0.0; 4]);
        assert_eq!(instability_ratio(&zeros, &raw).unwrap(), 0.0);
        assert_eq!(instability_ratio(&raw, &raw).unwrap(), 1.0);
        // pooled variances 0.5 and 2.0 (raw: values ±√2)
        let s = 2.0_f64.sqrt();
        let raw = b(vec![2, 1], vec![-s, s]);
        let res = b(vec![2, 1], vec![-0.5_f64.sqrt(), 0.5_f64.sqrt()]);
        assert!((instability_ratio(&res, &raw).unwrap() - 0.25).abs() < 1e-15);
        assert!(matches!(instability_ratio(&raw, &zeros), Err(Error::Degenerate(_))));
    }

    #[test]
    fn symmetric_cases() {
        assert_eq!(symmetric_instability(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(symmetric_instability(0.3, 0.3).unwrap(), 0.3);
        assert!((symmetric_instability(0.1, 0.3).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(symmetric_instability(0.1, 0.7).unwrap(), symmetric_instability(0.7, 0.1).unwrap());
        assert!(symmetric_instability(-0.1, 0.2).is_err());
    }

    fn decomposition(seed: u64) -> OrderDecomposition {
        let mut rng = Rng::new(seed);
        let net = DisentanglerNet::init(3, 2, 2, Mode::Dense, &mut rng).unwrap();
        let x = b(vec![10, 3], rng.normal_vec(30));
        let y = b(vec![10, 2], rng.normal_vec(20));
        net.decompose(&x, &y).unwrap()
    }

    #[test]
    fn exact_reconstruction_has_zero_residual_variance() {
        let mut dec = decomposition(1);
        dec.target = dec.output.clone();
        dec.residual = dec.target.sub(&dec.output).unwrap();
        let report = order_variance_table(&dec);
        assert_eq!(report.var_residual, 0.0);
        assert_eq!(report.instability, 0.0);
    }

    #[test]
    fn table_rows_follow_order_then_residual() {
        let report = order_variance_table(&decomposition(2));
        let labels: Vec<String> = report.rows().into_iter().map(|(l, _)| l).collect();
        assert_eq!(labels, ["x_order_0", "x_order_1", "x_order_2", "residual"]);
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("component,variance,fraction_of_target\nx_order_0,"));
    }

    #[test]
    fn variances_scale_quadratically() {
        let dec = decomposition(3);
        let c = 3.0;
        let mut scaled = dec.clone();
        scaled.components = dec.components.iter().map(|x| x.map(|v| v * c)).collect();
        scaled.residual = dec.residual.map(|v| v * c);
        let a = order_variance_table(&dec);
        let s = order_variance_table(&scaled);
        for (x, y) in a.var_per_order.iter().zip(&s.var_per_order) {
            assert!((y - c * c * x).abs() <= 1e-12 * y.abs().max(1.0));
        }
        assert!((s.var_residual - c * c * a.var_residual).abs() <= 1e-12);
    }

    #[test]
    fn components_and_residual_rebuild_target() {
        let dec = decomposition(4);
        let rebuilt = dec.component_sum().add(&dec.residual).unwrap();
        for (r, t) in rebuilt.data().iter().zip(dec.target.data()) {
            assert!((r - t).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip_keeps_stable_keys() {
        let report = order_variance_table(&decomposition(5)).with_meta(ReportMeta {
            source: "a".into(),
            target: "b".into(),
            order: 2,
            lambda: Some(0.1),
            seed: Some(7),
        });
        let json = report.to_json();
        for key in ["var_order_0", "var_order_1", "var_order_2", "var_residual", "instability"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(ConsistencyReport::from_json(&json).unwrap(), report);
    }

    #[test]
    fn element_shares_sum_to_one() {
        let batch = b(vec![3, 2], vec![0.0, 5.0, 0.0, -5.0, 0.0, 0.0]);
        let shares = element_variance_shares(&batch).unwrap();
        assert!((shares.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(shares[1] > shares[0]);
    }

    #[test]
    fn diagnose_labels_residuals() {
        let a = decomposition(6);
        let b = decomposition(7);
        let (unreliable, blind) = diagnose(&a, &b);
        assert_eq!(unreliable.data(), a.residual.data());
        assert_eq!(blind.data(), b.residual.data());
        assert_eq!(blind.tag(), "blind_spots");
    }
}
