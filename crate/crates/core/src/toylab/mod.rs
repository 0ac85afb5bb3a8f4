//! Desk-scale lab: small networks on synthetic data, and the experiment
//! protocols that compare their intermediate features.

pub mod data;
pub mod net;
pub mod protocols;
pub mod spec;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde_json::{json, Map, Value};

use crate::error::Result;
use crate::heatmap;

pub use data::{Dataset, MixtureTask};
pub use net::{Linear, ToyNet, TrainSchedule};
pub use protocols::{run_seed, FrozenBackbone, SeedResult};
pub use spec::{ExperimentSpec, Protocol};

/// All seeds of one spec, in the order the spec lists them.
#[derive(Clone, Debug)]
pub struct ToyOutcome {
    pub spec: ExperimentSpec,
    pub runs: Vec<SeedResult>,
    /// Wall-clock seconds per seed, reported in `log.txt` only.
    pub elapsed: Vec<f64>,
}

/// Runs every seed of `spec`, at most `spec.threads` at a time.
pub fn run(spec: &ExperimentSpec) -> Result<ToyOutcome> {
    spec.validate()?;
    let threads = spec.threads.max(1).min(spec.seeds.len());
    let next = Mutex::new(0usize);
    let slots: Vec<Mutex<Option<Result<(SeedResult, f64)>>>> =
        spec.seeds.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("seed counter");
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(&seed) = spec.seeds.get(i) else { break };
                let start = Instant::now();
                let result = run_seed(spec, seed).map(|r| (r, start.elapsed().as_secs_f64()));
                *slots[i].lock().expect("result slot") = Some(result);
            });
        }
    });
    let mut runs = Vec::with_capacity(slots.len());
    let mut elapsed = Vec::with_capacity(slots.len());
    for slot in slots {
        let (r, t) = slot.into_inner().expect("result slot").expect("every seed ran")?;
        runs.push(r);
        elapsed.push(t);
    }
    Ok(ToyOutcome {
        spec: spec.clone(),
        runs,
        elapsed,
    })
}

/// Median of a slice; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

impl ToyOutcome {
    /// One value per seed.
    pub fn metric(&self, name: &str) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r.get(name)).collect()
    }

    pub fn median(&self, name: &str) -> f64 {
        median(&self.metric(name))
    }

    /// Metric names in first-seen order.
    pub fn metric_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for r in &self.runs {
            for (n, _) in &r.metrics {
                if !names.contains(n) {
                    names.push(n.clone());
                }
            }
        }
        names
    }

    /// `seed,metric,value` rows for every seed, then the medians.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "seed,metric,value")?;
        for r in &self.runs {
            for (name, v) in &r.metrics {
                writeln!(w, "{},{name},{v}", r.seed)?;
            }
        }
        for name in self.metric_names() {
            writeln!(w, "median,{name},{}", self.median(&name))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        let runs: Vec<Value> = self
            .runs
            .iter()
            .map(|r| {
                let metrics: Map<String, Value> = r.metrics.iter().map(|(n, v)| (n.clone(), json!(v))).collect();
                let notes: Map<String, Value> = r.notes.iter().map(|(n, v)| (n.clone(), json!(v))).collect();
                let reports: Map<String, Value> = r.reports.iter().map(|(n, rep)| (n.clone(), rep.to_json())).collect();
                json!({ "seed": r.seed, "metrics": metrics, "notes": notes, "reports": reports })
            })
            .collect();
        let medians: Map<String, Value> = self
            .metric_names()
            .into_iter()
            .map(|n| {
                let m = self.median(&n);
                (n, json!(m))
            })
            .collect();
        json!({
            "name": self.spec.name,
            "protocol": self.spec.protocol.name(),
            "seeds": self.spec.seeds,
            "runs": runs,
            "median": medians,
        })
    }

    /// Writes `report.csv`, `report.json`, `heatmaps/*.pgm` and `log.txt`.
    /// Only `log.txt` carries timestamps.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut csv = Vec::new();
        self.write_csv(&mut csv)?;
        fs::write(dir.join("report.csv"), csv)?;
        let mut json = serde_json::to_string_pretty(&self.to_json())?;
        json.push('\n');
        fs::write(dir.join("report.json"), json)?;
        let maps = dir.join("heatmaps");
        fs::create_dir_all(&maps)?;
        for r in &self.runs {
            for (prefix, batch) in &r.heatmaps {
                heatmap::write_all(batch, &maps, &format!("seed{}_{prefix}", r.seed))?;
            }
        }
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let mut log = format!("[{now}] {} ({}) finished\n", self.spec.name, self.spec.protocol);
        for (r, t) in self.runs.iter().zip(&self.elapsed) {
            log.push_str(&format!("[{now}] seed {} took {t:.2}s\n", r.seed));
        }
        fs::write(dir.join("log.txt"), log)?;
        Ok(())
    }
}
