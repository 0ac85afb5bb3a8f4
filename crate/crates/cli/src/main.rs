//! `kc`: fit disentanglers on feature packs, decompose, report, run toy
//! experiments and export heatmaps.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use kc_core::fpk::{Dtype, FeaturePack};
use kc_core::metrics::{order_variance_table, ConsistencyReport, ReportMeta};
use kc_core::toylab::{self, ExperimentSpec};
use kc_core::training::{fit, normalize, write_log_csv, FeatureBatch, TrainConfig, DEFAULT_LAMBDA};
use kc_core::{heatmap, DisentanglerNet, Error, Mode, OrderDecomposition};

const EXIT_DATA: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

#[derive(Parser)]
#[command(name = "kc", version, about = "Knowledge consistency between two networks' features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Dense,
    Conv1x1,
}

#[derive(Subcommand)]
enum Command {
    /// Fit g so that g(source) reconstructs target; writes a KCNET1 checkpoint
    /// and a per-epoch CSV log.
    Train {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Number of nonlinear orders K.
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Dense)]
        mode: ModeArg,
        /// Convolution kernel size in conv1x1 mode; only 1 is supported.
        #[arg(long, default_value_t = 1)]
        kernel: usize,
        #[arg(long, default_value_t = 300)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        /// Training log path; defaults to `<out>.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Split g(source) into per-order components plus the residual.
    Decompose {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Variance table of a decompose output directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Run a toy experiment spec.
    Toy {
        #[arg(long)]
        spec: PathBuf,
        /// Results directory; defaults to `results/<spec name>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One grayscale PGM per sample of a feature pack.
    Heatmap {
        #[arg(long)]
        fpk: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "sample")]
        prefix: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            source,
            target,
            k,
            lambda,
            seed,
            out,
            mode,
            kernel,
            epochs,
            lr,
            batch_size,
            log,
        } => (|| {
            let mode = match mode {
                ModeArg::Dense => Mode::Dense,
                ModeArg::Conv1x1 => Mode::conv(kernel)?,
            };
            let cfg = TrainConfig {
                order: k,
                mode,
                lambda,
                epochs,
                batch_size,
                learning_rate: lr,
                seed,
                ..TrainConfig::default()
            };
            let log = log.unwrap_or_else(|| with_suffix(&out, ".csv"));
            train(&source, &target, &cfg, &out, &log)
        })(),
        Command::Decompose {
            net,
            source,
            target,
            out,
        } => decompose(&net, &source, &target, &out),
        Command::Report { dir } => report(&dir),
        Command::Toy { spec, out } => toy(&spec, out),
        Command::Heatmap { fpk, out, prefix } => export_heatmaps(&fpk, &out, &prefix),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Diverged { .. } => ExitCode::from(EXIT_DIVERGED),
                _ => ExitCode::from(EXIT_DATA),
            }
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load(path: &Path) -> kc_core::Result<FeatureBatch> {
    FeaturePack::read_file(path)?.to_batch()
}

fn load_pair(source: &Path, target: &Path, mode: Mode) -> kc_core::Result<(FeatureBatch, FeatureBatch)> {
    let (x, y) = (load(source)?, load(target)?);
    if x.samples() != y.samples() {
        return Err(Error::Shape {
            left: x.shape().to_vec(),
            right: y.shape().to_vec(),
            context: "source and target sample counts",
        });
    }
    Ok((normalize(&x, mode)?, normalize(&y, mode)?))
}

fn train(source: &Path, target: &Path, cfg: &TrainConfig, out: &Path, log: &Path) -> kc_core::Result<()> {
    let (x, y) = load_pair(source, target, cfg.mode)?;
    let (net, history) = fit(&x, &y, cfg)?;
    let mut w = BufWriter::new(File::create(out)?);
    net.write_to(&mut w)?;
    w.flush()?;
    write_log_csv(BufWriter::new(File::create(log)?), net.order(), &history)?;
    let last = history.last().expect("at least one epoch");
    println!(
        "trained K={} ({} blocks) for {} epochs: loss {:.6e}, residual ratio {:.6e}",
        net.order(),
        net.order() + 1,
        last.epoch,
        last.loss,
        last.residual_ratio
    );
    println!("wrote {} and {}", out.display(), log.display());
    Ok(())
}

fn component_file(k: usize) -> String {
    format!("x_order_{k}.fpk")
}

fn decompose(net_path: &Path, source: &Path, target: &Path, out: &Path) -> kc_core::Result<()> {
    let net = DisentanglerNet::read_from(BufReader::new(File::open(net_path)?))?;
    let (x, y) = load_pair(source, target, net.mode())?;
    let dec = net.decompose(&x, &y)?;
    fs::create_dir_all(out)?;
    for (k, c) in dec.components.iter().enumerate() {
        FeaturePack::from_batch(c, Dtype::F64)
            .with_meta("component", &format!("order_{k}"))
            .write_file(out.join(component_file(k)))?;
    }
    FeaturePack::from_batch(&dec.residual, Dtype::F64)
        .with_meta("component", "residual")
        .write_file(out.join("residual.fpk"))?;
    let report = order_variance_table(&dec).with_meta(ReportMeta {
        source: x.tag().to_string(),
        target: y.tag().to_string(),
        order: net.order(),
        lambda: None,
        seed: None,
    });
    write_json(&out.join("report.json"), &report)?;
    let err = dec.additivity_error();
    println!(
        "sum check: max|sum_k x^(k) - g(x)| = {err:.3e} ({})",
        if err <= 1e-9 { "ok" } else { "FAILED" }
    );
    println!("wrote {} components and the residual to {}", dec.components.len(), out.display());
    Ok(())
}

fn write_json(path: &Path, report: &ConsistencyReport) -> kc_core::Result<()> {
    let mut text = serde_json::to_string_pretty(&report.to_json())?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn report(dir: &Path) -> kc_core::Result<()> {
    let mut components = Vec::new();
    while dir.join(component_file(components.len())).exists() {
        components.push(load(&dir.join(component_file(components.len())))?);
    }
    if components.is_empty() {
        return Err(Error::Format(format!("no {} in {}", component_file(0), dir.display())));
    }
    let residual = load(&dir.join("residual.fpk"))?;
    let mut output = components[0].clone();
    for c in &components[1..] {
        output = output.add(c)?;
    }
    let target = output.add(&residual)?;
    let dec = OrderDecomposition {
        components,
        residual,
        target,
        output,
    };
    let json_path = dir.join("report.json");
    let meta = match fs::read_to_string(&json_path) {
        Ok(text) => ConsistencyReport::from_json(&serde_json::from_str(&text)?)?.meta,
        Err(_) => ReportMeta::default(),
    };
    let report = order_variance_table(&dec).with_meta(meta);
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    fs::write(dir.join("report.csv"), &csv)?;
    write_json(&json_path, &report)?;
    print!("{}", String::from_utf8_lossy(&csv));
    println!("instability {}", report.instability);
    Ok(())
}

fn toy(spec_path: &Path, out: Option<PathBuf>) -> kc_core::Result<()> {
    let mut spec = ExperimentSpec::parse(&fs::read_to_string(spec_path)?)?;
    if let Ok(v) = std::env::var("KC_THREADS") {
        spec.threads = v
            .parse()
            .map_err(|_| Error::Spec(format!("KC_THREADS must be a positive integer, got `{v}`")))?;
    }
    let out = out.unwrap_or_else(|| Path::new("results").join(&spec.name));
    let outcome = toylab::run(&spec)?;
    outcome.write_dir(&out)?;
    println!("{} ({}), seeds {:?}", spec.name, spec.protocol, spec.seeds);
    for name in outcome.metric_names() {
        println!("  median {name} = {}", outcome.median(&name));
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn export_heatmaps(fpk: &Path, out: &Path, prefix: &str) -> kc_core::Result<()> {
    let batch = load(fpk)?;
    let paths = heatmap::write_all(&batch, out, prefix)?;
    println!("wrote {} heatmaps to {}", paths.len(), out.display());
    Ok(())
}
