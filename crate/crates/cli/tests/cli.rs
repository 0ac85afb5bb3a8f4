use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kc_core::fpk::{Dtype, FeaturePack};
use kc_core::{FeatureBatch, Rng};

fn kc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kc"))
        .args(args)
        .current_dir(cwd)
        .env_remove("KC_THREADS")
        .output()
        .expect("spawn kc")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_pack(path: &Path, shape: Vec<usize>, data: Vec<f64>) {
    let batch = FeatureBatch::new(shape, data).unwrap();
    FeaturePack::from_batch(&batch, Dtype::F32)
        .with_meta("net", "toy")
        .with_meta("layer", path.file_stem().unwrap().to_str().unwrap())
        .write_file(path)
        .unwrap();
}

/// Source features plus a target that is a fixed nonlinear map of them.
fn pair(dir: &Path, n: usize) -> (PathBuf, PathBuf) {
    let mut rng = Rng::new(5);
    let x = rng.normal_vec(n * 6);
    let w = rng.normal_vec(4 * 6);
    let mut y = Vec::with_capacity(n * 4);
    for s in 0..n {
        for r in 0..4 {
            let z: f64 = (0..6).map(|c| w[r * 6 + c] * x[s * 6 + c]).sum();
            y.push(z + 0.5 * z.max(0.0));
        }
    }
    let (src, tgt) = (dir.join("src.fpk"), dir.join("tgt.fpk"));
    write_pack(&src, vec![n, 6], x);
    write_pack(&tgt, vec![n, 4], y);
    (src, tgt)
}

fn last_ratio(log: &Path) -> f64 {
    let text = std::fs::read_to_string(log).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "residual_ratio").unwrap();
    text.lines().last().unwrap().split(',').nth(col).unwrap().parse().unwrap()
}

#[test]
fn train_decompose_report_round() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (src, tgt) = pair(d, 200);
    let net = d.join("g.kcnet");
    let out = kc(
        &["train", "--source", src.to_str().unwrap(), "--target", tgt.to_str().unwrap(), "--k", "2", "--epochs", "40", "--out", net.to_str().unwrap()],
        d,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("residual ratio"));
    let log = std::fs::read_to_string(d.join("g.kcnet.csv")).unwrap();
    assert!(log.starts_with("epoch,loss,"));

    let out = kc(
        &["decompose", "--net", "g.kcnet", "--source", "src.fpk", "--target", "tgt.fpk", "--out", "dec"],
        d,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("(ok)"));
    for name in ["x_order_0.fpk", "x_order_1.fpk", "x_order_2.fpk", "residual.fpk", "report.json"] {
        assert!(d.join("dec").join(name).exists(), "missing {name}");
    }
    assert!(!d.join("dec/x_order_3.fpk").exists());

    let out = kc(&["report", "--dir", "dec"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(d.join("dec/report.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rows[..4], ["x_order_0", "x_order_1", "x_order_2", "residual"]);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("dec/report.json")).unwrap()).unwrap();
    assert_eq!(json["meta"]["source"], "toy/src");
    assert_eq!(json["meta"]["order"], 2);
}

#[test]
fn identical_features_fit_linearly_at_default_settings() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (src, _) = pair(d, 1000);
    let s = src.to_str().unwrap();
    let out = kc(&["train", "--source", s, "--target", s, "--k", "0", "--out", "self.kcnet"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ratio = last_ratio(&d.join("self.kcnet.csv"));
    assert!(ratio <= 1e-3, "residual ratio {ratio}");
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (src, tgt) = pair(d, 100);
    let run = |name: &str, seed: &str| {
        let out = kc(
            &["train", "--source", src.to_str().unwrap(), "--target", tgt.to_str().unwrap(), "--k", "1", "--epochs", "15", "--seed", seed, "--out", name],
            d,
        );
        assert!(out.status.success());
        (std::fs::read(d.join(name)).unwrap(), std::fs::read(d.join(format!("{name}.csv"))).unwrap())
    };
    let a = run("a.kcnet", "3");
    assert_eq!(a, run("b.kcnet", "3"));
    assert_ne!(a.0, run("c.kcnet", "4").0);
}

#[test]
fn empty_packs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_pack(&d.join("empty.fpk"), vec![0, 3], vec![]);
    let out = kc(&["train", "--source", "empty.fpk", "--target", "empty.fpk", "--out", "g.kcnet"], d);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no samples"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (src, tgt) = pair(d, 50);
    let (s, t) = (src.to_str().unwrap(), tgt.to_str().unwrap());

    assert_eq!(kc(&["train", "--source", s], d).status.code(), Some(2));
    assert_eq!(kc(&["frobnicate"], d).status.code(), Some(2));
    assert_eq!(kc(&["train", "--source", "missing.fpk", "--target", t, "--out", "g"], d).status.code(), Some(3));
    let out = kc(&["train", "--source", s, "--target", t, "--mode", "conv1x1", "--kernel", "3", "--out", "g"], d);
    assert_eq!(out.status.code(), Some(3));
    let out = kc(&["train", "--source", s, "--target", t, "--lr", "1e300", "--out", "g"], d);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));

    std::fs::write(d.join("bad.spec"), "protocol = perm_twin\nwidht = 3\n").unwrap();
    assert_eq!(kc(&["toy", "--spec", "bad.spec"], d).status.code(), Some(3));
    std::fs::write(d.join("frozen.spec"), "protocol = refine\nseeds = 1\nupdate_backbone = true\n").unwrap();
    assert_eq!(kc(&["toy", "--spec", "frozen.spec"], d).status.code(), Some(3));
}

#[test]
fn toy_writes_results_under_the_spec_name() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("twin.spec"), "# permuted twin\nname = twin\nprotocol = perm_twin\n").unwrap();
    let out = kc(&["toy", "--spec", "twin.spec"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let share: f64 = stdout(&out)
        .lines()
        .find_map(|l| l.trim().strip_prefix("median order0_share = "))
        .expect("order0_share line")
        .parse()
        .unwrap();
    assert!(share >= 0.9, "order-0 share {share}");
    for name in ["report.csv", "report.json", "log.txt"] {
        assert!(d.join("results/twin").join(name).exists(), "missing {name}");
    }
}

#[test]
fn heatmaps_from_a_pack() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut rng = Rng::new(1);
    write_pack(&d.join("maps.fpk"), vec![3, 2, 4, 5], rng.normal_vec(120));
    let out = kc(&["heatmap", "--fpk", "maps.fpk", "--out", "hm", "--prefix", "conv"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for i in 0..3 {
        let pgm = std::fs::read(d.join(format!("hm/conv_{i:04}.pgm"))).unwrap();
        assert!(pgm.starts_with(b"P5\n5 4\n255\n"));
    }
}
