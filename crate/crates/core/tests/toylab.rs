use kc_core::toylab::protocols::{g_config, layer_instability, Lab};
use kc_core::toylab::{self, median, ExperimentSpec, Protocol, ToyNet, TrainSchedule};
use kc_core::{Error, Rng};

fn spec(protocol: Protocol, overrides: &str) -> ExperimentSpec {
    ExperimentSpec::parse(&format!("protocol = {}\n{overrides}", protocol.name())).unwrap()
}

#[test]
fn twin_is_exactly_order_zero() {
    let run = toylab::run(&spec(Protocol::PermTwin, "seeds = 4")).unwrap();
    let r = &run.runs[0];
    assert!(r.get("output_max_abs_diff").unwrap() <= 1e-12);
    assert!(r.get("analytic_residual_max").unwrap() <= 1e-9);
    assert!(r.get("order0_share").unwrap() >= 0.9);
}

#[test]
fn stability_separates_different_inits_from_self_comparison() {
    let s = spec(Protocol::StabilityInit, "depth = 2\nseeds = 1, 2, 3, 4, 5");
    let mut floors = Vec::new();
    for &seed in &s.seeds {
        let lab = Lab::new(&s, seed);
        let mut rng = Rng::new(seed);
        let mut net = ToyNet::new(&s.net_dims(), &mut rng).unwrap();
        net.train(&lab.train, &TrainSchedule::default(), &mut rng).unwrap();
        let (floor, _, _) = layer_instability(&net, &net, &lab.pool.inputs, 1, &g_config(&s, seed)).unwrap();
        floors.push(floor);
    }
    let floor = median(&floors);
    assert!(floor <= 0.02, "self-comparison instability {floor}");
    let run = toylab::run(&s).unwrap();
    let across = run.median("instability_layer2");
    assert!(across > floor, "{across} <= {floor}");
    assert_eq!(run.runs[0].reports.len(), 4);
}

#[test]
fn stability_data_reports_every_layer_and_the_trend() {
    let run = toylab::run(&spec(Protocol::StabilityData, "seeds = 2")).unwrap();
    let r = &run.runs[0];
    for layer in 1..=3 {
        assert!(r.get(&format!("instability_layer{layer}")).unwrap() >= 0.0);
    }
    assert!(r.notes.iter().any(|(k, _)| k == "deeper_less_stable"));
}

#[test]
fn refinement_without_noise_changes_little() {
    let run = toylab::run(&spec(Protocol::Refine, "noise_snr = 0")).unwrap();
    let gain = run.median("gain_points");
    assert!(gain.abs() <= 2.0, "median gain {gain}");
}

#[test]
fn refinement_refuses_to_update_frozen_parameters() {
    let s = spec(Protocol::Refine, "update_backbone = true\nseeds = 1");
    assert!(matches!(toylab::run(&s), Err(Error::ProtocolViolation(_))));
    let s = spec(Protocol::Diagnose, "update_backbone = true\nseeds = 1");
    assert!(matches!(toylab::run(&s), Err(Error::ProtocolViolation(_))));
}

#[test]
fn pruning_discards_more_as_it_prunes_more() {
    let run = toylab::run(&spec(Protocol::PruneDiscard, "width = 32\nfractions = 0, 0.25, 0.9\nseeds = 1, 2, 3")).unwrap();
    let at = |f: &str| run.median(&format!("var_residual@{f}"));
    assert!(at("0") <= 0.02, "unpruned residual {}", at("0"));
    assert!(at("0.9") > at("0.25"));
    assert_eq!(run.runs[0].heatmaps.len(), 3);
}

#[test]
fn diagnosing_a_net_against_itself() {
    let run = toylab::run(&spec(Protocol::Diagnose, "strong_width = 16\nstrong_depth = 2\nseeds = 1, 2")).unwrap();
    for r in &run.runs {
        let acc: Vec<f64> = ["raw_weak", "plus_blind_spots", "raw_weak_2", "minus_unreliable"]
            .iter()
            .map(|k| r.get(&format!("accuracy_{k}")).unwrap())
            .collect();
        let spread = acc.iter().cloned().fold(f64::MIN, f64::max) - acc.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread <= 0.02, "seed {}: {acc:?}", r.seed);
    }
}

#[test]
fn blind_spots_help_the_weak_net() {
    let run = toylab::run(&ExperimentSpec::defaults(Protocol::Diagnose)).unwrap();
    let raw = run.median("accuracy_raw_weak");
    let plus = run.median("accuracy_plus_blind_spots");
    assert!(plus >= raw, "{plus} < {raw}");
}

#[test]
fn results_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(Protocol::PruneDiscard, "width = 16\nfractions = 0, 0.5\nseeds = 7\nheatmap_samples = 2");
    toylab::run(&s).unwrap().write_dir(dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("seed,metric,value\n7,accuracy@0,"));
    assert!(csv.contains("\nmedian,spearman,"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["protocol"], "prune_discard");
    assert!(json["median"]["var_residual@0.5"].is_number());
    assert!(json["runs"][0]["reports"]["fraction_0.5"]["var_residual"].is_number());
    let maps: Vec<String> = std::fs::read_dir(dir.path().join("heatmaps"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(maps.len(), 4);
    assert!(maps.contains(&"seed7_residual_f0.5_0001.pgm".to_string()));
    let pgm = std::fs::read(dir.path().join("heatmaps/seed7_residual_f0_0000.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n4 4\n255\n"));
    assert!(dir.path().join("log.txt").exists());
}

#[test]
fn seeds_run_in_parallel_with_identical_results() {
    let serial = spec(Protocol::Refine, "seeds = 1, 2, 3");
    let parallel = ExperimentSpec { threads: 3, ..serial.clone() };
    let a = toylab::run(&serial).unwrap().to_json();
    let b = toylab::run(&parallel).unwrap().to_json();
    assert_eq!(a, b);
}
