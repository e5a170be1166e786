use cat_core::dataset::{Split, TrajectoryDataset};
use cat_core::rng::Streams;
use cat_core::scenarios::config::{parse_str, ExperimentFile};
use cat_core::scenarios::experiments::{check_experiment, run_experiment, Overrides, EXPERIMENTS};
use cat_core::scenarios::{AircraftParams, CartPoleParams, CrossingParams, NavigationParams, PedestrianParams, Scenario, UnicycleParams};
use cat_core::Error;

fn all() -> Vec<Scenario> {
    vec![
        Scenario::Navigation(NavigationParams::default()),
        Scenario::Unicycle(UnicycleParams::default()),
        Scenario::Pedestrian(PedestrianParams::default()),
        Scenario::CartPole(CartPoleParams::default()),
        Scenario::Aircraft(AircraftParams::default()),
        Scenario::Crossing(CrossingParams::default()),
    ]
}

fn csv_bytes(sc: &Scenario, seed: u64) -> Vec<u8> {
    let ds = sc.sample_dataset(Split::Calibrate, 7, &Streams::new(seed)).unwrap();
    let mut buf = Vec::new();
    ds.write_csv(&mut buf).unwrap();
    buf
}

#[test]
fn datasets_are_byte_identical_under_a_seed() {
    for sc in all() {
        let a = csv_bytes(&sc, 42);
        assert_eq!(a, csv_bytes(&sc, 42));
        assert_ne!(a, csv_bytes(&sc, 43));
        assert!(a.starts_with(b"traj_id,t,c0,"));
    }
}

#[test]
fn dataset_csv_round_trips() {
    for sc in all() {
        let ds = sc.sample_dataset(Split::Test, 5, &Streams::new(1)).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = TrajectoryDataset::read_csv(buf.as_slice(), Split::Test).unwrap();
        assert_eq!(back.count(), ds.count());
        assert_eq!(back.dim(), ds.dim());
        for i in 0..ds.count() {
            assert_eq!(back.trace(i).data(), ds.trace(i).data());
        }
    }
}

#[test]
fn splits_draw_independent_samples() {
    let sc = Scenario::Aircraft(AircraftParams::default());
    let st = Streams::new(9);
    let cal = sc.sample_dataset(Split::Calibrate, 3, &st).unwrap();
    let test = sc.sample_dataset(Split::Test, 3, &st).unwrap();
    assert_ne!(cal.trace(0).data(), test.trace(0).data());
}

fn config_path(e: Error) -> String {
    match e {
        Error::Config { path, .. } => path,
        other => panic!("expected a config error, got {other}"),
    }
}

#[test]
fn scenario_config_errors_name_the_field() {
    let e = parse_str::<Scenario>(r#"{"kind": "cart_pole", "horizon": "long"}"#).unwrap_err();
    assert_eq!(config_path(e), "horizon");
    let e = parse_str::<Scenario>(r#"{"kind": "pedestrian", "walker": {"speed_mean": 1.0, "bogus": 2}}"#).unwrap_err();
    assert!(config_path(e).starts_with("walker."));
}

#[test]
fn experiment_config_errors_name_the_field() {
    let o = Overrides::default();
    let e = run_experiment("sensor-calibration", serde_json::json!({ "delta": 1.5 }), 0, &o).unwrap_err();
    assert_eq!(config_path(e), "delta");
    let e = run_experiment("monitor-aircraft", serde_json::json!({ "setup": { "t": "late" } }), 0, &o).unwrap_err();
    assert_eq!(config_path(e), "setup.t");
    assert!(run_experiment("no-such-experiment", serde_json::json!({}), 0, &o).is_err());
}

#[test]
fn experiment_reports_are_reproducible() {
    let o = Overrides { delta: None, k: Some(100) };
    let params = serde_json::json!({ "k": [100], "n": 50, "j": 50 });
    let a = run_experiment("sensor-calibration", params.clone(), 5, &o).unwrap();
    let b = run_experiment("sensor-calibration", params, 5, &o).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(EXPERIMENTS.len(), 8);
}

#[test]
fn artifacts_are_written() {
    let dir = std::env::temp_dir().join(format!("cat-artifacts-{}", std::process::id()));
    let rep = run_experiment("sensor-calibration", serde_json::json!({ "k": [100], "n": 20, "j": 20 }), 0, &Overrides::default()).unwrap();
    let paths = rep.write_artifacts(&dir).unwrap();
    for name in ["report.json", "runtime.json", "runs.csv"] {
        assert!(paths.iter().any(|p| p.ends_with(name)), "{name} missing");
    }
    let runs = std::fs::read_to_string(dir.join("runs.csv")).unwrap();
    assert!(runs.starts_with("label,target,ec,mean_cec"));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn bundled_experiment_configs_are_valid() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/experiments");
    for name in EXPERIMENTS {
        let text = std::fs::read_to_string(dir.join(format!("{name}.json"))).unwrap();
        let file: ExperimentFile = parse_str(&text).unwrap();
        assert_eq!(file.experiment, *name);
        check_experiment(name, file.params, &Overrides::default()).unwrap();
    }
}
