use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cat(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cat")).args(args).arg("--out").arg(out).output().unwrap()
}

fn cat_with(cmd: &str, config: &Path, out: &Path) -> Output {
    let cfg = config.to_str().unwrap();
    cat(&[cmd, "--config", cfg, "--seed", "1"], out)
}

fn write_config(dir: &Path, body: serde_json::Value) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, body.to_string()).unwrap();
    p
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

#[test]
fn experiment_list_names_every_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let o = cat(&["experiment", "list"], dir.path());
    assert!(o.status.success());
    let names = String::from_utf8(o.stdout).unwrap();
    assert_eq!(names.lines().count(), 8);
    for n in names.lines() {
        assert!(configs().join("experiments").join(format!("{n}.json")).exists(), "no config for {n}");
    }
}

#[test]
fn calibrate_writes_the_quantile() {
    let dir = tempfile::tempdir().unwrap();
    let o = cat_with("calibrate", &configs().join("calibrate.json"), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&dir.path().join("calibration.json"));
    assert_eq!(v["k"], 20);
}

#[test]
fn delta_and_k_flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), serde_json::json!({ "scores": [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0] }));
    let o = cat(&["calibrate", "--config", cfg.to_str().unwrap(), "--delta", "0.5"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(read_json(&dir.path().join("calibration.json"))["delta"], 0.5);
}

#[test]
fn verify_lec_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = cat_with("verify-lec", &configs().join("verify-lec.json"), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_json(&dir.path().join("verdict.json"))["status"], "certified");

    let set = serde_json::json!({ "shape": "ball", "center": [0.0, 0.0], "radius": 1.0 });
    let far: Vec<[f64; 2]> = (0..40).map(|i| [5.0 + i as f64 * 0.01, 0.0]).collect();
    let cfg = write_config(dir.path(), serde_json::json!({ "outputs": far, "set": set }));
    assert_eq!(cat_with("verify-lec", &cfg, dir.path()).status.code(), Some(2));

    let mixed: Vec<[f64; 2]> = (0..40).map(|i| [if i % 2 == 0 { 0.1 } else { 3.0 }, 0.0]).collect();
    let cfg = write_config(dir.path(), serde_json::json!({ "outputs": mixed, "set": set }));
    assert_eq!(cat_with("verify-lec", &cfg, dir.path()).status.code(), Some(3));
}

#[test]
fn verify_leas_and_smc_on_the_bundled_configs() {
    let dir = tempfile::tempdir().unwrap();
    let o = cat_with("verify-leas", &configs().join("verify-leas.json"), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = cat_with("smc", &configs().join("smc.json"), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let b = read_json(&dir.path().join("smc.json"))["satisfaction_lower_bound"].as_f64().unwrap();
    assert!((0.0..1.0).contains(&b));
}

#[test]
fn verify_leas_reads_a_dataset_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("traj_id,t,c0\n");
    for i in 0..30 {
        for t in 0..3 {
            csv.push_str(&format!("{i},{t},{}\n", 1.0 + 0.01 * (i + t) as f64));
        }
    }
    std::fs::write(dir.path().join("data.csv"), csv).unwrap();
    let cfg = write_config(dir.path(), serde_json::json!({ "dataset": "data.csv", "spec": "G[0,2](c0 >= 0.5)" }));
    let o = cat_with("verify-leas", &cfg, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = write_config(dir.path(), serde_json::json!({ "dataset": "data.csv", "spec": "G[0,2](c0 >= 2)" }));
    assert_eq!(cat_with("verify-leas", &cfg, dir.path()).status.code(), Some(2));
}

#[test]
fn abstract_monitor_and_control_write_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    for (cmd, file) in [("abstract", "radii.csv"), ("monitor", "monitor.csv"), ("control", "control.json")] {
        let o = cat_with(cmd, &configs().join(format!("{cmd}.json")), dir.path());
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(dir.path().join(file).exists(), "{cmd} did not write {file}");
    }
}

#[test]
fn experiment_run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        serde_json::json!({ "experiment": "sensor-calibration", "seed": 3, "params": { "k": [100], "n": 40, "j": 40 } }),
    );
    let o = cat(&["experiment", "run", "sensor-calibration", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rep = dir.path().join("sensor-calibration");
    assert_eq!(read_json(&rep.join("report.json"))["seed"], 3);
    assert!(rep.join("runs.csv").exists());
    assert!(std::fs::read_dir(&rep).unwrap().any(|e| e.unwrap().file_name().to_string_lossy().starts_with("hist_")));
}

#[test]
fn config_errors_report_the_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), serde_json::json!({ "setup": { "scenario": { "init_std": [1.0, "wide"] } } }));
    let o = cat_with("monitor", &cfg, dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("setup.scenario.init_std[1]"), "{err}");

    let cfg = write_config(dir.path(), serde_json::json!({ "experiment": "monitor-robust", "params": { "epsilon": -1.0 } }));
    let o = cat(&["experiment", "run", "monitor-robust", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stderr).unwrap().contains("epsilon"));
}

#[test]
fn unknown_experiment_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = cat(&["experiment", "run", "nope"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}
