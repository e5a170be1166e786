use cat_web::{parse_numbers, quantile_explorer_json, robust_radius_json, stl_robustness_json};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn numbers_accept_mixed_separators() {
    assert_eq!(parse_numbers("1, 2\n3 4.5").unwrap(), vec![1.0, 2.0, 3.0, 4.5]);
    assert!(parse_numbers("1, x").is_err());
}

#[test]
fn quantile_explorer_reports_rank_and_histogram() {
    let scores = (1..=19).map(|i| i.to_string()).collect::<Vec<_>>().join(",");
    let v = parse(quantile_explorer_json(&scores, 0.1, 200, 100, 1).unwrap());
    assert_eq!(v["rank"], 18);
    assert_eq!(v["quantile"], 18.0);
    assert_eq!(v["histogram"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum::<u64>(), 200);
    let mean = v["mean_coverage"].as_f64().unwrap();
    assert!((0.85..0.95).contains(&mean), "{mean}");
    let v = parse(quantile_explorer_json("1,2,3", 0.05, 0, 0, 1).unwrap());
    assert_eq!(v["quantile"], "inf");
}

#[test]
fn robust_radius_matches_plain_at_zero_shift() {
    let scores = (0..50).map(|i| (i as f64 * 0.37).sin().to_string()).collect::<Vec<_>>().join(" ");
    let v = parse(robust_radius_json(&scores, 0.1, "tv", 0.0).unwrap());
    assert_eq!(v["plain"], v["robust"]);
    let w = parse(robust_radius_json(&scores, 0.1, "kl", 0.05).unwrap());
    assert!(w["robust"].as_f64().unwrap() >= w["plain"].as_f64().unwrap());
    assert!(robust_radius_json(&scores, 0.1, "hellinger", 0.1).is_err());
}

#[test]
fn stl_robustness_on_a_small_trace() {
    let v = parse(stl_robustness_json("G[0,2](x >= 1)", "x", "3\n2\n1.5\n").unwrap());
    assert_eq!(v["robustness"], 0.5);
    assert_eq!(v["satisfied"], true);
    let err = stl_robustness_json("G[0,2](x >= 1)", "x, y", "3 1\n2\n").unwrap_err();
    assert!(err.contains("line 2"));
}
