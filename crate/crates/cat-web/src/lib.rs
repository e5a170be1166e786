//! Browser bindings for the demo page in `www/`.
//!
//! Each exported function takes plain strings and numbers and returns a JSON
//! string. The `*_json` functions hold the logic so they can be tested natively.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use cat_core::cp_core::{
    beta_conditional_params, conformal_quantile, conformal_rank, robust_adjusted_level, robust_quantile, CalibrationScores, Quantile,
    RobustLevel, ShiftSpec,
};
use cat_core::rng::normal;
use cat_core::stl::{boolean_sat, parse_formula, robustness, Ext, Trace};

fn quantile_json(q: Quantile) -> Value {
    match q {
        Quantile::Finite(v) => json!(v),
        Quantile::Infinite => json!("inf"),
    }
}

fn ext_json(e: Ext) -> Value {
    match e {
        Ext::Finite(v) => json!(v),
        Ext::PosInf => json!("inf"),
        Ext::NegInf => json!("-inf"),
    }
}

/// Numbers separated by commas, whitespace or newlines.
pub fn parse_numbers(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("not a number: {t:?}")))
        .collect()
}

/// Conformal quantile of `scores` plus a simulated conditional-coverage histogram.
///
/// The simulation draws `trials` calibration sets of the same size from a
/// standard normal and records the coverage of each over `tests` fresh draws.
pub fn quantile_explorer_json(scores: &str, delta: f64, trials: usize, tests: usize, seed: u64) -> Result<String, String> {
    let s = parse_numbers(scores)?;
    let k = s.len();
    let cal = CalibrationScores::new(s).map_err(|e| e.to_string())?;
    let q = conformal_quantile(&cal, delta).map_err(|e| e.to_string())?;
    let beta = beta_conditional_params(k, delta).ok();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hist = vec![0usize; 20];
    let mut total = 0.0;
    for _ in 0..trials {
        let sim: Vec<f64> = (0..k).map(|_| normal(&mut rng, 0.0, 1.0)).collect();
        let c = conformal_quantile(&CalibrationScores::new(sim).map_err(|e| e.to_string())?, delta).map_err(|e| e.to_string())?;
        let hits = (0..tests).filter(|_| Quantile::Finite(normal(&mut rng, 0.0, 1.0)) <= c).count();
        let cov = hits as f64 / tests.max(1) as f64;
        total += cov;
        hist[((cov * 20.0) as usize).min(19)] += 1;
    }
    Ok(json!({
        "k": k,
        "delta": delta,
        "rank": conformal_rank(k, delta),
        "quantile": quantile_json(q),
        "beta": beta.map(|(a, b)| json!([a, b])),
        "mean_coverage": if trials > 0 { json!(total / trials as f64) } else { Value::Null },
        "histogram": hist,
    })
    .to_string())
}

/// Plain and shift-robust quantiles of `scores` for `divergence` in `{"tv", "kl"}`.
pub fn robust_radius_json(scores: &str, delta: f64, divergence: &str, epsilon: f64) -> Result<String, String> {
    let cal = CalibrationScores::new(parse_numbers(scores)?).map_err(|e| e.to_string())?;
    let shift = match divergence {
        "tv" => ShiftSpec::tv(epsilon),
        "kl" => ShiftSpec::kl(epsilon),
        other => return Err(format!("unknown divergence {other:?}; use tv or kl")),
    };
    let plain = conformal_quantile(&cal, delta).map_err(|e| e.to_string())?;
    let robust = robust_quantile(&cal, delta, &shift).map_err(|e| e.to_string())?;
    let level = match robust_adjusted_level(cal.len(), delta, &shift).map_err(|e| e.to_string())? {
        RobustLevel::Level(d) => json!(d),
        RobustLevel::Degenerate => Value::Null,
    };
    Ok(json!({ "plain": quantile_json(plain), "robust": quantile_json(robust), "delta_tilde": level }).to_string())
}

/// Robustness and Boolean satisfaction of `formula` on a trace given one state per line.
pub fn stl_robustness_json(formula: &str, signals: &str, trace: &str) -> Result<String, String> {
    let names: Vec<&str> = signals.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if names.is_empty() {
        return Err("list at least one signal name".into());
    }
    let f = parse_formula(formula, &names).map_err(|e| e.to_string())?;
    let mut data = Vec::new();
    for (i, line) in trace.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let row = parse_numbers(line)?;
        if row.len() != names.len() {
            return Err(format!("line {}: expected {} values, got {}", i + 1, names.len(), row.len()));
        }
        data.extend(row);
    }
    let tr = Trace::new(names.len(), &data).map_err(|e| e.to_string())?;
    let rho = robustness(&f, &tr, 0).map_err(|e| e.to_string())?;
    let sat = boolean_sat(&f, &tr, 0).map_err(|e| e.to_string())?;
    Ok(json!({ "robustness": ext_json(rho), "satisfied": sat, "horizon": f.horizon(), "length": tr.len() }).to_string())
}

#[wasm_bindgen]
pub fn quantile_explorer(scores: &str, delta: f64, trials: usize, tests: usize, seed: u32) -> Result<String, JsError> {
    quantile_explorer_json(scores, delta, trials, tests, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn robust_radius(scores: &str, delta: f64, divergence: &str, epsilon: f64) -> Result<String, JsError> {
    robust_radius_json(scores, delta, divergence, epsilon).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn stl_robustness(formula: &str, signals: &str, trace: &str) -> Result<String, JsError> {
    stl_robustness_json(formula, signals, trace).map_err(|e| JsError::new(&e))
}
