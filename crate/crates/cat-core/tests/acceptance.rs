//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use cat_core::control::ConstraintForm;
use cat_core::cp_core::{conformal_quantile, robust_quantile, CalibrationScores, Quantile, ShiftSpec};
use cat_core::rng::{normal, uniform, Streams};
use cat_core::scenarios::experiments::{
    AbstractionCompare, CartpoleVerify, CrossingControl, Experiment, MonitorAircraft, MonitorRobust, NavigationControl, SensorCalibration,
    UnicycleVerify,
};
use cat_core::scenarios::report::ExperimentReport;
use cat_core::scenarios::stats::{binomial_band, ks_distance_beta};
use cat_core::stl::{boolean_sat, robustness, to_negation_normal_form, Ext, Formula, Predicate, Trace};
use cat_core::verification::smc_bound_from_outcomes;

const SEED: u64 = 0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn metric(rep: &ExperimentReport, run: &str, name: &str) -> f64 {
    rep.run(run).and_then(|r| r.metric(name)).unwrap_or_else(|| panic!("{run}.{name} missing from {}", rep.experiment))
}

fn scores(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| normal(rng, 0.0, 1.0)).collect()
}

// 1 -------------------------------------------------------------------------

fn quantile_oracle() -> Outcome {
    let mut rng = Streams::new(SEED).stream("c1");
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let k = rng.random_range(1..=300usize);
        // delta = j / 1000 keeps (K+1)(1-delta) rational, so the oracle rank is exact.
        let j = rng.random_range(1..1000u64);
        let delta = j as f64 / 1000.0;
        let mut s = scores(&mut rng, k);
        if rng.random::<bool>() {
            s.iter_mut().for_each(|v| *v = (*v * 3.0).round());
        }
        let got = conformal_quantile(&CalibrationScores::new(s.clone()).unwrap(), delta).unwrap();
        s.sort_by(f64::total_cmp);
        let num = (k as u64 + 1) * (1000 - j);
        let p = num.div_ceil(1000) as usize;
        let want = if p > k { Quantile::Infinite } else { Quantile::Finite(s[p - 1]) };
        mismatches += (got != want) as usize;
    }
    check(mismatches == 0, format!("{mismatches} mismatches in 10^4 instances"))
}

// 2 -------------------------------------------------------------------------

fn marginal_coverage() -> Outcome {
    let st = Streams::new(SEED);
    let (k, delta, n) = (100, 0.05, 5000);
    let hits = (0..n as u64)
        .filter(|i| {
            let mut rng = st.indexed("c2", *i);
            let c = conformal_quantile(&CalibrationScores::new(scores(&mut rng, k)).unwrap(), delta).unwrap();
            Quantile::Finite(normal(&mut rng, 0.0, 1.0)) <= c
        })
        .count();
    let cov = hits as f64 / n as f64;
    let lo = binomial_band(0.95, n).0;
    let hi = binomial_band(0.96, n).1;
    check((lo..=hi).contains(&cov), format!("coverage {cov:.4} in [{lo:.4}, {hi:.4}]"))
}

// 3 -------------------------------------------------------------------------

fn beta_law() -> Outcome {
    let st = Streams::new(SEED);
    let (k, delta, j, n) = (100usize, 0.05, 500, 500);
    let cec: Vec<f64> = (0..n as u64)
        .map(|i| {
            let mut rng = st.indexed("c3", i);
            let c = conformal_quantile(&CalibrationScores::new(scores(&mut rng, k)).unwrap(), delta).unwrap();
            (0..j).filter(|_| Quantile::Finite(normal(&mut rng, 0.0, 1.0)) <= c).count() as f64 / j as f64
        })
        .collect();
    let l = ((k + 1) as f64 * delta).floor();
    let (a, b) = ((k + 1) as f64 - l, l);
    let ks = ks_distance_beta(&cec, a, b).unwrap();
    check(ks <= 0.1, format!("KS to Beta({a}, {b}) = {ks:.4} <= 0.1"))
}

// 4 -------------------------------------------------------------------------

fn sensor_calibration() -> Outcome {
    let rep = SensorCalibration::default().execute(SEED).unwrap();
    let ecs: Vec<f64> = rep.runs.iter().map(|r| r.ec.unwrap()).collect();
    let ec_ok = ecs.iter().all(|e| (e - 0.95).abs() <= 0.02);
    let nav = NavigationControl { j: 5, ..Default::default() }.execute(SEED).unwrap();
    let cov = metric(&nav, "open_loop", "constraint_coverage");
    check(ec_ok && cov >= 0.93, format!("EC for K=100/500/1000 = {ecs:.3?}; navigation constraint coverage {cov:.4} >= 0.93"))
}

// 5 -------------------------------------------------------------------------

fn abstraction_compare() -> Outcome {
    let rep = AbstractionCompare::default().execute(SEED).unwrap();
    let ub = metric(&rep, "ub", "mean_cec");
    let cf = metric(&rep, "snsa_cf", "mean_cec");
    let lcp = metric(&rep, "snsa_lcp", "mean_cec");
    let below_cf = metric(&rep, "snsa_cf", "steps_below_ub");
    let below_lcp = metric(&rep, "snsa_lcp", "steps_below_ub");
    let gap = metric(&rep, "checks", "alpha_scale_max_gap");
    let band = 0.93..=0.97;
    let pass = ub >= 0.98 && band.contains(&cf) && band.contains(&lcp) && below_cf >= 0.8 && below_lcp >= 0.8 && gap <= 1e-12;
    check(
        pass,
        format!("coverage UB {ub:.4}, SNSA-CF {cf:.4}, SNSA-LCP {lcp:.4}; steps below UB {below_cf:.2}/{below_lcp:.2}; scale gap {gap:.1e}"),
    )
}

// 6 -------------------------------------------------------------------------

fn monitors() -> Outcome {
    let rep = MonitorAircraft::default().execute(SEED).unwrap();
    let acc = metric(&rep, "accurate", "coverage");
    let int = metric(&rep, "interpretable", "coverage");
    let gap = metric(&rep, "checks", "final_time_max_gap");
    let rob = MonitorRobust::default().execute(SEED).unwrap();
    let vanilla_below = metric(&rob, "vanilla", "trials_below_target");
    let robust_ok = metric(&rob, "robust", "trials_at_or_above_target");
    let pass = (0.93..=0.97).contains(&acc) && int >= 0.95 && gap == 0.0 && vanilla_below > 0.5 && robust_ok > 0.5;
    check(
        pass,
        format!(
            "accurate {acc:.4}, interpretable {int:.4}, t=T gap {gap}; shifted: vanilla below 0.80 in {:.0}% of trials, robust at or above in {:.0}%",
            100.0 * vanilla_below,
            100.0 * robust_ok
        ),
    )
}

// 7 -------------------------------------------------------------------------

fn offline_verification() -> Outcome {
    let cp = CartpoleVerify::default().execute(SEED).unwrap();
    let stab = metric(&cp, "stabilizing", "certified_rate");
    let dest = metric(&cp, "destabilized", "certified_rate");
    let uni = UnicycleVerify { n: 100, ..Default::default() }.execute(SEED).unwrap();
    let fitted = metric(&uni, "fitted", "mean_c");
    let untrained = metric(&uni, "untrained", "mean_c");
    let pass = stab >= 0.95 && dest == 0.0 && fitted < 0.0 && untrained > 0.0;
    check(
        pass,
        format!("cart-pole certified {stab:.2} (stabilizing) / {dest:.2} (destabilized); unicycle mean C {fitted:.3} fitted, {untrained:.1} untrained"),
    )
}

// 8 -------------------------------------------------------------------------

fn smc_closed_form() -> Outcome {
    let mut rng = Streams::new(SEED).stream("c8");
    let mut bad = 0;
    for _ in 0..1000 {
        let k = rng.random_range(1..=400usize);
        let p: f64 = rng.random();
        let sat: Vec<bool> = (0..k).map(|_| rng.random::<f64>() < p).collect();
        let s = sat.iter().filter(|v| **v).count();
        bad += (smc_bound_from_outcomes(&sat).unwrap() != s as f64 / (k + 1) as f64) as usize;
    }
    check(bad == 0, format!("{bad} mismatches with S/(K+1) in 10^3 instances"))
}

// 9 -------------------------------------------------------------------------

fn robust_reduction() -> Outcome {
    let mut rng = Streams::new(SEED).stream("c9");
    let (mut mismatch, mut nonmono) = (0, 0);
    for _ in 0..1000 {
        let k = rng.random_range(1..=300usize);
        let delta = uniform(&mut rng, 0.01, 0.5);
        let s = CalibrationScores::new(scores(&mut rng, k)).unwrap();
        let plain = conformal_quantile(&s, delta).unwrap();
        for sh in [ShiftSpec::tv(0.0), ShiftSpec::kl(0.0)] {
            mismatch += (robust_quantile(&s, delta, &sh).unwrap() != plain) as usize;
        }
        for make in [ShiftSpec::tv as fn(f64) -> ShiftSpec, ShiftSpec::kl] {
            let mut prev = plain;
            for e in 1..=20 {
                let q = robust_quantile(&s, delta, &make(e as f64 * 0.01)).unwrap();
                nonmono += (q < prev) as usize;
                prev = q;
            }
        }
    }
    check(mismatch == 0 && nonmono == 0, format!("{mismatch} mismatches at epsilon = 0, {nonmono} monotonicity violations on sweeps"))
}

// 10 ------------------------------------------------------------------------

fn in_ball(rng: &mut ChaCha8Rng, center: &[f64], r: f64) -> Vec<f64> {
    loop {
        let d: Vec<f64> = center.iter().map(|_| uniform(rng, -1.0, 1.0)).collect();
        let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n <= 1.0 {
            return center.iter().zip(&d).map(|(c, v)| c + r * v).collect();
        }
    }
}

fn control_tightening() -> Outcome {
    let mut rng = Streams::new(SEED).stream("c10");
    let (mut active, mut violations) = (0, 0);
    for i in 0..10_000 {
        let form = match i % 3 {
            0 => ConstraintForm::Distance { sel: vec![0, 1], d: uniform(&mut rng, 0.0, 1.0) },
            1 => ConstraintForm::Reach { sel: vec![0, 1], eps: uniform(&mut rng, 0.5, 3.0) },
            _ => ConstraintForm::Affine {
                a_x: (0..4).map(|_| uniform(&mut rng, -1.0, 1.0)).collect(),
                a_e: (0..2).map(|_| uniform(&mut rng, -2.0, 2.0)).collect(),
                b: uniform(&mut rng, -1.0, 1.0),
            },
        };
        let x: Vec<f64> = (0..4).map(|_| uniform(&mut rng, -2.0, 2.0)).collect();
        let e_hat: Vec<f64> = (0..2).map(|_| uniform(&mut rng, -2.0, 2.0)).collect();
        let c = uniform(&mut rng, 0.0, 1.0);
        if form.tightened(&x, &e_hat, c) >= 0.0 {
            active += 1;
            let e = in_ball(&mut rng, &e_hat, c);
            violations += (form.value(&x, &e) < 0.0) as usize;
        }
    }
    let rep = CrossingControl::default().execute(SEED).unwrap();
    let safe = metric(&rep, "closed_loop", "safe_rate");
    let lo = metric(&rep, "closed_loop", "band_lo");
    check(
        violations == 0 && active > 1000 && safe >= lo,
        format!("{violations} violations over {active} tightened-feasible samples; closed-loop safety {safe:.4} >= {lo:.4} over 300 episodes"),
    )
}

// 11 ------------------------------------------------------------------------

fn random_atom(rng: &mut ChaCha8Rng) -> Formula {
    if rng.random_range(0..4) == 0 {
        let c = vec![uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0)];
        Formula::Atom(Predicate::ball("ball", vec![0, 1], c, uniform(rng, 0.2, 1.0)).unwrap())
    } else {
        let a = vec![uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0)];
        Formula::Atom(Predicate::affine("lin", a, uniform(rng, -0.5, 0.5)))
    }
}

fn random_formula(rng: &mut ChaCha8Rng, depth: usize) -> Formula {
    if depth == 0 {
        return random_atom(rng);
    }
    let iv = |rng: &mut ChaCha8Rng| {
        let a = rng.random_range(0..3);
        (a, a + rng.random_range(0..3))
    };
    match rng.random_range(0..9) {
        0 => random_atom(rng),
        1 => Formula::not(random_formula(rng, depth - 1)),
        2 => Formula::and(random_formula(rng, depth - 1), random_formula(rng, depth - 1)),
        3 => Formula::or(random_formula(rng, depth - 1), random_formula(rng, depth - 1)),
        4 => Formula::implies(random_formula(rng, depth - 1), random_formula(rng, depth - 1)),
        5 => {
            let (a, b) = iv(rng);
            Formula::always(a, b, random_formula(rng, depth - 1))
        }
        6 => {
            let (a, b) = iv(rng);
            Formula::eventually(a, b, random_formula(rng, depth - 1))
        }
        _ => {
            let (a, b) = iv(rng);
            Formula::until(a, b, random_formula(rng, depth - 1), random_formula(rng, depth - 1))
        }
    }
}

fn stl_engine() -> Outcome {
    let mut rng = Streams::new(SEED).stream("c11");
    let (mut sign_bad, mut nnf_bad, mut horizon_bad, mut checked) = (0, 0, 0, 0);
    for _ in 0..1000 {
        let f = random_formula(&mut rng, 4);
        let need = f.horizon() + 1;
        let extra = rng.random_range(1..5);
        let data: Vec<f64> = (0..2 * (need + extra)).map(|_| uniform(&mut rng, -1.5, 1.5)).collect();
        let long = Trace::new(2, &data).unwrap();
        let short = Trace::new(2, &data[..2 * need]).unwrap();
        let rho = robustness(&f, &long, 0).unwrap();
        if rho != Ext::Finite(0.0) {
            checked += 1;
            sign_bad += (rho.is_positive() != boolean_sat(&f, &long, 0).unwrap()) as usize;
        }
        nnf_bad += (robustness(&to_negation_normal_form(&f), &long, 0).unwrap() != rho) as usize;
        horizon_bad += (robustness(&f, &short, 0).unwrap() != rho) as usize;
    }
    check(
        sign_bad == 0 && nnf_bad == 0 && horizon_bad == 0,
        format!("sign mismatches {sign_bad}/{checked}, NNF mismatches {nnf_bad}, horizon-suffix mismatches {horizon_bad} over 10^3 pairs"),
    )
}

fn main() -> ExitCode {
    type Criterion = (u32, &'static str, u64, fn() -> Outcome);
    let criteria: [Criterion; 11] = [
        (1, "quantile oracle", 5, quantile_oracle),
        (2, "marginal coverage", 30, marginal_coverage),
        (3, "beta law of conditional coverage", 120, beta_law),
        (4, "sensor calibration and navigation", 300, sensor_calibration),
        (5, "abstraction comparison", 300, abstraction_compare),
        (6, "predictive monitors", 300, monitors),
        (7, "offline verification", 300, offline_verification),
        (8, "SMC closed form", 60, smc_closed_form),
        (9, "robust reduction", 60, robust_reduction),
        (10, "control tightening and closed-loop safety", 300, control_tightening),
        (11, "STL engine", 60, stl_engine),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, limit, run) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let took = start.elapsed();
        let in_time = took <= Duration::from_secs(limit);
        let pass = out.pass && in_time;
        failed += (!pass) as usize;
        let timing = if in_time { String::new() } else { format!(" (over the {limit} s budget)") };
        println!(
            "criterion {id:>2} {}: {name}: {} [{:.1} s]{timing}",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
