use proptest::prelude::*;

use cat_core::abstraction::{abstraction_single_score, AlphaWeights, ErrorTable, Mode};
use cat_core::cp_core::{conformal_quantile, robust_quantile, CalibrationScores, Quantile, ShiftSpec};
use cat_core::dataset::Split;
use cat_core::stl::{parse_formula, robustness, Ext, Trace};
use cat_core::verification::{verdict_from_scores, ScoreKind, Status};

fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, 1..200)
}

proptest! {
    #[test]
    fn quantile_is_monotone_in_delta(s in scores(), d1 in 0.01f64..0.99, d2 in 0.01f64..0.99) {
        let c = CalibrationScores::new(s).unwrap();
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(conformal_quantile(&c, hi).unwrap() <= conformal_quantile(&c, lo).unwrap());
    }

    #[test]
    fn quantile_commutes_with_shift_and_scale(s in scores(), delta in 0.01f64..0.5, a in 0.1f64..10.0, b in -10.0f64..10.0) {
        let q = conformal_quantile(&CalibrationScores::new(s.clone()).unwrap(), delta).unwrap();
        let t = conformal_quantile(&CalibrationScores::new(s.iter().map(|v| a * v + b).collect()).unwrap(), delta).unwrap();
        match (q, t) {
            (Quantile::Finite(x), Quantile::Finite(y)) => prop_assert!((a * x + b - y).abs() <= 1e-9 * (1.0 + y.abs())),
            (x, y) => prop_assert_eq!(x, y),
        }
    }

    #[test]
    fn quantile_is_a_calibration_score(s in scores(), delta in 0.01f64..0.99) {
        if let Quantile::Finite(q) = conformal_quantile(&CalibrationScores::new(s.clone()).unwrap(), delta).unwrap() {
            prop_assert!(s.contains(&q));
        }
    }

    #[test]
    fn robust_quantile_dominates(s in scores(), delta in 0.01f64..0.5, eps in 0.0f64..0.3) {
        let c = CalibrationScores::new(s).unwrap();
        let plain = conformal_quantile(&c, delta).unwrap();
        prop_assert!(robust_quantile(&c, delta, &ShiftSpec::tv(eps)).unwrap() >= plain);
        prop_assert!(robust_quantile(&c, delta, &ShiftSpec::kl(eps)).unwrap() >= plain);
    }

    #[test]
    fn verdicts_follow_the_margin_sign(s in scores(), delta in 0.01f64..0.3) {
        let ext: Vec<Ext> = s.iter().map(|v| Ext::Finite(*v)).collect();
        let v = verdict_from_scores(&ext, delta, ScoreKind::SetDistance).unwrap();
        match v.status {
            Status::Certified => prop_assert!(v.margin.is_negative()),
            Status::Refuted => prop_assert!(v.flipped_margin.unwrap().is_negative()),
            Status::Inconclusive => prop_assert!(!v.margin.is_negative()),
        }
    }

    #[test]
    fn single_score_radii_scale_with_alpha(vals in prop::collection::vec(0.0f64..5.0, 60..=60), lambda in 0.1f64..10.0) {
        let table = ErrorTable::from_values(Split::Calibrate, Mode::OpenLoop, 0, vec![1, 2, 3], 1, vals).unwrap();
        let a = AlphaWeights::new(vec![1.0, 2.0, 0.5]).unwrap();
        let r1 = abstraction_single_score(&table, 0.1, &a, None).unwrap().mean_radius_per_time();
        let r2 = abstraction_single_score(&table, 0.1, &a.scaled(lambda), None).unwrap().mean_radius_per_time();
        for (x, y) in r1.iter().zip(&r2) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn robustness_is_monotone_in_signals(xs in prop::collection::vec(-5.0f64..5.0, 6..30), bump in 0.0f64..3.0) {
        let f = parse_formula("F[0,3](x >= 1) and G[0,2](x >= -4)", &["x"]).unwrap();
        let up: Vec<f64> = xs.iter().map(|v| v + bump).collect();
        let a = robustness(&f, &Trace::new(1, &xs).unwrap(), 0).unwrap();
        let b = robustness(&f, &Trace::new(1, &up).unwrap(), 0).unwrap();
        prop_assert!(b >= a);
    }
}
