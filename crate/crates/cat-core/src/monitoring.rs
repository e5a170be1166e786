//! Predictive runtime monitoring: lower bounds on the robustness of a partially
//! observed trajectory.
//!
//! The accurate monitor calibrates the gap between predicted and true
//! robustness. The interpretable monitor calibrates a statistical abstraction
//! and evaluates the formula against the worst case inside it.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::abstraction::{abstraction_single_score, Abstraction, AlphaWeights, ErrorTable, Mode};
use crate::cp_core::{conformal_quantile, robust_quantile, CalibrationScores, Quantile, ShiftSpec};
use crate::dataset::{Split, TrajectoryDataset};
use crate::error::{invalid, Result};
use crate::predictors::{PredictionBundle, PredictorModel};
use crate::stl::{robustness, robustness_with, to_negation_normal_form, Ext, Formula, Predicate, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorMethod {
    Accurate,
    Interpretable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorCalibration {
    pub method: MonitorMethod,
    /// Observation time `t`.
    pub t: usize,
    /// Final time `T` of the calibration trajectories.
    pub horizon: usize,
    pub delta: f64,
    pub k: usize,
    pub shift: Option<ShiftSpec>,
    /// Specification, in negation normal form for the interpretable method.
    pub spec: Formula,
    /// Accurate method: quantile of `rho(zhat) - rho(z)`.
    pub c: Option<Quantile>,
    /// Set when some calibration robustness was an infinite marker.
    pub uninformative: bool,
    /// Interpretable method: regions for times `t+1..T`; absent when `t = T`.
    pub abstraction: Option<Abstraction>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorResult {
    pub rho_star: Ext,
    pub method: MonitorMethod,
    pub delta: f64,
    /// Robustness of the observed prefix spliced with the forecast.
    pub predicted_rho: Ext,
}

/// Options for [`calibrate_monitor`].
#[derive(Debug, Clone, Default)]
pub struct MonitorOptions<'a> {
    pub shift: Option<ShiftSpec>,
    /// Interpretable weights over times `t+1..T`; uniform when absent.
    pub alpha: Option<&'a AlphaWeights>,
}

/// Prefix `0..=t` spliced with the rollout to `horizon`; the trajectory itself when `t = horizon`.
fn forecast(model: &PredictorModel, prefix: &Trace<'_>, horizon: usize) -> Result<(Vec<f64>, Option<PredictionBundle>)> {
    let t = prefix.len() - 1;
    if t == horizon {
        return Ok((prefix.data().to_vec(), None));
    }
    let b = model.predict_openloop(prefix, horizon)?;
    Ok((b.splice(prefix), Some(b)))
}

fn quantile_of(scores: Vec<f64>, delta: f64, shift: Option<&ShiftSpec>) -> Result<Quantile> {
    let s = CalibrationScores::new(scores)?;
    match shift {
        Some(sh) => robust_quantile(&s, delta, sh),
        None => conformal_quantile(&s, delta),
    }
}

pub fn calibrate_monitor(
    calib: &TrajectoryDataset,
    model: &PredictorModel,
    spec: &Formula,
    t: usize,
    delta: f64,
    method: MonitorMethod,
    opts: &MonitorOptions<'_>,
) -> Result<MonitorCalibration> {
    calib.require_split(&[Split::Calibrate], "monitor calibration")?;
    spec.check_dim(calib.dim())?;
    let horizon = calib.horizon();
    if t > horizon {
        return Err(invalid(format!("observation time {t} exceeds the final time {horizon}")));
    }
    if calib.len() < spec.horizon() + 1 {
        return Err(crate::Error::TraceTooShort { required: spec.horizon() + 1, actual: calib.len() });
    }
    if let Some(s) = &opts.shift {
        s.validate()?;
    }
    let mut cal = MonitorCalibration {
        method,
        t,
        horizon,
        delta,
        k: calib.count(),
        shift: opts.shift,
        spec: spec.clone(),
        c: None,
        uninformative: false,
        abstraction: None,
    };
    match method {
        MonitorMethod::Accurate => {
            let mut scores = Vec::with_capacity(calib.count());
            for tr in calib.traces() {
                let prefix = Trace::new_unchecked(calib.dim(), &tr.data()[..(t + 1) * calib.dim()]);
                let (zhat, _) = forecast(model, &prefix, horizon)?;
                let rp = robustness(spec, &Trace::new_unchecked(calib.dim(), &zhat), 0)?;
                let rt = robustness(spec, &tr, 0)?;
                match (rp, rt) {
                    (Ext::Finite(a), Ext::Finite(b)) => scores.push(a - b),
                    (a, b) if a == b => scores.push(0.0),
                    _ => cal.uninformative = true,
                }
            }
            cal.c = Some(if cal.uninformative { Quantile::Infinite } else { quantile_of(scores, delta, opts.shift.as_ref())? });
        }
        MonitorMethod::Interpretable => {
            cal.spec = to_negation_normal_form(spec);
            if t < horizon {
                let errs = ErrorTable::compute(calib, model, Mode::OpenLoop, t)?;
                let uniform = AlphaWeights::uniform(errs.width());
                let alpha = opts.alpha.unwrap_or(&uniform);
                cal.abstraction = Some(abstraction_single_score(&errs, delta, alpha, opts.shift.as_ref())?);
            }
        }
    }
    Ok(cal)
}

/// Lower bound `rho*` on the robustness of the full trajectory given its prefix `0..=t`.
pub fn monitor(cal: &MonitorCalibration, prefix: &Trace<'_>, model: &PredictorModel) -> Result<MonitorResult> {
    if prefix.len() != cal.t + 1 {
        return Err(invalid(format!("monitor calibrated at t = {} needs {} prefix states, got {}", cal.t, cal.t + 1, prefix.len())));
    }
    let (zhat, bundle) = forecast(model, prefix, cal.horizon)?;
    let predicted_rho = robustness(&cal.spec, &Trace::new_unchecked(prefix.dim(), &zhat), 0)?;
    let rho_star = match cal.method {
        MonitorMethod::Accurate => match cal.c.expect("accurate calibration carries C") {
            Quantile::Finite(c) => predicted_rho.minus(c),
            Quantile::Infinite => Ext::NegInf,
        },
        MonitorMethod::Interpretable => worst_case_robustness(&cal.spec, prefix, bundle.as_ref(), cal.abstraction.as_ref())?,
    };
    Ok(MonitorResult { rho_star, method: cal.method, delta: cal.delta, predicted_rho })
}

/// Atom value at a predicted state: `h(zhat) - L * C`, the Lipschitz lower
/// bound of `h` over the ball of radius `C` around `zhat`.
pub fn tightened_atom(p: &Predicate, zhat: &[f64], radius: Quantile) -> Ext {
    match radius {
        Quantile::Finite(c) => Ext::Finite(p.h(zhat) - p.lipschitz() * c),
        Quantile::Infinite => Ext::NegInf,
    }
}

/// Worst-case robustness over all completions consistent with the regions.
///
/// Atoms at observed times use the true state; atoms at predicted times use
/// [`tightened_atom`] with the largest radius among agents the predicate reads.
pub fn worst_case_robustness(
    spec: &Formula,
    prefix: &Trace<'_>,
    predictions: Option<&PredictionBundle>,
    regions: Option<&Abstraction>,
) -> Result<Ext> {
    if !spec.is_nnf() {
        return Err(invalid("worst-case robustness needs a formula that contains no negations above atoms"));
    }
    let t = prefix.len() - 1;
    let steps = predictions.map_or(0, |b| b.steps());
    let available = prefix.len() + steps;
    if available < spec.horizon() + 1 {
        return Err(crate::Error::TraceTooShort { required: spec.horizon() + 1, actual: available });
    }
    if steps > 0 && regions.is_none() {
        return Err(invalid("predicted states need prediction regions"));
    }
    let failure = Cell::new(None);
    let atom = |p: &Predicate, s: usize| -> Ext {
        if s <= t {
            return Ext::Finite(p.h(prefix.state(s)));
        }
        let b = predictions.expect("checked above");
        match regions.and_then(|r| r.radius_over(s, &p.support())) {
            Some(r) => tightened_atom(p, b.at(s), r),
            None => {
                failure.set(failure.get().or(Some(s)));
                Ext::NegInf
            }
        }
    };
    let rho = robustness_with(spec, 0, true, &atom)?;
    if let Some(s) = failure.get() {
        return Err(invalid(format!("no prediction region covers time {s}")));
    }
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::Construction;

    fn x_ge(c: f64) -> Formula {
        Formula::Atom(Predicate::affine(format!("x >= {c}"), vec![1.0], -c))
    }

    fn ramp(split: Split, k: usize) -> TrajectoryDataset {
        let data: Vec<f64> = (0..k).flat_map(|i| (0..6).map(move |t| i as f64 * 0.01 + t as f64)).collect();
        TrajectoryDataset::new(split, 1, 6, data).unwrap()
    }

    #[test]
    fn accurate_exact_predictor_zero_c() {
        let ds = ramp(Split::Calibrate, 30);
        let m = PredictorModel::constant_velocity(1);
        let spec = Formula::always(0, 5, x_ge(0.0));
        let cal = calibrate_monitor(&ds, &m, &spec, 2, 0.1, MonitorMethod::Accurate, &Default::default()).unwrap();
        assert_eq!(cal.c, Some(Quantile::Finite(0.0)));
        let tr = ds.trace(3);
        let prefix = Trace::new(1, &tr.data()[..3]).unwrap();
        let r = monitor(&cal, &prefix, &m).unwrap();
        assert_eq!(r.rho_star, r.predicted_rho);
    }

    #[test]
    fn interpretable_full_observation_is_exact() {
        let ds = ramp(Split::Calibrate, 30);
        let m = PredictorModel::constant_velocity(1);
        let spec = Formula::eventually(0, 5, x_ge(3.5));
        let cal = calibrate_monitor(&ds, &m, &spec, 5, 0.1, MonitorMethod::Interpretable, &Default::default()).unwrap();
        let tr = ds.trace(0);
        let r = monitor(&cal, &tr, &m).unwrap();
        assert_eq!(r.rho_star, robustness(&spec, &tr, 0).unwrap());
    }

    #[test]
    fn small_k_gives_infinite_low() {
        let ds = ramp(Split::Calibrate, 5);
        let m = PredictorModel::constant_velocity(1);
        let spec = Formula::always(0, 5, x_ge(0.0));
        let cal = calibrate_monitor(&ds, &m, &spec, 1, 0.05, MonitorMethod::Accurate, &Default::default()).unwrap();
        let r = monitor(&cal, &Trace::new(1, &[0.0, 1.0]).unwrap(), &m).unwrap();
        assert_eq!(r.rho_star, Ext::NegInf);
    }

    #[test]
    fn single_future_affine_atom() {
        let p = Predicate::affine("2x >= 0", vec![2.0], 0.0);
        let spec = Formula::eventually(1, 1, Formula::Atom(p));
        let prefix = Trace::new(1, &[0.0]).unwrap();
        let bundle = PredictionBundle { base_time: 0, dim: 1, data: vec![3.0] };
        let regions = Abstraction {
            mode: Mode::OpenLoop,
            construction: Construction::SingleScore,
            base_time: 0,
            times: vec![1],
            agents: vec![0..1],
            radii: vec![Quantile::Finite(1.0)],
            delta: 0.1,
            k: 10,
            score_quantile: None,
        };
        let r = worst_case_robustness(&spec, &prefix, Some(&bundle), Some(&regions)).unwrap();
        assert_eq!(r, Ext::Finite(6.0 - 2.0));
    }

    #[test]
    fn rejects_non_nnf() {
        let spec = Formula::not(Formula::always(0, 0, x_ge(0.0)));
        let prefix = Trace::new(1, &[0.0]).unwrap();
        assert!(worst_case_robustness(&spec, &prefix, None, None).is_err());
    }
}
