//! Statistical abstractions: per-time prediction regions that contain the
//! future trajectory with probability at least `1 - delta`.
//!
//! Prediction errors are collected once into an [`ErrorTable`]. The naive
//! construction calibrates every (time, agent) pair separately under a union
//! bound; the single-score construction calibrates one normalised maximum.

use std::ops::Range;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cp_core::{conformal_quantile, robust_quantile, CalibrationScores, Quantile, ShiftSpec};
use crate::dataset::{Split, TrajectoryDataset};
use crate::error::{invalid, Result};
use crate::predictors::PredictorModel;
use crate::rng::Streams;

/// Whether errors are multi-step rollouts from a fixed base time or one-step forecasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    OpenLoop,
    ClosedLoop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    Naive,
    SingleScore,
}

/// Euclidean prediction errors per trajectory, time and agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTable {
    pub split: Split,
    pub mode: Mode,
    pub base_time: usize,
    /// Predicted times, ascending.
    pub times: Vec<usize>,
    pub agents: Vec<Range<usize>>,
    /// Row-major `count x times x agents`.
    pub values: Vec<f64>,
}

impl ErrorTable {
    /// Errors of `model` on every trajectory of `ds`.
    ///
    /// Open-loop rows hold `|z_tau - z_{tau|t}|` for `tau = t+1..T` with
    /// `t = base_time`; closed-loop rows hold `|z_tau - z_{tau|tau-1}|` for
    /// `tau = max(t+1, order)..T`.
    pub fn compute(ds: &TrajectoryDataset, model: &PredictorModel, mode: Mode, base_time: usize) -> Result<Self> {
        let horizon = ds.horizon();
        if base_time >= horizon {
            return Err(invalid(format!("base time {base_time} must precede the final time {horizon}")));
        }
        let agents = ds.agents();
        let times: Vec<usize> = match mode {
            Mode::OpenLoop => (base_time + 1..=horizon).collect(),
            Mode::ClosedLoop => ((base_time + 1).max(model.order().max(1))..=horizon).collect(),
        };
        if times.is_empty() {
            return Err(invalid("no predicted times after the base time"));
        }
        let rows: Vec<Vec<f64>> = (0..ds.count())
            .into_par_iter()
            .map(|i| -> Result<Vec<f64>> {
                let tr = ds.trace(i);
                let mut row = Vec::with_capacity(times.len() * agents.len());
                match mode {
                    Mode::OpenLoop => {
                        let prefix = crate::stl::Trace::new_unchecked(ds.dim(), &tr.data()[..(base_time + 1) * ds.dim()]);
                        let pred = model.predict_openloop(&prefix, horizon)?;
                        for &tau in &times {
                            push_errors(&mut row, tr.state(tau), pred.at(tau), &agents);
                        }
                    }
                    Mode::ClosedLoop => {
                        let pred = model.predict_onestep_series(&tr)?;
                        for &tau in &times {
                            push_errors(&mut row, tr.state(tau), pred.at(tau), &agents);
                        }
                    }
                }
                Ok(row)
            })
            .collect::<Result<_>>()?;
        Ok(Self { split: ds.split(), mode, base_time, times, agents, values: rows.concat() })
    }

    /// Table from precomputed errors, mainly for tests and external predictors.
    pub fn from_values(split: Split, mode: Mode, base_time: usize, times: Vec<usize>, agents: usize, values: Vec<f64>) -> Result<Self> {
        let width = times.len() * agents;
        if width == 0 || values.is_empty() || values.len() % width != 0 {
            return Err(invalid("error table shape does not match times x agents"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("prediction errors must be finite and nonnegative"));
        }
        Ok(Self { split, mode, base_time, times, agents: (0..agents).map(|a| a..a + 1).collect(), values })
    }

    pub fn count(&self) -> usize {
        self.values.len() / self.width()
    }

    /// Entries per trajectory (`times x agents`).
    pub fn width(&self) -> usize {
        self.times.len() * self.agents.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.width()..(i + 1) * self.width()]
    }

    /// Errors of one (time, agent) cell across all trajectories.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.count()).map(|i| self.row(i)[j]).collect()
    }

    /// Per-trajectory scores `max_j alpha_j * e_j`.
    pub fn scores(&self, alpha: &AlphaWeights) -> Result<Vec<f64>> {
        alpha.check(self.width())?;
        Ok((0..self.count()).map(|i| max_weighted(self.row(i), &alpha.values)).collect())
    }
}

fn push_errors(row: &mut Vec<f64>, truth: &[f64], pred: &[f64], agents: &[Range<usize>]) {
    for r in agents {
        let d2: f64 = truth[r.clone()].iter().zip(&pred[r.clone()]).map(|(a, b)| (a - b) * (a - b)).sum();
        row.push(d2.sqrt());
    }
}

fn max_weighted(row: &[f64], alpha: &[f64]) -> f64 {
    row.iter().zip(alpha).map(|(e, a)| a * e).fold(0.0, f64::max)
}

/// Positive normalisation weights, one per (time, agent) cell of an [`ErrorTable`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaWeights {
    pub values: Vec<f64>,
}

impl AlphaWeights {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(invalid("normalisation weights must be finite and strictly positive"));
        }
        Ok(Self { values })
    }

    pub fn uniform(n: usize) -> Self {
        Self { values: vec![1.0; n] }
    }

    /// Rescale onto the simplex `sum alpha = 1`.
    pub fn normalized(&self) -> Self {
        let s: f64 = self.values.iter().sum();
        Self { values: self.values.iter().map(|a| a / s).collect() }
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        Self { values: self.values.iter().map(|a| a * lambda).collect() }
    }

    fn check(&self, width: usize) -> Result<()> {
        if self.values.len() != width {
            return Err(invalid(format!("expected {width} normalisation weights, got {}", self.values.len())));
        }
        if self.values.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(invalid("normalisation weights must be finite and strictly positive"));
        }
        Ok(())
    }
}

/// Per-time prediction regions around forecasts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abstraction {
    pub mode: Mode,
    pub construction: Construction,
    pub base_time: usize,
    pub times: Vec<usize>,
    pub agents: Vec<Range<usize>>,
    /// Row-major `times x agents`.
    pub radii: Vec<Quantile>,
    pub delta: f64,
    pub k: usize,
    /// Single-score quantile `C` before division by the weights.
    pub score_quantile: Option<Quantile>,
}

impl Abstraction {
    pub fn radius(&self, tau: usize, agent: usize) -> Option<Quantile> {
        let j = self.times.iter().position(|&s| s == tau)?;
        Some(self.radii[j * self.agents.len() + agent])
    }

    /// Largest radius at `tau` over agents whose block meets `dims`.
    pub fn radius_over(&self, tau: usize, dims: &[usize]) -> Option<Quantile> {
        let mut out: Option<Quantile> = None;
        for (a, r) in self.agents.iter().enumerate() {
            if dims.iter().any(|d| r.contains(d)) {
                let q = self.radius(tau, a)?;
                out = Some(out.map_or(q, |o| o.max(q)));
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.radii.iter().all(Quantile::is_finite)
    }

    /// Mean radius per time over agents; `inf` if any radius is infinite.
    pub fn mean_radius_per_time(&self) -> Vec<f64> {
        let a = self.agents.len();
        self.radii.chunks(a).map(|c| c.iter().map(Quantile::to_f64).sum::<f64>() / a as f64).collect()
    }

    /// Whether row `i` of `table` lies inside every region.
    pub fn covers(&self, table: &ErrorTable, i: usize) -> Result<bool> {
        if table.times != self.times || table.agents.len() != self.agents.len() || table.mode != self.mode {
            return Err(invalid("error table does not match the abstraction layout"));
        }
        Ok(table.row(i).iter().zip(&self.radii).all(|(e, r)| Quantile::Finite(*e) <= *r))
    }
}

/// Union-bound construction: each of the `m` (time, agent) cells is
/// calibrated separately at failure probability `delta / m`.
pub fn abstraction_naive(calib: &ErrorTable, delta: f64) -> Result<Abstraction> {
    calib.require_calibrate()?;
    let m = calib.width();
    let per_cell = delta / m as f64;
    let radii = (0..m)
        .map(|j| conformal_quantile(&CalibrationScores::new(calib.column(j))?, per_cell))
        .collect::<Result<Vec<_>>>()?;
    Ok(Abstraction {
        mode: calib.mode,
        construction: Construction::Naive,
        base_time: calib.base_time,
        times: calib.times.clone(),
        agents: calib.agents.clone(),
        radii,
        delta,
        k: calib.count(),
        score_quantile: None,
    })
}

impl ErrorTable {
    fn require_calibrate(&self) -> Result<()> {
        if self.split != Split::Calibrate {
            return Err(invalid(format!("abstraction requires a calibrate split, got {}", self.split.name())));
        }
        Ok(())
    }

    fn require_tune(&self) -> Result<()> {
        if self.split != Split::Tune {
            return Err(invalid(format!("weight selection requires a tune split, got {}", self.split.name())));
        }
        Ok(())
    }
}

/// `alpha_j = 1 / max_i e_ij`; cells with zero maximum borrow the largest finite weight.
pub fn normalization_closed_form(tune: &ErrorTable) -> Result<AlphaWeights> {
    tune.require_tune()?;
    let maxima: Vec<f64> = (0..tune.width()).map(|j| tune.column(j).into_iter().fold(0.0, f64::max)).collect();
    let largest = maxima.iter().filter(|m| **m > 0.0).map(|m| 1.0 / m).fold(f64::NAN, f64::max);
    let fallback = if largest.is_nan() { 1.0 } else { largest };
    AlphaWeights::new(maxima.iter().map(|m| if *m > 0.0 { 1.0 / m } else { fallback }).collect())
}

/// Tune-set objective: the `1 - delta` quantile of the normalised maximum score.
pub fn alpha_objective(tune: &ErrorTable, alpha: &AlphaWeights, delta: f64) -> Result<f64> {
    let scores = CalibrationScores::new(tune.scores(alpha)?)?;
    let q = scores.augmented_quantile(1.0 - delta);
    Ok(q.value().unwrap_or_else(|| scores.max()))
}

const OPT_RESTARTS: u64 = 8;
const OPT_MIN_STEP: f64 = 1e-4;
const OPT_MAX_SWEEPS: usize = 400;

/// Weights on the simplex that reduce [`alpha_objective`] by multi-start
/// coordinate search. The closed-form weights are one of the starts, so the
/// result is never worse than them on the tune set.
pub fn optimize_alpha(tune: &ErrorTable, delta: f64, seed: u64) -> Result<AlphaWeights> {
    let closed = normalization_closed_form(tune)?.normalized();
    let n = closed.values.len();
    if n == 1 {
        return AlphaWeights::new(vec![1.0]);
    }
    let streams = Streams::new(seed);
    let mut starts = vec![closed.clone(), AlphaWeights::uniform(n).normalized()];
    for r in 0..OPT_RESTARTS {
        let mut rng = streams.indexed("alpha-start", r);
        let v: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().max(1e-12).ln()).collect();
        starts.push(AlphaWeights::new(v)?.normalized());
    }
    let mut best = closed.clone();
    let mut best_obj = alpha_objective(tune, &closed, delta)?;
    for start in starts {
        let (a, obj) = coordinate_search(tune, start, delta)?;
        if obj < best_obj {
            best = a;
            best_obj = obj;
        }
    }
    Ok(best)
}

fn coordinate_search(tune: &ErrorTable, start: AlphaWeights, delta: f64) -> Result<(AlphaWeights, f64)> {
    let mut cur = start;
    let mut obj = alpha_objective(tune, &cur, delta)?;
    let mut step = 0.5;
    for _ in 0..OPT_MAX_SWEEPS {
        if step < OPT_MIN_STEP {
            break;
        }
        let mut improved = false;
        for j in 0..cur.values.len() {
            for factor in [1.0 + step, 1.0 / (1.0 + step)] {
                let mut v = cur.values.clone();
                v[j] *= factor;
                let cand = AlphaWeights { values: v }.normalized();
                let o = alpha_objective(tune, &cand, delta)?;
                if o < obj {
                    cur = cand;
                    obj = o;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok((cur, obj))
}

/// Single-score construction: `C` is the conformal quantile of
/// `max_j alpha_j e_j`, and cell `j` receives radius `C / alpha_j`. With a
/// shift specification the distribution-shift-robust quantile is used.
pub fn abstraction_single_score(calib: &ErrorTable, delta: f64, alpha: &AlphaWeights, shift: Option<&ShiftSpec>) -> Result<Abstraction> {
    calib.require_calibrate()?;
    let scores = CalibrationScores::new(calib.scores(alpha)?)?;
    let c = match shift {
        Some(s) => robust_quantile(&scores, delta, s)?,
        None => conformal_quantile(&scores, delta)?,
    };
    Ok(Abstraction {
        mode: calib.mode,
        construction: Construction::SingleScore,
        base_time: calib.base_time,
        times: calib.times.clone(),
        agents: calib.agents.clone(),
        radii: alpha.values.iter().map(|a| c.div(*a)).collect(),
        delta,
        k: calib.count(),
        score_quantile: Some(c),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::PredictorModel;

    fn table(split: Split, times: usize, values: Vec<f64>) -> ErrorTable {
        ErrorTable::from_values(split, Mode::OpenLoop, 0, (1..=times).collect(), 1, values).unwrap()
    }

    #[test]
    fn closed_form_reciprocal_of_max() {
        let t = table(Split::Tune, 2, vec![1.0, 4.0, 2.0, 3.0]);
        assert_eq!(normalization_closed_form(&t).unwrap().values, vec![0.5, 0.25]);
    }

    #[test]
    fn closed_form_degenerate_rule() {
        let t = table(Split::Tune, 3, vec![0.0, 2.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(normalization_closed_form(&t).unwrap().values, vec![0.5, 0.5, 0.5]);
        let z = table(Split::Tune, 2, vec![0.0; 4]);
        assert_eq!(normalization_closed_form(&z).unwrap().values, vec![1.0, 1.0]);
    }

    #[test]
    fn naive_level_and_exact_predictor() {
        let ds = TrajectoryDataset::new(Split::Calibrate, 1, 11, (0..199 * 11).map(|i| (i % 11) as f64).collect()).unwrap();
        let m = PredictorModel::constant_velocity(1);
        let errs = ErrorTable::compute(&ds, &m, Mode::ClosedLoop, 0).unwrap();
        let a = abstraction_naive(&errs, 0.05).unwrap();
        assert_eq!(a.radii.len(), 10);
        assert!(a.radii[1..].iter().all(|r| *r == Quantile::Finite(0.0)));
        let short = TrajectoryDataset::new(Split::Calibrate, 1, 11, vec![0.0; 198 * 11]).unwrap();
        let errs = ErrorTable::compute(&short, &m, Mode::OpenLoop, 0).unwrap();
        assert!(!abstraction_naive(&errs, 0.05).unwrap().is_finite());
    }

    #[test]
    fn single_score_scale_invariance() {
        let vals: Vec<f64> = (0..300).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let t = table(Split::Calibrate, 3, vals);
        let alpha = AlphaWeights::new(vec![0.3, 1.7, 0.9]).unwrap();
        let a = abstraction_single_score(&t, 0.1, &alpha, None).unwrap();
        let b = abstraction_single_score(&t, 0.1, &alpha.scaled(13.0), None).unwrap();
        for (x, y) in a.radii.iter().zip(&b.radii) {
            assert!((x.to_f64() - y.to_f64()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_time_reduces_to_vanilla() {
        let vals: Vec<f64> = (0..50).map(|i| (i as f64).sin().abs()).collect();
        let t = table(Split::Calibrate, 1, vals.clone());
        let a = abstraction_single_score(&t, 0.1, &AlphaWeights::uniform(1), None).unwrap();
        let c = conformal_quantile(&CalibrationScores::new(vals).unwrap(), 0.1).unwrap();
        assert_eq!(a.radii[0], c);
    }

    #[test]
    fn optimizer_dominates_closed_form() {
        let vals: Vec<f64> = (0..400).map(|i| ((i * 53) % 97) as f64 * (1.0 + (i % 4) as f64)).collect();
        let t = table(Split::Tune, 4, vals);
        let closed = normalization_closed_form(&t).unwrap().normalized();
        let opt = optimize_alpha(&t, 0.05, 7).unwrap();
        assert!(alpha_objective(&t, &opt, 0.05).unwrap() <= alpha_objective(&t, &closed, 0.05).unwrap());
        assert_eq!(opt, optimize_alpha(&t, 0.05, 7).unwrap());
        let one = table(Split::Tune, 1, vec![1.0, 2.0]);
        assert_eq!(optimize_alpha(&one, 0.05, 0).unwrap().values, vec![1.0]);
    }

    #[test]
    fn splits_enforced() {
        let t = table(Split::Test, 1, vec![1.0]);
        assert!(abstraction_naive(&t, 0.1).is_err());
        assert!(normalization_closed_form(&t).is_err());
    }
}
