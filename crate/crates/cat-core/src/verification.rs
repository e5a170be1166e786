//! Offline verification of learning-enabled components and closed-loop systems.
//!
//! Every verdict calibrates a nonconformity score whose negativity implies the
//! property. A strictly negative quantile certifies; otherwise the sign-flipped
//! score is calibrated and a strictly negative flipped quantile refutes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cp_core::{ceil_rank, conformal_quantile, CalibrationScores, Quantile};
use crate::dataset::{Split, TrajectoryDataset};
use crate::error::{invalid, Result};
use crate::rng::Streams;
use crate::stl::{boolean_sat, robustness, Ext, Formula, Trace};

/// Target set for outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum OutputSet {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// `{y : h(y) <= 0}`; the score is `h(y)` rather than a distance.
    Sublevel { h: SublevelFn },
}

/// Closed-form sublevel functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SublevelFn {
    /// `|y - center|^2 - radius^2`.
    Quadratic { center: Vec<f64>, radius: f64 },
    /// `a^T y + b`.
    Affine { a: Vec<f64>, b: f64 },
}

impl SublevelFn {
    pub fn eval(&self, y: &[f64]) -> f64 {
        match self {
            SublevelFn::Quadratic { center, radius } => {
                y.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>() - radius * radius
            }
            SublevelFn::Affine { a, b } => a.iter().zip(y).map(|(a, y)| a * y).sum::<f64>() + b,
        }
    }
}

impl OutputSet {
    pub fn validate(&self) -> Result<()> {
        match self {
            OutputSet::Ball { center, radius } => {
                if !(*radius > 0.0) || center.is_empty() {
                    return Err(invalid("ball needs a nonempty center and a positive radius"));
                }
            }
            OutputSet::Box { lo, hi } => {
                if lo.len() != hi.len() || lo.is_empty() || lo.iter().zip(hi).any(|(l, h)| l > h) {
                    return Err(invalid("box bounds must have equal length with lo <= hi"));
                }
            }
            OutputSet::Sublevel { h: SublevelFn::Quadratic { radius, .. } } if !(*radius > 0.0) => {
                return Err(invalid("quadratic sublevel radius must be positive"));
            }
            OutputSet::Sublevel { .. } => {}
        }
        Ok(())
    }

    /// Signed Euclidean distance (negative inside) for Ball and Box, `h(y)` for Sublevel.
    pub fn score(&self, y: &[f64]) -> f64 {
        match self {
            OutputSet::Ball { center, radius } => {
                y.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt() - radius
            }
            OutputSet::Box { lo, hi } => {
                let mut out2 = 0.0;
                let mut depth = f64::INFINITY;
                for ((v, l), h) in y.iter().zip(lo).zip(hi) {
                    let gap = (l - v).max(v - h).max(0.0);
                    out2 += gap * gap;
                    depth = depth.min((v - l).min(h - v));
                }
                if out2 > 0.0 {
                    out2.sqrt()
                } else {
                    -depth
                }
            }
            OutputSet::Sublevel { h } => h.eval(y),
        }
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        self.score(y) <= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Certified,
    Refuted,
    Inconclusive,
}

impl Status {
    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Status::Certified => 0,
            Status::Refuted => 2,
            Status::Inconclusive => 3,
        }
    }
}

/// Which nonconformity score produced a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    SetDistance,
    SublevelValue,
    NegRobustness,
    MinTubeDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub status: Status,
    /// Quantile of the primary score; certified iff strictly negative.
    pub margin: Ext,
    /// Quantile of the sign-flipped score, computed when the primary is not negative.
    pub flipped_margin: Option<Ext>,
    pub delta: f64,
    pub k: usize,
    pub score: ScoreKind,
}

/// Conformal quantile over extended-real scores with the `+inf` augmentation.
pub fn ext_conformal_quantile(scores: &[Ext], delta: f64) -> Result<Ext> {
    if scores.is_empty() {
        return Err(crate::Error::EmptyScores);
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    let mut s = scores.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("extended reals are totally ordered"));
    let p = ceil_rank((s.len() + 1) as f64 * (1.0 - delta));
    Ok(if p > s.len() { Ext::PosInf } else { s[p.max(1) - 1] })
}

/// Verdict from primary scores, falling back to the sign-flipped scores.
pub fn verdict_from_scores(scores: &[Ext], delta: f64, kind: ScoreKind) -> Result<Verdict> {
    let margin = ext_conformal_quantile(scores, delta)?;
    let mut v = Verdict { status: Status::Inconclusive, margin, flipped_margin: None, delta, k: scores.len(), score: kind };
    if margin.is_negative() {
        v.status = Status::Certified;
    } else {
        let flipped: Vec<Ext> = scores.iter().map(|s| s.neg()).collect();
        let fm = ext_conformal_quantile(&flipped, delta)?;
        v.flipped_margin = Some(fm);
        if fm.is_negative() {
            v.status = Status::Refuted;
        }
    }
    Ok(v)
}

/// Draw `k` i.i.d. inputs and push them through the component.
pub fn sample_outputs<C, S>(component: C, mut sampler: S, rng: &mut ChaCha8Rng, k: usize) -> Vec<Vec<f64>>
where
    C: Fn(&[f64]) -> Vec<f64>,
    S: FnMut(&mut ChaCha8Rng) -> Vec<f64>,
{
    (0..k).map(|_| component(&sampler(rng))).collect()
}

/// Reachability of component outputs into `set`.
pub fn verify_lec_reachability(outputs: &[Vec<f64>], set: &OutputSet, delta: f64) -> Result<Verdict> {
    set.validate()?;
    let kind = match set {
        OutputSet::Sublevel { .. } => ScoreKind::SublevelValue,
        _ => ScoreKind::SetDistance,
    };
    let scores: Vec<Ext> = outputs.iter().map(|y| Ext::Finite(set.score(y))).collect();
    verdict_from_scores(&scores, delta, kind)
}

/// Predicate-logic specification over component outputs.
pub fn verify_lec_logic(outputs: &[Vec<f64>], spec: &Formula, delta: f64) -> Result<Verdict> {
    if !spec.is_propositional() {
        return Err(invalid("component specifications may not contain temporal operators"));
    }
    let scores = outputs
        .iter()
        .map(|y| {
            spec.check_dim(y.len())?;
            Ok(robustness(spec, &Trace::new(y.len(), y)?, 0)?.neg())
        })
        .collect::<Result<Vec<_>>>()?;
    verdict_from_scores(&scores, delta, ScoreKind::NegRobustness)
}

/// Extremum estimate: the maximum of `k` scores bounds a fresh score with
/// probability at least `1 - 1/(k+1)`.
pub fn estimate_extremum(outputs: &[f64]) -> Result<(f64, f64)> {
    let s = CalibrationScores::from_slice(outputs)?;
    Ok((s.max(), 1.0 / (s.len() + 1) as f64))
}

/// Closed-loop reachability: score `min_t dist(z_t, tube_t)`.
pub fn verify_leas_reachability(ds: &TrajectoryDataset, tube: &[OutputSet], delta: f64) -> Result<Verdict> {
    ds.require_split(&[Split::Calibrate], "closed-loop verification")?;
    if tube.len() < ds.len() {
        return Err(invalid(format!("tube has {} sets but trajectories have {} states", tube.len(), ds.len())));
    }
    for s in tube {
        s.validate()?;
    }
    let scores: Vec<Ext> = ds.traces().map(|tr| Ext::Finite(min_tube_distance(&tr, tube))).collect();
    verdict_from_scores(&scores, delta, ScoreKind::MinTubeDistance)
}

pub fn min_tube_distance(tr: &Trace<'_>, tube: &[OutputSet]) -> f64 {
    (0..tr.len()).map(|t| tube[t].score(tr.state(t))).fold(f64::INFINITY, f64::min)
}

/// Closed-loop STL specification: score `-rho(z, 0)`.
pub fn verify_leas_stl(ds: &TrajectoryDataset, spec: &Formula, delta: f64) -> Result<Verdict> {
    ds.require_split(&[Split::Calibrate], "closed-loop verification")?;
    spec.check_dim(ds.dim())?;
    let scores = (0..ds.count())
        .into_par_iter()
        .map(|i| Ok(robustness(spec, &ds.trace(i), 0)?.neg()))
        .collect::<Result<Vec<_>>>()?;
    verdict_from_scores(&scores, delta, ScoreKind::NegRobustness)
}

/// Largest `1 - delta` at which the augmented quantile of the scores
/// `-1{z |= spec}` equals `-1`.
pub fn smc_satisfaction_bound(ds: &TrajectoryDataset, spec: &Formula) -> Result<f64> {
    let sat = ds.traces().map(|tr| boolean_sat(spec, &tr, 0)).collect::<Result<Vec<_>>>()?;
    smc_bound_from_outcomes(&sat)
}

/// Line search over the attainable levels `j / (K+1)`.
pub fn smc_bound_from_outcomes(sat: &[bool]) -> Result<f64> {
    let scores = CalibrationScores::new(sat.iter().map(|s| if *s { -1.0 } else { 0.0 }).collect())?;
    let k1 = (scores.len() + 1) as f64;
    let hits = |j: usize| scores.augmented_quantile(j as f64 / k1) == Quantile::Finite(-1.0);
    if !hits(1) {
        return Ok(0.0);
    }
    // Bisection for the largest j with hits(j); hits is monotone in j.
    let (mut lo, mut hi) = (1, scores.len() + 1);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if hits(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Ok(lo as f64 / k1)
}

/// Radius `C` such that `max_t alpha_t |zhat_t - z_t| <= C` with probability
/// at least `1 - delta` for a fresh trajectory.
pub fn conformalize_estimator(estimates: &TrajectoryDataset, truth: &TrajectoryDataset, delta: f64, alpha: Option<&[f64]>) -> Result<Quantile> {
    if estimates.dim() != truth.dim() || estimates.len() != truth.len() || estimates.count() != truth.count() {
        return Err(invalid("estimate and ground-truth datasets must have identical shapes"));
    }
    if let Some(a) = alpha {
        if a.len() != truth.len() || a.iter().any(|v| !(*v > 0.0)) {
            return Err(invalid("estimator weights must be positive, one per time"));
        }
    }
    let scores: Vec<f64> = (0..truth.count())
        .map(|i| {
            let (e, z) = (estimates.trace(i), truth.trace(i));
            (0..z.len())
                .map(|t| {
                    let d = e.state(t).iter().zip(z.state(t)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    alpha.map_or(1.0, |a| a[t]) * d
                })
                .fold(0.0, f64::max)
        })
        .collect();
    conformal_quantile(&CalibrationScores::new(scores)?, delta)
}

/// Output of [`perceptual_abstraction`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerceptualBound {
    /// `sup_j C_j` over the grid.
    pub sup_radius: Quantile,
    /// `sup_j C_j + (L_p L_zhat + 1) epsilon`.
    pub bound: Quantile,
    pub grid_points: usize,
    pub spacing: f64,
}

/// Parameters for [`perceptual_abstraction`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptualConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub epsilon: f64,
    pub delta: f64,
    pub k_per_point: usize,
    /// Lipschitz constant of the sensor in the state; supplied by the user.
    pub lipschitz_sensor: f64,
    /// Lipschitz constant of the estimator; supplied by the user.
    pub lipschitz_estimator: f64,
    pub max_points: usize,
}

/// Grid covering `[lo, hi]` in which every point lies within `epsilon` of a node.
pub fn epsilon_net(lo: &[f64], hi: &[f64], epsilon: f64, max_points: usize) -> Result<(Vec<Vec<f64>>, f64)> {
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon must be positive"));
    }
    let n = lo.len();
    let spacing = 2.0 * epsilon / (n as f64).sqrt();
    let counts: Vec<usize> = lo.iter().zip(hi).map(|(l, h)| (((h - l) / spacing).ceil() as usize).max(1)).collect();
    let total = counts.iter().try_fold(1usize, |acc, c| acc.checked_mul(*c)).unwrap_or(usize::MAX);
    if total > max_points {
        return Err(invalid(format!("epsilon-net needs {total} points, above the cap of {max_points}; use a coarser epsilon")));
    }
    let mut pts = Vec::with_capacity(total);
    for mut idx in 0..total {
        let mut p = Vec::with_capacity(n);
        for d in 0..n {
            let j = idx % counts[d];
            idx /= counts[d];
            let w = (hi[d] - lo[d]) / counts[d] as f64;
            p.push(lo[d] + (j as f64 + 0.5) * w);
        }
        pts.push(p);
    }
    Ok((pts, spacing))
}

/// Uniform error bound for a perception pipeline over a box of states.
///
/// `sensor(z, rng)` draws a measurement and `estimator(y)` recovers the state.
pub fn perceptual_abstraction<S, E>(cfg: &PerceptualConfig, sensor: S, estimator: E, streams: &Streams) -> Result<PerceptualBound>
where
    S: Fn(&[f64], &mut ChaCha8Rng) -> Vec<f64> + Sync,
    E: Fn(&[f64]) -> Vec<f64> + Sync,
{
    if cfg.lo.len() != cfg.hi.len() || cfg.lo.is_empty() || cfg.lo.iter().zip(&cfg.hi).any(|(l, h)| l > h) {
        return Err(invalid("perception domain must be a nonempty box"));
    }
    if !(cfg.lipschitz_sensor >= 0.0 && cfg.lipschitz_estimator >= 0.0) {
        return Err(invalid("Lipschitz constants must be nonnegative"));
    }
    let (grid, spacing) = epsilon_net(&cfg.lo, &cfg.hi, cfg.epsilon, cfg.max_points)?;
    let radii = grid
        .par_iter()
        .enumerate()
        .map(|(j, z)| {
            let mut rng = streams.indexed("perception-point", j as u64);
            let scores: Vec<f64> = (0..cfg.k_per_point)
                .map(|_| {
                    let zhat = estimator(&sensor(z, &mut rng));
                    zhat.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
                })
                .collect();
            conformal_quantile(&CalibrationScores::new(scores)?, cfg.delta)
        })
        .collect::<Result<Vec<_>>>()?;
    let sup = radii.into_iter().fold(Quantile::Finite(0.0), Quantile::max);
    let slack = (cfg.lipschitz_sensor * cfg.lipschitz_estimator + 1.0) * cfg.epsilon;
    let bound = match sup {
        Quantile::Finite(c) => Quantile::Finite(c + slack),
        Quantile::Infinite => Quantile::Infinite,
    };
    Ok(PerceptualBound { sup_radius: sup, bound, grid_points: grid.len(), spacing })
}

/// Uniform draw from a box, for Monte-Carlo checks of perception bounds.
pub fn sample_box(rng: &mut ChaCha8Rng, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter().zip(hi).map(|(l, h)| l + (h - l) * rng.random::<f64>()).collect()
}
