//! Split-conformal quantiles.
//!
//! The central object is the `p`-th smallest calibration score with
//! `p = ceil((K+1)(1-delta))`, where rank `K+1` stands for an implicit `+inf`
//! element. The infinite element is never stored: a rank above `K` is reported
//! as [`Quantile::Infinite`].

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Snap tolerance used when a real-valued rank is within rounding error of an
/// integer.
const RANK_SNAP: f64 = 1e-9;

/// Bisection tolerance for the KL-divergence level maps.
const KL_TOL: f64 = 1e-9;

/// Outcome of a quantile query.
///
/// Variant order makes `Finite(_) < Infinite` under `PartialOrd`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value")]
pub enum Quantile {
    Finite(f64),
    Infinite,
}

impl Quantile {
    pub fn is_finite(&self) -> bool {
        matches!(self, Quantile::Finite(_))
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            Quantile::Finite(v) => Some(v),
            Quantile::Infinite => None,
        }
    }

    /// Value as an `f64`, mapping `Infinite` to `f64::INFINITY`.
    pub fn to_f64(&self) -> f64 {
        self.value().unwrap_or(f64::INFINITY)
    }

    /// Divide a finite value by a positive scale.
    pub fn div(&self, scale: f64) -> Quantile {
        match *self {
            Quantile::Finite(v) => Quantile::Finite(v / scale),
            Quantile::Infinite => Quantile::Infinite,
        }
    }

    pub fn max(self, other: Quantile) -> Quantile {
        if other > self {
            other
        } else {
            self
        }
    }
}

/// A validated multiset of finite nonconformity scores, kept sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationScores {
    sorted: Vec<f64>,
}

impl CalibrationScores {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyScores);
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(invalid(format!("calibration score {bad} is not finite")));
        }
        values.sort_unstable_by(f64::total_cmp);
        Ok(Self { sorted: values })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec())
    }

    /// Number of scores `K`.
    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Scores in non-decreasing order.
    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn max(&self) -> f64 {
        self.sorted[self.sorted.len() - 1]
    }

    /// The `p`-th smallest score (1-based); `Infinite` when `p > K`.
    pub fn order_statistic(&self, p: usize) -> Quantile {
        if p > self.sorted.len() {
            Quantile::Infinite
        } else {
            Quantile::Finite(self.sorted[p.max(1) - 1])
        }
    }

    /// Quantile at `level` over the scores augmented with `+inf`.
    pub fn augmented_quantile(&self, level: f64) -> Quantile {
        self.order_statistic(ceil_rank((self.len() + 1) as f64 * level))
    }

    /// Quantile at `level` over the scores alone.
    pub fn plain_quantile(&self, level: f64) -> Quantile {
        self.order_statistic(ceil_rank(self.len() as f64 * level).min(self.len()))
    }
}

/// Ceiling of a nonnegative real rank, snapping values within rounding error of
/// an integer onto that integer.
pub fn ceil_rank(x: f64) -> usize {
    if x <= 0.0 {
        return 0;
    }
    let r = x.round();
    if (x - r).abs() <= RANK_SNAP * x.max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must lie in (0,1), got {v}")))
    }
}

/// Rank `p = ceil((K+1)(1-delta))` of the conformal quantile.
pub fn conformal_rank(k: usize, delta: f64) -> usize {
    ceil_rank((k + 1) as f64 * (1.0 - delta))
}

/// Split-conformal quantile `Quantile_{1-delta}(R_1, ..., R_K, inf)`.
pub fn conformal_quantile(scores: &CalibrationScores, delta: f64) -> Result<Quantile> {
    check_unit("delta", delta)?;
    Ok(scores.order_statistic(conformal_rank(scores.len(), delta)))
}

/// Smallest `K` for which the conformal quantile at `delta` is finite.
pub fn min_calibration_size(delta: f64) -> Result<usize> {
    check_unit("delta", delta)?;
    let guess = ((1.0 - delta) / delta).ceil().max(1.0) as usize;
    let mut k = guess.saturating_sub(2).max(1);
    while conformal_rank(k, delta) > k {
        k += 1;
    }
    Ok(k)
}

/// Concentration bound used to correct the level for calibration-conditional
/// coverage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionalVariant {
    Hoeffding,
    Bernstein,
}

/// Corrected level for calibration-conditional coverage.
pub fn calibration_conditional_level(k: usize, delta: f64, beta: f64, variant: ConditionalVariant) -> f64 {
    let k = k as f64;
    let l = (1.0 / beta).ln();
    match variant {
        ConditionalVariant::Hoeffding => 1.0 - delta + (l / (2.0 * k)).sqrt(),
        ConditionalVariant::Bernstein => 1.0 - delta + (2.0 * delta * l / k).sqrt() + 2.0 * l / k,
    }
}

/// Result of a calibration-conditional quantile query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalQuantile {
    pub quantile: Quantile,
    pub level: f64,
    /// The corrected level reached 1, so no finite bound exists.
    pub level_saturated: bool,
}

/// Conformal quantile at the level corrected so that coverage holds with
/// probability at least `1 - beta` over the calibration draw.
pub fn calibration_conditional_quantile(
    scores: &CalibrationScores,
    delta: f64,
    beta: f64,
    variant: ConditionalVariant,
) -> Result<ConditionalQuantile> {
    check_unit("delta", delta)?;
    check_unit("beta", beta)?;
    let level = calibration_conditional_level(scores.len(), delta, beta, variant);
    let level_saturated = level >= 1.0;
    let quantile = if level_saturated { Quantile::Infinite } else { scores.augmented_quantile(level) };
    Ok(ConditionalQuantile { quantile, level, level_saturated })
}

/// Parameters of the Beta law followed by the conditional coverage.
pub fn beta_conditional_params(k: usize, delta: f64) -> Result<(u64, u64)> {
    check_unit("delta", delta)?;
    if k == 0 {
        return Err(invalid("K must be at least 1"));
    }
    let b2 = ((k + 1) as f64 * delta).floor() as u64;
    if b2 == 0 {
        return Err(invalid(format!("floor((K+1)*delta) = 0 for K={k}, delta={delta}; beta parameter must be positive")));
    }
    Ok((k as u64 + 1 - b2, b2))
}

/// f-divergence family bounding the calibration-to-deployment shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Divergence {
    Tv,
    Kl,
}

/// Bound `D_f(test, calibration) <= epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub divergence: Divergence,
    pub epsilon: f64,
}

impl ShiftSpec {
    pub fn tv(epsilon: f64) -> Self {
        Self { divergence: Divergence::Tv, epsilon }
    }

    pub fn kl(epsilon: f64) -> Self {
        Self { divergence: Divergence::Kl, epsilon }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(invalid(format!("shift epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }

    /// Worst-case coverage under the shift of a set with nominal coverage `beta`.
    pub fn g(&self, beta: f64) -> Result<f64> {
        let beta = beta.clamp(0.0, 1.0);
        match self.divergence {
            Divergence::Tv => Ok((beta - self.epsilon).max(0.0)),
            Divergence::Kl => kl_g(beta, self.epsilon),
        }
    }

    /// Generalised inverse `sup { beta : g(beta) <= tau }`.
    pub fn g_inv(&self, tau: f64) -> Result<f64> {
        let tau = tau.clamp(0.0, 1.0);
        match self.divergence {
            Divergence::Tv => Ok((tau + self.epsilon).min(1.0)),
            Divergence::Kl => kl_g_inv(tau, self.epsilon),
        }
    }
}

/// Bernoulli KL divergence `KL(z || b)`, the convex form `b f(z/b) + (1-b) f((1-z)/(1-b))`
/// with `f(t) = t ln t`.
fn kl_bern(z: f64, b: f64) -> f64 {
    fn term(p: f64, q: f64) -> f64 {
        if p <= 0.0 {
            0.0
        } else if q <= 0.0 {
            f64::INFINITY
        } else {
            p * (p / q).ln()
        }
    }
    term(z, b) + term(1.0 - z, 1.0 - b)
}

fn kl_g(beta: f64, eps: f64) -> Result<f64> {
    if beta <= 0.0 || kl_bern(0.0, beta) <= eps {
        return Ok(0.0);
    }
    // KL(z || beta) decreases on [0, beta] and vanishes at beta.
    let (mut lo, mut hi) = (0.0, beta);
    for _ in 0..200 {
        if hi - lo <= KL_TOL {
            return Ok(hi);
        }
        let mid = 0.5 * (lo + hi);
        let v = kl_bern(mid, beta);
        if v.is_nan() {
            return Err(Error::Numerical(format!("KL evaluation failed at z={mid}, beta={beta}")));
        }
        if v <= eps {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(Error::Numerical(format!("KL bisection for g({beta}) did not reach tolerance")))
}

fn kl_g_inv(tau: f64, eps: f64) -> Result<f64> {
    if tau >= 1.0 {
        return Ok(1.0);
    }
    // KL(tau || beta) increases on [tau, 1] and diverges at 1.
    let (mut lo, mut hi) = (tau, 1.0);
    for _ in 0..200 {
        if hi - lo <= KL_TOL {
            return Ok(hi);
        }
        let mid = 0.5 * (lo + hi);
        let v = kl_bern(tau, mid);
        if v.is_nan() {
            return Err(Error::Numerical(format!("KL evaluation failed at tau={tau}, beta={mid}")));
        }
        if v <= eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Numerical(format!("KL bisection for g_inv({tau}) did not reach tolerance")))
}

/// Miscoverage level `delta_tilde` after accounting for a distribution shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "delta_tilde")]
pub enum RobustLevel {
    Level(f64),
    /// `1 - delta_tilde >= 1`: the shift exhausts the confidence budget.
    Degenerate,
}

/// Tightened miscoverage level for shift-robust calibration.
pub fn robust_adjusted_level(k: usize, delta: f64, shift: &ShiftSpec) -> Result<RobustLevel> {
    check_unit("delta", delta)?;
    shift.validate()?;
    if k == 0 {
        return Err(invalid("K must be at least 1"));
    }
    let inflate = 1.0 + 1.0 / k as f64;
    let delta_n = 1.0 - shift.g(inflate * shift.g_inv(1.0 - delta)?)?;
    let delta_tilde = 1.0 - shift.g_inv(1.0 - delta_n)?;
    if 1.0 - delta_tilde >= 1.0 {
        Ok(RobustLevel::Degenerate)
    } else {
        Ok(RobustLevel::Level(delta_tilde))
    }
}

/// Shift-robust quantile `Quantile_{1-delta_tilde}(R_1, ..., R_K)`.
///
/// No `+inf` element is appended; the `(1 + 1/K)` inflation inside the level
/// plays that role.
pub fn robust_quantile(scores: &CalibrationScores, delta: f64, shift: &ShiftSpec) -> Result<Quantile> {
    match robust_adjusted_level(scores.len(), delta, shift)? {
        RobustLevel::Degenerate => Ok(Quantile::Infinite),
        RobustLevel::Level(dt) => Ok(scores.plain_quantile(1.0 - dt)),
    }
}

/// Online state of adaptive conformal prediction.
///
/// `delta_t` is deliberately left unclamped; see [`AdaptiveState::evaluation_level`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveState {
    pub delta_t: f64,
    pub gamma: f64,
    pub target_delta: f64,
    pub miss_history: Vec<u8>,
}

impl AdaptiveState {
    pub fn new(target_delta: f64, gamma: f64) -> Result<Self> {
        check_unit("target_delta", target_delta)?;
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid(format!("gamma must be positive, got {gamma}")));
        }
        Ok(Self { delta_t: target_delta, gamma, target_delta, miss_history: Vec::new() })
    }

    /// Level used to evaluate the quantile at step `t = history length`,
    /// clamped to `[1/(t+1), 1]`.
    pub fn evaluation_level(&self) -> f64 {
        let t = self.miss_history.len() as f64;
        (1.0 - self.delta_t).clamp(1.0 / (t + 1.0), 1.0)
    }

    /// Quantile of past scores at the current level, with `+inf` appended.
    pub fn quantile(&self, history: &[f64]) -> Result<Quantile> {
        if history.is_empty() {
            return Ok(Quantile::Infinite);
        }
        Ok(CalibrationScores::from_slice(history)?.augmented_quantile(self.evaluation_level()))
    }

    pub fn miss_rate(&self) -> f64 {
        if self.miss_history.is_empty() {
            return 0.0;
        }
        self.miss_history.iter().map(|&m| f64::from(m)).sum::<f64>() / self.miss_history.len() as f64
    }
}

/// `delta_{t+1} = delta_t + gamma (target - miss)`.
pub fn adaptive_update(state: &AdaptiveState, miss: bool) -> AdaptiveState {
    let mut next = state.clone();
    let m = f64::from(u8::from(miss));
    next.delta_t = state.delta_t + state.gamma * (state.target_delta - m);
    next.miss_history.push(u8::from(miss));
    next
}

/// Minimiser of the pinball loss `sum (level e+ + (1-level) e-)` over `q`.
///
/// The objective is piecewise linear with minimisers at the order statistic of
/// rank `ceil(K level)`; when `K level` is an integer `k < K` the whole segment
/// `[R_(k), R_(k+1)]` is optimal and its upper end is returned.
pub fn quantile_lp(scores: &CalibrationScores, level: f64) -> Result<f64> {
    check_unit("level", level)?;
    let k = scores.len();
    let x = k as f64 * level;
    let mut rank = ceil_rank(x).clamp(1, k);
    if (x - rank as f64).abs() <= RANK_SNAP * x.max(1.0) && rank < k {
        rank += 1;
    }
    Ok(scores.sorted()[rank - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cs(v: &[f64]) -> CalibrationScores {
        CalibrationScores::from_slice(v).unwrap()
    }

    #[test]
    fn footnote_example() {
        assert_eq!(conformal_quantile(&cs(&[1.0, 5.0, 5.0, 7.0]), 0.5).unwrap(), Quantile::Finite(5.0));
    }

    #[test]
    fn constant_scores() {
        assert_eq!(conformal_quantile(&cs(&[2.0; 10]), 0.1).unwrap(), Quantile::Finite(2.0));
    }

    #[test]
    fn too_few_scores_is_infinite() {
        let s: Vec<f64> = (0..10).map(f64::from).collect();
        assert_eq!(conformal_quantile(&cs(&s), 0.05).unwrap(), Quantile::Infinite);
    }

    #[test]
    fn nineteen_scores_give_max() {
        let s: Vec<f64> = (0..19).map(|i| ((i * 7919) % 101) as f64 / 101.0).collect();
        let max = s.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(conformal_quantile(&cs(&s), 0.05).unwrap(), Quantile::Finite(max));
    }

    #[test]
    fn argument_errors() {
        assert!(CalibrationScores::new(vec![]).is_err());
        assert!(CalibrationScores::new(vec![f64::NAN]).is_err());
        assert!(conformal_quantile(&cs(&[1.0]), 0.0).is_err());
        assert!(conformal_quantile(&cs(&[1.0]), 1.0).is_err());
    }

    #[test]
    fn min_sizes() {
        assert_eq!(min_calibration_size(0.05).unwrap(), 19);
        assert_eq!(min_calibration_size(0.5).unwrap(), 1);
        assert_eq!(min_calibration_size(0.1).unwrap(), 9);
        assert_eq!(min_calibration_size(0.005).unwrap(), 199);
    }

    #[test]
    fn conditional_levels() {
        let h = calibration_conditional_level(1000, 0.05, 0.01, ConditionalVariant::Hoeffding);
        let b = calibration_conditional_level(1000, 0.05, 0.01, ConditionalVariant::Bernstein);
        assert!((h - 0.99799).abs() < 1e-5, "{h}");
        assert!((b - 0.98067).abs() < 1e-5, "{b}");
        let s: Vec<f64> = (0..10).map(f64::from).collect();
        for v in [ConditionalVariant::Hoeffding, ConditionalVariant::Bernstein] {
            let r = calibration_conditional_quantile(&cs(&s), 0.05, 0.01, v).unwrap();
            assert_eq!(r.quantile, Quantile::Infinite);
            assert!(r.level_saturated);
        }
    }

    #[test]
    fn beta_params() {
        assert_eq!(beta_conditional_params(19, 0.05).unwrap(), (19, 1));
        assert_eq!(beta_conditional_params(1000, 0.05).unwrap(), (951, 50));
        assert!(beta_conditional_params(100, 0.005).is_err());
    }

    #[test]
    fn tv_levels() {
        let lv = |k, d, e| robust_adjusted_level(k, d, &ShiftSpec::tv(e)).unwrap();
        match lv(100, 0.05, 0.0) {
            RobustLevel::Level(d) => assert!((d - 0.0405).abs() < 1e-12, "{d}"),
            other => panic!("{other:?}"),
        }
        match lv(700, 0.2, 0.129) {
            RobustLevel::Level(d) => assert!((d - 0.069673).abs() < 1e-5, "{d}"),
            other => panic!("{other:?}"),
        }
        assert_eq!(lv(100, 0.05, 0.95), RobustLevel::Degenerate);
    }

    #[test]
    fn kl_maps_are_consistent() {
        let s = ShiftSpec::kl(0.05);
        for &b in &[0.3, 0.6, 0.9, 0.99] {
            let g = s.g(b).unwrap();
            assert!(g < b);
            assert!((kl_bern(g, b) - 0.05).abs() < 1e-6);
            let back = s.g_inv(g).unwrap();
            assert!((back - b).abs() < 1e-6, "{b} -> {g} -> {back}");
        }
        let zero = ShiftSpec::kl(0.0);
        assert!((zero.g(0.7).unwrap() - 0.7).abs() < 1e-8);
        assert!((zero.g_inv(0.7).unwrap() - 0.7).abs() < 1e-8);
    }

    #[test]
    fn adaptive_examples() {
        let s = AdaptiveState { delta_t: 0.05, gamma: 0.01, target_delta: 0.05, miss_history: vec![] };
        assert!((adaptive_update(&s, true).delta_t - 0.0405).abs() < 1e-15);
        assert!((adaptive_update(&s, false).delta_t - 0.0505).abs() < 1e-15);
    }

    #[test]
    fn lp_examples() {
        let s = cs(&[1.0, 2.0, 3.0, 4.0]);
        let level = (1.0 + 0.25) * (1.0 - 0.3);
        assert_eq!(quantile_lp(&s, level).unwrap(), 4.0);
        assert_eq!(conformal_quantile(&s, 0.3).unwrap(), Quantile::Finite(4.0));
        assert_eq!(quantile_lp(&cs(&[3.0; 7]), 0.42).unwrap(), 3.0);
    }

    #[test]
    fn rank_snapping() {
        assert_eq!(conformal_rank(19, 0.05), 19);
        assert_eq!(conformal_rank(99, 0.1), 90);
        assert_eq!(ceil_rank(3.5), 4);
        assert_eq!(ceil_rank(0.0), 0);
    }
}
