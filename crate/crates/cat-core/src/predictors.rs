//! Trajectory forecasters.
//!
//! A predictor maps an observed prefix `z_0..z_t` to forecasts `z_{t+1|t}..z_{T|t}`.
//! Two families are provided: constant-velocity extrapolation and ridge
//! autoregression fitted on a training split. [`StaticRidge`] covers
//! input-to-output components that are not trajectory based.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{Split, TrajectoryDataset};
use crate::error::{invalid, Error, Result};
use crate::stl::Trace;

/// Largest supported autoregressive order.
pub const MAX_ORDER: usize = 10;

/// Predictor family and hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorSpec {
    ConstantVelocity,
    RidgeAr { order: usize, lambda: f64 },
}

/// A fitted predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorModel {
    spec: PredictorSpec,
    dim: usize,
    /// `dim x (order*dim + 1)` coefficients, intercept last; RidgeAr only.
    coef: Option<DMatrix<f64>>,
}

/// Forecasts `z_{t+1|t}, ..., z_{T|t}` from a prefix ending at `base_time = t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBundle {
    pub base_time: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl PredictionBundle {
    /// Number of predicted states (`T - t`).
    pub fn steps(&self) -> usize {
        self.data.len() / self.dim
    }

    /// Last predicted time `T`.
    pub fn final_time(&self) -> usize {
        self.base_time + self.steps()
    }

    /// Prediction for absolute time `tau > base_time`.
    pub fn at(&self, tau: usize) -> &[f64] {
        let k = tau - self.base_time - 1;
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    /// Observed prefix followed by the forecasts.
    pub fn splice(&self, prefix: &Trace<'_>) -> Vec<f64> {
        let mut out = prefix.data()[..(self.base_time + 1) * self.dim].to_vec();
        out.extend_from_slice(&self.data);
        out
    }
}

/// One-step forecasts `z_{tau|tau-1}` for `tau = first, ..., L-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneStepPredictions {
    pub first: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl OneStepPredictions {
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, tau: usize) -> &[f64] {
        let k = tau - self.first;
        &self.data[k * self.dim..(k + 1) * self.dim]
    }
}

impl PredictorModel {
    pub fn constant_velocity(dim: usize) -> Self {
        Self { spec: PredictorSpec::ConstantVelocity, dim, coef: None }
    }

    pub fn spec(&self) -> PredictorSpec {
        self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Prefix length needed before a forecast can be made.
    pub fn order(&self) -> usize {
        match self.spec {
            PredictorSpec::ConstantVelocity => 1,
            PredictorSpec::RidgeAr { order, .. } => order,
        }
    }

    pub fn coefficients(&self) -> Option<&DMatrix<f64>> {
        self.coef.as_ref()
    }

    /// Iterated rollout from the prefix `z_0..z_t` up to time `horizon`.
    pub fn predict_openloop(&self, prefix: &Trace<'_>, horizon: usize) -> Result<PredictionBundle> {
        self.check_prefix(prefix)?;
        let t = prefix.len() - 1;
        if horizon <= t {
            return Err(invalid(format!("horizon {horizon} must exceed the prefix end {t}")));
        }
        let n = self.dim;
        let steps = horizon - t;
        let mut data = Vec::with_capacity(steps * n);
        match self.spec {
            PredictorSpec::ConstantVelocity => {
                let last = prefix.state(t);
                let vel: Vec<f64> = if t >= 1 {
                    last.iter().zip(prefix.state(t - 1)).map(|(a, b)| a - b).collect()
                } else {
                    vec![0.0; n]
                };
                for k in 1..=steps {
                    data.extend(last.iter().zip(&vel).map(|(z, v)| z + k as f64 * v));
                }
            }
            PredictorSpec::RidgeAr { order, .. } => {
                let coef = self.coef.as_ref().expect("ridge model is fitted");
                // Sliding window, most recent state first.
                let mut window: Vec<f64> = (0..order).flat_map(|j| prefix.state(t - j).to_vec()).collect();
                for _ in 0..steps {
                    let next = ar_step(coef, &window);
                    data.extend_from_slice(&next);
                    window.rotate_right(n);
                    window[..n].copy_from_slice(&next);
                }
            }
        }
        Ok(PredictionBundle { base_time: t, dim: n, data })
    }

    /// One-step forecasts along a fully observed trajectory, each from the true prefix.
    pub fn predict_onestep_series(&self, traj: &Trace<'_>) -> Result<OneStepPredictions> {
        let m = self.order().max(1);
        if traj.len() < m + 1 {
            return Err(Error::TraceTooShort { required: m + 1, actual: traj.len() });
        }
        self.check_dim(traj)?;
        let n = self.dim;
        let mut data = Vec::with_capacity((traj.len() - m) * n);
        for tau in m..traj.len() {
            match self.spec {
                PredictorSpec::ConstantVelocity => {
                    let last = traj.state(tau - 1);
                    if tau >= 2 {
                        data.extend(last.iter().zip(traj.state(tau - 2)).map(|(a, b)| 2.0 * a - b));
                    } else {
                        data.extend_from_slice(last);
                    }
                }
                PredictorSpec::RidgeAr { order, .. } => {
                    let window: Vec<f64> = (0..order).flat_map(|j| traj.state(tau - 1 - j).to_vec()).collect();
                    data.extend(ar_step(self.coef.as_ref().expect("ridge model is fitted"), &window));
                }
            }
        }
        Ok(OneStepPredictions { first: m, dim: n, data })
    }

    fn check_dim(&self, tr: &Trace<'_>) -> Result<()> {
        if tr.dim() != self.dim {
            return Err(invalid(format!("predictor expects dimension {}, got {}", self.dim, tr.dim())));
        }
        Ok(())
    }

    fn check_prefix(&self, prefix: &Trace<'_>) -> Result<()> {
        self.check_dim(prefix)?;
        if prefix.len() < self.order() {
            return Err(Error::TraceTooShort { required: self.order(), actual: prefix.len() });
        }
        Ok(())
    }
}

fn ar_step(coef: &DMatrix<f64>, window: &[f64]) -> Vec<f64> {
    let (rows, cols) = coef.shape();
    (0..rows)
        .map(|r| (0..cols - 1).map(|c| coef[(r, c)] * window[c]).sum::<f64>() + coef[(r, cols - 1)])
        .collect()
}

/// Fit a predictor on a training split.
pub fn fit(train: &TrajectoryDataset, spec: PredictorSpec) -> Result<PredictorModel> {
    train.require_split(&[Split::Train], "predictor fitting")?;
    match spec {
        PredictorSpec::ConstantVelocity => Ok(PredictorModel::constant_velocity(train.dim())),
        PredictorSpec::RidgeAr { order, lambda } => {
            if order == 0 || order > MAX_ORDER {
                return Err(invalid(format!("autoregressive order must lie in 1..={MAX_ORDER}, got {order}")));
            }
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(invalid(format!("ridge parameter must be finite and >= 0, got {lambda}")));
            }
            if train.len() <= order {
                return Err(invalid(format!("trajectory length {} must exceed the order {order}", train.len())));
            }
            let n = train.dim();
            let p = order * n + 1;
            let rows = train.count() * (train.len() - order);
            let mut phi = DMatrix::<f64>::zeros(rows, p);
            let mut y = DMatrix::<f64>::zeros(rows, n);
            let mut r = 0;
            for tr in train.traces() {
                for t in order - 1..train.len() - 1 {
                    for j in 0..order {
                        for (c, v) in tr.state(t - j).iter().enumerate() {
                            phi[(r, j * n + c)] = *v;
                        }
                    }
                    phi[(r, p - 1)] = 1.0;
                    for (c, v) in tr.state(t + 1).iter().enumerate() {
                        y[(r, c)] = *v;
                    }
                    r += 1;
                }
            }
            let w = ridge_solve(&phi, &y, lambda, true)?;
            Ok(PredictorModel { spec, dim: n, coef: Some(w.transpose()) })
        }
    }
}

/// Solve `min |phi w - y|^2 + lambda |w|^2` via a Cholesky factorisation of
/// the normal equations. With `free_last`, the last column (intercept) is not
/// penalised.
pub fn ridge_solve(phi: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64, free_last: bool) -> Result<DMatrix<f64>> {
    let mut gram = phi.transpose() * phi;
    let p = gram.nrows();
    let penalised = if free_last { p - 1 } else { p };
    for i in 0..penalised {
        gram[(i, i)] += lambda;
    }
    let rhs = phi.transpose() * y;
    let scale = (0..p).map(|i| gram[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let chol = gram.clone().cholesky().filter(|c| {
        let d = c.l_dirty().diagonal();
        d.iter().all(|v| v * v > 1e-12 * scale)
    });
    match chol {
        Some(c) => Ok(c.solve(&rhs)),
        None => Err(Error::Numerical(format!(
            "normal equations are singular with lambda = {lambda}; use a positive ridge parameter"
        ))),
    }
}

/// Ridge regression on quadratic features for static input-to-output maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticRidge {
    inputs: usize,
    /// `outputs x features` weights.
    weights: DMatrix<f64>,
}

impl StaticRidge {
    fn features(x: &[f64]) -> Vec<f64> {
        let mut f = Vec::with_capacity(1 + x.len() + x.len() * (x.len() + 1) / 2);
        f.extend_from_slice(x);
        for i in 0..x.len() {
            for j in i..x.len() {
                f.push(x[i] * x[j]);
            }
        }
        f.push(1.0);
        f
    }

    /// Model with all weights zero, as before any training.
    pub fn untrained(inputs: usize, outputs: usize) -> Self {
        let nf = Self::features(&vec![0.0; inputs]).len();
        Self { inputs, weights: DMatrix::zeros(outputs, nf) }
    }

    pub fn fit(x: &[Vec<f64>], y: &[Vec<f64>], lambda: f64) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(invalid("regression needs equally many nonzero inputs and outputs"));
        }
        let inputs = x[0].len();
        let outputs = y[0].len();
        let rows: Vec<Vec<f64>> = x.iter().map(|r| Self::features(r)).collect();
        let phi = DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
        let ym = DMatrix::from_fn(y.len(), outputs, |i, j| y[i][j]);
        let w = ridge_solve(&phi, &ym, lambda, true)?;
        Ok(Self { inputs, weights: w.transpose() })
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        let f = DVector::from_vec(Self::features(x));
        (&self.weights * f).iter().copied().collect()
    }
}
