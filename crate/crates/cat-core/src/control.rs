//! Constraint-tightened planning and receding-horizon control for linear systems.
//!
//! A safety constraint `c(x, e) >= 0` that is `L`-Lipschitz in the environment
//! state `e` is enforced on a prediction `e_hat` with radius `C` as
//! `c(x, e_hat) >= L * C`; whenever `|e - e_hat| <= C` this implies `c(x, e) >= 0`.
//! Optimal control problems are solved by an exterior penalty method with
//! projected gradient steps on the input box.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::abstraction::{Abstraction, Mode};
use crate::cp_core::Quantile;
use crate::error::{invalid, Error, Result};
use crate::predictors::{PredictionBundle, PredictorModel};
use crate::stl::Trace;

/// `x_{k+1} = A x_k + B u_k` with box-constrained inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, u_lo: Vec<f64>, u_hi: Vec<f64>) -> Result<Self> {
        if !a.is_square() || b.nrows() != a.nrows() || u_lo.len() != b.ncols() || u_hi.len() != b.ncols() {
            return Err(invalid("system matrices and input bounds have inconsistent dimensions"));
        }
        if u_lo.iter().zip(&u_hi).any(|(l, h)| l > h) {
            return Err(invalid("input bounds must satisfy lo <= hi"));
        }
        Ok(Self { a, b, u_lo, u_hi })
    }

    /// Planar double integrator with state `(px, py, vx, vy)` and step `dt`.
    pub fn double_integrator_2d(dt: f64, u_max: f64) -> Self {
        #[rustfmt::skip]
        let a = DMatrix::from_row_slice(4, 4, &[
            1.0, 0.0, dt, 0.0,
            0.0, 1.0, 0.0, dt,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        ]);
        let h = 0.5 * dt * dt;
        #[rustfmt::skip]
        let b = DMatrix::from_row_slice(4, 2, &[
            h, 0.0,
            0.0, h,
            dt, 0.0,
            0.0, dt,
        ]);
        Self { a, b, u_lo: vec![-u_max; 2], u_hi: vec![u_max; 2] }
    }

    pub fn nx(&self) -> usize {
        self.a.nrows()
    }

    pub fn nu(&self) -> usize {
        self.b.ncols()
    }

    /// States `x_0..x_H` for inputs `u_0..u_{H-1}` (row-major).
    pub fn rollout(&self, x0: &[f64], inputs: &[f64]) -> Vec<f64> {
        Dense::new(self).rollout(x0, inputs)
    }

    fn project(&self, u: &mut [f64]) {
        let m = self.nu();
        for (i, v) in u.iter_mut().enumerate() {
            *v = v.clamp(self.u_lo[i % m], self.u_hi[i % m]);
        }
    }
}

/// Row-major copies of the system matrices for the inner solver loop.
struct Dense {
    n: usize,
    m: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Dense {
    fn new(sys: &LinearSystem) -> Self {
        let (n, m) = (sys.nx(), sys.nu());
        let a = (0..n * n).map(|k| sys.a[(k / n, k % n)]).collect();
        let b = (0..n * m).map(|k| sys.b[(k / m, k % m)]).collect();
        Self { n, m, a, b }
    }

    fn rollout(&self, x0: &[f64], u: &[f64]) -> Vec<f64> {
        let (n, m) = (self.n, self.m);
        let steps = u.len() / m;
        let mut xs = Vec::with_capacity((steps + 1) * n);
        xs.extend_from_slice(x0);
        for k in 0..steps {
            for i in 0..n {
                let mut v = 0.0;
                for j in 0..n {
                    v += self.a[i * n + j] * xs[k * n + j];
                }
                for j in 0..m {
                    v += self.b[i * m + j] * u[k * m + j];
                }
                xs.push(v);
            }
        }
        xs
    }
}

/// Shape of `c(x, e)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintForm {
    /// Collision avoidance `|x[sel] - e| - d >= 0`; `L = 1`.
    Distance { sel: Vec<usize>, d: f64 },
    /// Reach `eps - |x[sel] - e| >= 0`; `L = 1`.
    Reach { sel: Vec<usize>, eps: f64 },
    /// `a_x^T x + a_e^T e + b >= 0`; `L = |a_e|`.
    Affine { a_x: Vec<f64>, a_e: Vec<f64>, b: f64 },
}

fn dist(x: &[f64], sel: &[usize], e: &[f64]) -> f64 {
    sel.iter().zip(e).map(|(i, v)| (x[*i] - v) * (x[*i] - v)).sum::<f64>().sqrt()
}

impl ConstraintForm {
    /// Lipschitz constant of `c` in its environment argument.
    pub fn lipschitz(&self) -> f64 {
        match self {
            ConstraintForm::Distance { .. } | ConstraintForm::Reach { .. } => 1.0,
            ConstraintForm::Affine { a_e, .. } => a_e.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }

    /// `c(x, e)`.
    pub fn value(&self, x: &[f64], e: &[f64]) -> f64 {
        match self {
            ConstraintForm::Distance { sel, d } => dist(x, sel, e) - d,
            ConstraintForm::Reach { sel, eps } => eps - dist(x, sel, e),
            ConstraintForm::Affine { a_x, a_e, b } => {
                a_x.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + a_e.iter().zip(e).map(|(a, v)| a * v).sum::<f64>() + b
            }
        }
    }

    /// `c(x, e_hat) - L * C`; nonnegative implies `c(x, e) >= 0` for all `|e - e_hat| <= C`.
    pub fn tightened(&self, x: &[f64], e_hat: &[f64], radius: f64) -> f64 {
        self.value(x, e_hat) - self.lipschitz() * radius
    }

    /// Adds `w * grad_x c(x, e)` to `g`.
    fn add_grad(&self, x: &[f64], e: &[f64], w: f64, g: &mut [f64]) {
        match self {
            ConstraintForm::Distance { sel, .. } | ConstraintForm::Reach { sel, .. } => {
                let r = dist(x, sel, e);
                if r < 1e-12 {
                    return;
                }
                let sign = if matches!(self, ConstraintForm::Distance { .. }) { 1.0 } else { -1.0 };
                for (i, v) in sel.iter().zip(e) {
                    g[*i] += w * sign * (x[*i] - v) / r;
                }
            }
            ConstraintForm::Affine { a_x, .. } => {
                for (gi, a) in g.iter_mut().zip(a_x) {
                    *gi += w * a;
                }
            }
        }
    }

    fn check(&self, nx: usize, ne: usize) -> Result<()> {
        let ok = match self {
            ConstraintForm::Distance { sel, d } => sel.len() == ne && sel.iter().all(|i| *i < nx) && *d >= 0.0,
            ConstraintForm::Reach { sel, eps } => sel.len() == ne && sel.iter().all(|i| *i < nx) && *eps >= 0.0,
            ConstraintForm::Affine { a_x, a_e, .. } => a_x.len() == nx && a_e.len() == ne,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("constraint dimensions do not match the system and environment"))
        }
    }
}

/// One tightened constraint `c(x_time, e_hat) >= L * radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyConstraint {
    pub form: ConstraintForm,
    /// Absolute time index of the constrained state.
    pub time: usize,
    pub e_hat: Vec<f64>,
    pub radius: f64,
}

impl SafetyConstraint {
    pub fn slack(&self, x: &[f64]) -> f64 {
        self.form.tightened(x, &self.e_hat, self.radius)
    }
}

/// Goal term `weight * |x[sel] - target|` (or its square).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalTerm {
    pub sel: Vec<usize>,
    pub target: Vec<f64>,
    pub weight: f64,
    pub squared: bool,
}

impl GoalTerm {
    fn value(&self, x: &[f64]) -> f64 {
        let d2: f64 = self.sel.iter().zip(&self.target).map(|(i, t)| (x[*i] - t) * (x[*i] - t)).sum();
        if self.squared {
            self.weight * d2
        } else {
            self.weight * (d2 + 1e-12).sqrt()
        }
    }

    fn add_grad(&self, x: &[f64], g: &mut [f64]) {
        let d2: f64 = self.sel.iter().zip(&self.target).map(|(i, t)| (x[*i] - t) * (x[*i] - t)).sum();
        let scale = if self.squared { 2.0 * self.weight } else { self.weight / (d2 + 1e-12).sqrt() };
        for (i, t) in self.sel.iter().zip(&self.target) {
            g[*i] += scale * (x[*i] - t);
        }
    }
}

/// `input_weight * sum |u_k|^2` plus optional terminal and per-stage goal terms.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Cost {
    pub input_weight: f64,
    pub terminal: Option<GoalTerm>,
    pub stage: Option<GoalTerm>,
}

impl Cost {
    pub fn evaluate(&self, states: &[f64], inputs: &[f64], n: usize) -> f64 {
        let steps = states.len() / n - 1;
        let mut c = self.input_weight * inputs.iter().map(|u| u * u).sum::<f64>();
        if let Some(g) = &self.stage {
            c += (1..=steps).map(|k| g.value(&states[k * n..(k + 1) * n])).sum::<f64>();
        }
        if let Some(g) = &self.terminal {
            c += g.value(&states[steps * n..]);
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub mu_start: f64,
    pub mu_max: f64,
    /// Feasibility certificate threshold on tightened constraints.
    pub tolerance: f64,
    /// Interior margin targeted by the penalty.
    pub margin: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iterations: 5000, mu_start: 10.0, mu_max: 1e6, tolerance: 1e-6, margin: 1e-4 }
    }
}

/// Finite-horizon problem starting at absolute time `t0` from state `x0`.
#[derive(Debug, Clone)]
pub struct Ocp<'a> {
    pub system: &'a LinearSystem,
    pub x0: &'a [f64],
    pub t0: usize,
    /// Number of inputs `H`.
    pub steps: usize,
    pub constraints: &'a [SafetyConstraint],
    pub cost: &'a Cost,
    pub warm_start: Option<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub inputs: Vec<f64>,
    pub states: Vec<f64>,
    pub cost: f64,
    /// Largest violation `max(0, -tightened)` over the constraints.
    pub max_violation: f64,
    pub iterations: usize,
    pub feasible: bool,
}

struct Objective<'a> {
    ocp: &'a Ocp<'a>,
    dense: Dense,
    margin: f64,
}

impl Objective<'_> {
    fn local(&self, c: &SafetyConstraint) -> usize {
        c.time - self.ocp.t0
    }

    fn value(&self, u: &[f64], mu: f64) -> f64 {
        let n = self.dense.n;
        let xs = self.dense.rollout(self.ocp.x0, u);
        let mut j = self.ocp.cost.evaluate(&xs, u, n);
        for c in self.ocp.constraints {
            let k = self.local(c);
            let v = (self.margin - c.slack(&xs[k * n..(k + 1) * n])).max(0.0);
            j += mu * v * v;
        }
        j
    }

    /// Gradient by the adjoint recursion `lam_k = dJ/dx_k + A^T lam_{k+1}`.
    fn gradient(&self, u: &[f64], mu: f64) -> Vec<f64> {
        let (n, m) = (self.dense.n, self.dense.m);
        let steps = u.len() / m;
        let xs = self.dense.rollout(self.ocp.x0, u);
        let mut dx = vec![0.0; (steps + 1) * n];
        let cost = self.ocp.cost;
        if let Some(g) = &cost.stage {
            for k in 1..=steps {
                g.add_grad(&xs[k * n..(k + 1) * n], &mut dx[k * n..(k + 1) * n]);
            }
        }
        if let Some(g) = &cost.terminal {
            g.add_grad(&xs[steps * n..], &mut dx[steps * n..]);
        }
        for c in self.ocp.constraints {
            let k = self.local(c);
            let x = &xs[k * n..(k + 1) * n];
            let v = (self.margin - c.slack(x)).max(0.0);
            if v > 0.0 {
                c.form.add_grad(x, &c.e_hat, -2.0 * mu * v, &mut dx[k * n..(k + 1) * n]);
            }
        }
        let mut grad = vec![0.0; u.len()];
        let mut lam = dx[steps * n..].to_vec();
        for k in (0..steps).rev() {
            for j in 0..m {
                let mut s = 2.0 * cost.input_weight * u[k * m + j];
                for i in 0..n {
                    s += self.dense.b[i * m + j] * lam[i];
                }
                grad[k * m + j] = s;
            }
            let mut next = dx[k * n..(k + 1) * n].to_vec();
            for (j, nj) in next.iter_mut().enumerate() {
                for i in 0..n {
                    *nj += self.dense.a[i * n + j] * lam[i];
                }
            }
            lam = next;
        }
        grad
    }

    fn violation(&self, u: &[f64]) -> f64 {
        let n = self.dense.n;
        let xs = self.dense.rollout(self.ocp.x0, u);
        self.ocp
            .constraints
            .iter()
            .map(|c| {
                let k = self.local(c);
                (-c.slack(&xs[k * n..(k + 1) * n])).max(0.0)
            })
            .fold(0.0, f64::max)
    }
}

/// Solve an [`Ocp`]; the returned solution reports whether the tightened
/// constraints are met within the tolerance.
pub fn solve(ocp: &Ocp<'_>, opts: &SolverOptions) -> Result<Solution> {
    let sys = ocp.system;
    let m = sys.nu();
    if ocp.x0.len() != sys.nx() || ocp.steps == 0 {
        return Err(invalid("initial state dimension or horizon is invalid"));
    }
    for c in ocp.constraints {
        c.form.check(sys.nx(), c.e_hat.len())?;
        if c.time <= ocp.t0 || c.time > ocp.t0 + ocp.steps {
            return Err(invalid(format!("constraint time {} outside the horizon {}..={}", c.time, ocp.t0 + 1, ocp.t0 + ocp.steps)));
        }
        if !c.radius.is_finite() || c.radius < 0.0 {
            return Err(invalid("constraint radii must be finite and nonnegative"));
        }
    }
    let obj = Objective { ocp, dense: Dense::new(sys), margin: opts.margin };
    let mut u = match ocp.warm_start {
        Some(w) if w.len() == ocp.steps * m => w.to_vec(),
        _ => vec![0.0; ocp.steps * m],
    };
    sys.project(&mut u);
    let mut mu = opts.mu_start;
    let mut iterations = 0;
    let mut step = 1.0;
    let stages = ((opts.mu_max / opts.mu_start).log10().ceil().max(0.0) as usize) + 1;
    let per_stage = (opts.max_iterations / stages).max(1);
    loop {
        let stage_budget = per_stage.min(opts.max_iterations.saturating_sub(iterations));
        let mut j = obj.value(&u, mu);
        for _ in 0..stage_budget {
            iterations += 1;
            let g = obj.gradient(&u, mu);
            let mut accepted = false;
            let mut moved = 0.0f64;
            for _ in 0..60 {
                let mut cand: Vec<f64> = u.iter().zip(&g).map(|(a, b)| a - step * b).collect();
                sys.project(&mut cand);
                let d: Vec<f64> = cand.iter().zip(&u).map(|(a, b)| a - b).collect();
                let lin: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
                let sq: f64 = d.iter().map(|v| v * v).sum();
                let jc = obj.value(&cand, mu);
                if jc <= j + lin + sq / (2.0 * step) + 1e-15 * j.abs() {
                    moved = d.iter().fold(0.0, |a, v| a.max(v.abs()));
                    u = cand;
                    j = jc;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            step = (step * 2.0).min(1e6);
            if !accepted || moved < 1e-10 {
                break;
            }
        }
        if obj.violation(&u) <= opts.tolerance || mu >= opts.mu_max || iterations >= opts.max_iterations {
            break;
        }
        mu = (mu * 10.0).min(opts.mu_max);
        step = step.min(1.0 / mu);
    }
    let states = sys.rollout(ocp.x0, &u);
    let max_violation = obj.violation(&u);
    Ok(Solution {
        cost: ocp.cost.evaluate(&states, &u, sys.nx()),
        inputs: u,
        states,
        max_violation,
        iterations,
        feasible: max_violation <= opts.tolerance,
    })
}

/// Tightened constraints for every (time, agent) region of an abstraction.
pub fn constraints_from_abstraction(
    form: &ConstraintForm,
    regions: &Abstraction,
    predictions: &PredictionBundle,
    times: impl Iterator<Item = usize>,
) -> Result<Vec<SafetyConstraint>> {
    let mut out = Vec::new();
    for tau in times {
        for (a, r) in regions.agents.iter().enumerate() {
            let radius = match regions.radius(tau, a) {
                Some(Quantile::Finite(c)) => c,
                Some(Quantile::Infinite) => {
                    return Err(invalid(format!("prediction region at time {tau} is unbounded; more calibration data is needed")))
                }
                None => return Err(invalid(format!("no prediction region at time {tau}"))),
            };
            out.push(SafetyConstraint { form: form.clone(), time: tau, e_hat: predictions.at(tau)[r.clone()].to_vec(), radius });
        }
    }
    Ok(out)
}

/// Open-loop plan from `x0` over `T` steps; fails with [`Error::Infeasible`]
/// if the tightened constraints cannot be met.
pub fn plan_open_loop(
    system: &LinearSystem,
    x0: &[f64],
    constraints: &[SafetyConstraint],
    cost: &Cost,
    horizon: usize,
    opts: &SolverOptions,
) -> Result<Solution> {
    let ocp = Ocp { system, x0, t0: 0, steps: horizon, constraints, cost, warm_start: None };
    let sol = solve(&ocp, opts)?;
    if !sol.feasible {
        return Err(Error::Infeasible { max_violation: sol.max_violation });
    }
    Ok(sol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonMode {
    Receding,
    Shrinking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Feasible,
    /// Infeasible solve whose inputs were applied with slack accepted.
    Soft,
    /// Infeasible solve with slack disabled; the best-effort inputs were applied.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub t: usize,
    pub status: StepStatus,
    pub max_violation: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOptions {
    pub horizon: usize,
    pub mode: HorizonMode,
    pub slack: bool,
    pub solver: SolverOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlEpisodeReport {
    pub inputs: Vec<f64>,
    pub states: Vec<f64>,
    /// `min` over agents of `c(x_t, e_t)` for `t = 1..T`.
    pub constraint_values: Vec<f64>,
    pub satisfied: bool,
    pub always_feasible: bool,
    pub cost: f64,
    pub log: Vec<StepLog>,
}

/// Receding-horizon episode against a realised environment trajectory.
///
/// At each `t` the environment prefix `e_0..e_t` is observed, forecasts
/// `e_{tau|t}` are rolled out, and the constraint at `tau` is tightened with the
/// one-step radius `C_{tau|tau-1}`. Only the constraint at `tau = t+1` is
/// covered by the calibration; the later ones shape the plan.
pub fn control_episode_closed_loop(
    system: &LinearSystem,
    x0: &[f64],
    form: &ConstraintForm,
    regions: &Abstraction,
    model: &PredictorModel,
    env: &Trace<'_>,
    cost: &Cost,
    opts: &EpisodeOptions,
) -> Result<ControlEpisodeReport> {
    if regions.mode != Mode::ClosedLoop {
        return Err(invalid("closed-loop control needs one-step prediction regions"));
    }
    if opts.horizon == 0 {
        return Err(invalid("control horizon must be at least 1"));
    }
    let total = env.len() - 1;
    let (n, m) = (system.nx(), system.nu());
    let mut x = x0.to_vec();
    let mut states = x0.to_vec();
    let mut inputs = Vec::with_capacity(total * m);
    let mut log = Vec::with_capacity(total);
    let mut warm: Option<Vec<f64>> = None;
    let first = regions.times.first().copied().unwrap_or(1);
    for t in 0..total {
        let h = match opts.mode {
            HorizonMode::Receding => opts.horizon.min(total - t),
            HorizonMode::Shrinking => total - t,
        };
        let prefix = Trace::new_unchecked(env.dim(), &env.data()[..(t + 1) * env.dim()]);
        let pred = if prefix.len() >= model.order() {
            Some(model.predict_openloop(&prefix, t + h)?)
        } else {
            None
        };
        let constraints = match &pred {
            Some(p) => constraints_from_abstraction(form, regions, p, (t + 1).max(first)..=t + h)?,
            None => Vec::new(),
        };
        let ocp = Ocp { system, x0: &x, t0: t, steps: h, constraints: &constraints, cost, warm_start: warm.as_deref() };
        let sol = solve(&ocp, &opts.solver)?;
        let status = match (sol.feasible, opts.slack) {
            (true, _) => StepStatus::Feasible,
            (false, true) => StepStatus::Soft,
            (false, false) => StepStatus::Infeasible,
        };
        log.push(StepLog { t, status, max_violation: sol.max_violation, iterations: sol.iterations });
        let u = sol.inputs[..m].to_vec();
        let mut shifted = sol.inputs[m..].to_vec();
        shifted.extend(std::iter::repeat(0.0).take(m));
        warm = Some(shifted);
        x = system.rollout(&x, &u)[n..].to_vec();
        states.extend_from_slice(&x);
        inputs.extend_from_slice(&u);
    }
    let agents = &regions.agents;
    let constraint_values: Vec<f64> = (1..=total)
        .map(|t| {
            let xt = &states[t * n..(t + 1) * n];
            agents.iter().map(|r| form.value(xt, &env.state(t)[r.clone()])).fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok(ControlEpisodeReport {
        satisfied: constraint_values.iter().all(|c| *c >= 0.0),
        always_feasible: log.iter().all(|l| l.status == StepStatus::Feasible),
        cost: cost.evaluate(&states, &inputs, n),
        inputs,
        states,
        constraint_values,
        log,
    })
}
