//! Registered experiments: repeated calibrate-then-test protocols over the
//! scenarios, summarised as coverage statistics.
//!
//! Experiment `n` draws all of its data from the child stream `(label, n)` of
//! the master seed, so results do not depend on thread scheduling.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::abstraction::{
    abstraction_naive, abstraction_single_score, normalization_closed_form, optimize_alpha, Abstraction, AlphaWeights, ErrorTable, Mode,
};
use crate::control::{control_episode_closed_loop, plan_open_loop, SolverOptions};
use crate::cp_core::{beta_conditional_params, conformal_quantile, robust_quantile, CalibrationScores, Quantile, ShiftSpec};
use crate::dataset::{Split, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::monitoring::{calibrate_monitor, monitor, MonitorMethod, MonitorOptions};
use crate::predictors::{fit, PredictorModel, PredictorSpec, StaticRidge};
use crate::rng::Streams;
use crate::scenarios::aircraft::{self, tv_product_gaussians, AircraftParams};
use crate::scenarios::cartpole::{self, CartPoleParams, DESTABILIZED_GAIN};
use crate::scenarios::config::{field_error, nested, parse_value};
use crate::scenarios::crossing::CrossingParams;
use crate::scenarios::navigation::{sensor_score, NavigationParams};
use crate::scenarios::pedestrian::PedestrianParams;
use crate::scenarios::report::{ExperimentReport, RunSummary, Series};
use crate::scenarios::stats::{binomial_band, empirical_coverage, ks_distance_beta, mean, Histogram};
use crate::scenarios::unicycle::UnicycleParams;
use crate::scenarios::Scenario;
use crate::stl::{parse_formula, robustness, Formula, Trace};
use crate::verification::{verify_lec_reachability, verify_leas_stl, Status};

/// Names accepted by [`run_experiment`].
pub const EXPERIMENTS: [&str; 8] = [
    "sensor-calibration",
    "navigation-control",
    "unicycle-verify",
    "abstraction-compare",
    "cartpole-verify",
    "monitor-aircraft",
    "monitor-robust",
    "crossing-control",
];

/// Command-line overrides applied on top of a config.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub delta: Option<f64>,
    pub k: Option<usize>,
}

/// A typed experiment configuration.
pub trait Experiment: Serialize + DeserializeOwned + Default {
    const NAME: &'static str;
    fn apply(&mut self, o: &Overrides);
    fn validate(&self) -> Result<()>;
    fn execute(&self, seed: u64) -> Result<ExperimentReport>;
}

/// Parse `params`, apply overrides and validate.
pub fn prepare<E: Experiment>(params: serde_json::Value, o: &Overrides) -> Result<E> {
    let mut cfg: E = parse_value(params)?;
    cfg.apply(o);
    cfg.validate()?;
    Ok(cfg)
}

/// Parse `params`, apply overrides, validate and run.
pub fn run_typed<E: Experiment>(params: serde_json::Value, seed: u64, o: &Overrides) -> Result<ExperimentReport> {
    let cfg: E = prepare(params, o)?;
    let start = Instant::now();
    let mut rep = cfg.execute(seed)?;
    rep.runtime_ms = start.elapsed().as_millis();
    Ok(rep)
}

pub fn run_experiment(name: &str, params: serde_json::Value, seed: u64, o: &Overrides) -> Result<ExperimentReport> {
    match name {
        "sensor-calibration" => run_typed::<SensorCalibration>(params, seed, o),
        "navigation-control" => run_typed::<NavigationControl>(params, seed, o),
        "unicycle-verify" => run_typed::<UnicycleVerify>(params, seed, o),
        "abstraction-compare" => run_typed::<AbstractionCompare>(params, seed, o),
        "cartpole-verify" => run_typed::<CartpoleVerify>(params, seed, o),
        "monitor-aircraft" => run_typed::<MonitorAircraft>(params, seed, o),
        "monitor-robust" => run_typed::<MonitorRobust>(params, seed, o),
        "crossing-control" => run_typed::<CrossingControl>(params, seed, o),
        other => Err(Error::UnknownExperiment(other.to_string())),
    }
}

/// Check an experiment config without running it.
pub fn check_experiment(name: &str, params: serde_json::Value, o: &Overrides) -> Result<()> {
    match name {
        "sensor-calibration" => prepare::<SensorCalibration>(params, o).map(drop),
        "navigation-control" => prepare::<NavigationControl>(params, o).map(drop),
        "unicycle-verify" => prepare::<UnicycleVerify>(params, o).map(drop),
        "abstraction-compare" => prepare::<AbstractionCompare>(params, o).map(drop),
        "cartpole-verify" => prepare::<CartpoleVerify>(params, o).map(drop),
        "monitor-aircraft" => prepare::<MonitorAircraft>(params, o).map(drop),
        "monitor-robust" => prepare::<MonitorRobust>(params, o).map(drop),
        "crossing-control" => prepare::<CrossingControl>(params, o).map(drop),
        other => Err(Error::UnknownExperiment(other.to_string())),
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(field_error("delta", format!("must lie in (0, 1), got {delta}")))
    }
}

fn check_positive(path: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(field_error(path, "must be at least 1"))
    } else {
        Ok(())
    }
}

fn report<E: Experiment>(cfg: &E, seed: u64, runs: Vec<RunSummary>) -> Result<ExperimentReport> {
    Ok(ExperimentReport {
        experiment: E::NAME.to_string(),
        seed,
        params: serde_json::to_value(cfg)?,
        runs,
        series: Vec::new(),
        histograms: Vec::new(),
        runtime_ms: 0,
    })
}

fn quantile_of(scores: Vec<f64>, delta: f64) -> Result<Quantile> {
    conformal_quantile(&CalibrationScores::new(scores)?, delta)
}

fn covered(score: f64, c: Quantile) -> bool {
    Quantile::Finite(score) <= c
}

fn fraction(v: impl Iterator<Item = bool>) -> f64 {
    let (mut n, mut k) = (0usize, 0usize);
    for b in v {
        n += 1;
        k += b as usize;
    }
    k as f64 / n.max(1) as f64
}

/// Fill EC, CEC and the usual coverage metrics for a run whose experiment `n`
/// produced test outcomes `rows[n]`; the first outcome of each row is the EC draw.
fn coverage_summary(run: &mut RunSummary, rows: &[Vec<bool>], target: f64, k: usize, delta: f64) -> Result<()> {
    let first: Vec<bool> = rows.iter().map(|r| r[0]).collect();
    run.target = Some(target);
    run.ec = Some(empirical_coverage(&first)?);
    run.cec = rows.iter().map(|r| empirical_coverage(r)).collect::<Result<_>>()?;
    let (lo, hi) = binomial_band(target, rows.len());
    run.set("ec_band_lo", lo);
    run.set("ec_band_hi", hi);
    run.set("mean_cec", mean(&run.cec));
    if let Ok((a, b)) = beta_conditional_params(k, delta) {
        run.set("beta_a", a as f64);
        run.set("beta_b", b as f64);
        run.set("ks_beta", ks_distance_beta(&run.cec, a as f64, b as f64)?);
    }
    Ok(())
}

fn cec_histogram(label: &str, cec: &[f64]) -> Result<Histogram> {
    Histogram::new(label, cec, 0.8, 1.0, 40)
}

// ---------------------------------------------------------------------------

/// Calibrate the navigation sensor error `max_l |s_l - r_l|` and test it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorCalibration {
    pub delta: f64,
    pub k: Vec<usize>,
    pub n: usize,
    pub j: usize,
    pub scenario: NavigationParams,
}

impl Default for SensorCalibration {
    fn default() -> Self {
        Self { delta: 0.05, k: vec![100, 500, 1000], n: 500, j: 500, scenario: Default::default() }
    }
}

impl Experiment for SensorCalibration {
    const NAME: &'static str = "sensor-calibration";

    fn apply(&mut self, o: &Overrides) {
        if let Some(d) = o.delta {
            self.delta = d;
        }
        if let Some(k) = o.k {
            self.k = vec![k];
        }
    }

    fn validate(&self) -> Result<()> {
        check_delta(self.delta)?;
        if self.k.is_empty() || self.k.contains(&0) {
            return Err(field_error("k", "needs at least one positive calibration size"));
        }
        check_positive("n", self.n)?;
        check_positive("j", self.j)?;
        nested("scenario", self.scenario.validate())
    }

    fn execute(&self, seed: u64) -> Result<ExperimentReport> {
        let root = Streams::new(seed);
        let sc = Scenario::Navigation(self.scenario.clone());
        let mut runs = Vec::new();
        let mut hists = Vec::new();
        for &k in &self.k {
            let label = format!("k{k}");
            let per: Vec<(f64, Vec<bool>)> = (0..self.n as u64)
                .into_par_iter()
                .map(|i| {
                    let st = root.child(&label, i);
                    let cal = sc.sample_dataset(Split::Calibrate, k, &st)?;
                    let c = quantile_of(cal.traces().map(|t| sensor_score(t.state(0))).collect(), self.delta)?;
                    let test = sc.sample_dataset(Split::Test, self.j, &st)?;
                    Ok((c.to_f64(), test.traces().map(|t| covered(sensor_score(t.state(0)), c)).collect()))
                })
                .collect::<Result<_>>()?;
            let mut run = RunSummary::new(&label);
            run.c_values = per.iter().map(|p| p.0).collect();
            let rows: Vec<Vec<bool>> = per.into_iter().map(|p| p.1).collect();
            coverage_summary(&mut run, &rows, 1.0 - self.delta, k, self.delta)?;
            run.set("k", k as f64);
            run.set("mean_c", mean(&run.c_values));
            hists.push(cec_histogram(&format!("cec_{label}"), &run.cec)?);
            runs.push(run);
        }
        let mut rep = report(self, seed, runs)?;
        rep.histograms = hists;
        Ok(rep)
    }
}

// ---------------------------------------------------------------------------

/// Plan through the sensed waypoints with tightened precision and check the
/// plan against the true waypoint locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NavigationControl {
    pub delta: f64,
    pub k: usize,
    pub n: usize,
    /// Test instances per experiment; the first one feeds EC.
    pub j: usize,
    pub scenario: NavigationParams,
    pub solver: SolverOptions,
}

impl Default for NavigationControl {
    fn default() -> Self {
        Self { delta: 0.05, k: 1000, n: 500, j: 20, scenario: Default::default(), solver: Default::default() }
    }
}

impl Experiment for NavigationControl {
    const NAME: &'static str = "navigation-control";

    fn apply(&mut self, o: &Overrides) {
        if let Some(d) = o.delta {
            self.delta = d;
        }
        if let Some(k) = o.k {
            self.k = k;
        }
    }

    fn validate(&self) -> Result<()> {
        check_delta(self.delta)?;
        check_positive("k", self.k)?;
        check_positive("n", self.n)?;
        check_positive("j", self.j)?;
        nested("scenario", self.scenario.validate())
    }

    fn execute(&self, seed: u64) -> Result<ExperimentReport> {
        let root = Streams::new(seed);
        let p = &self.scenario;
        let sc = Scenario::Navigation(p.clone());
        let sys = p.system();
        let cost = p.cost();
        let x0 = [0.0; 4];
        // (C, [(visited, feasible, score covered)])
        type Row = (f64, Vec<(bool, bool, bool)>);
        let per: Vec<Row> = (0..self.n as u64)
            .into_par_iter()
            .map(|i| {
                let st = root.child("nav", i);
                let cal = sc.sample_dataset(Split::Calibrate, self.k, &st)?;
                let c = quantile_of(cal.traces().map(|t| sensor_score(t.state(0))).collect(), self.delta)?;
                let test = sc.sample_dataset(Split::Test, self.j, &st)?;
                let out = test
                    .traces()
                    .map(|t| {
                        let s = t.state(0);
                        let score_ok = covered(sensor_score(s), c);
                        let Quantile::Finite(cv) = c else { return Ok((false, false, score_ok)) };
                        match plan_open_loop(&sys, &x0, &p.constraints(s, cv), &cost, p.horizon, &self.solver) {
                            Ok(sol) => Ok((p.visits_true_regions(&sol.states, s), true, score_ok)),
                            Err(Error::Infeasible { .. }) => Ok((false, false, score_ok)),
                            Err(e) => Err(e),
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((c.to_f64(), out))
            })
            .collect::<Result<_>>()?;
        let mut run = RunSummary::new("open_loop");
        run.c_values = per.iter().map(|p| p.0).collect();
        let rows: Vec<Vec<bool>> = per.iter().map(|p| p.1.iter().map(|o| o.0).collect()).collect();
        coverage_summary(&mut run, &rows, 1.0 - self.delta, self.k, self.delta)?;
        let all = || per.iter().flat_map(|p| p.1.iter());
        run.set("constraint_coverage", fraction(all().map(|o| o.0)));
        run.set("feasible_rate", fraction(all().map(|o| o.1)));
        run.set("score_coverage", fraction(all().map(|o| o.2)));
        run.set("mean_c", mean(&run.c_values));
        let h = cec_histogram("cec_open_loop", &run.cec)?;
        let mut rep = report(self, seed, vec![run])?;
        rep.histograms.push(h);
        Ok(rep)
    }
}

// ---------------------------------------------------------------------------

/// Verify that a learned final-position forecaster lands in the target disc.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnicycleVerify {
    pub delta: f64,
    pub k: usize,
    pub n: usize,
    pub j: usize,
    pub train_k: usize,
    pub lambda: f64,
    pub scenario: UnicycleParams,
}

impl Default for UnicycleVerify {
    fn default() -> Self {
        Self { delta: 0.05, k: 500, n: 100, j: 500, train_k: 2000, lambda: 1e-6, scenario: Default::default() }
    }
}

/// Regression inputs (initial state) and targets (final position) of a dataset.
pub fn unicycle_pairs(ds: &TrajectoryDataset) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let last = ds.horizon();
    ds.traces().map(|t| (t.state(0).to_vec(), t.state(last)[..2].to_vec())).unzip()
}

/// Forecaster trained on the train split of `p` under `seed`.
pub fn train_unicycle(p: &UnicycleParams, train_k: usize, lambda: f64, seed: u64) -> Result<StaticRidge> {
    let ds = Scenario::Unicycle(p.clone()).sample_dataset(Split::Train, train_k, &Streams::new(seed))?;
    let (x, y) = unicycle_pairs(&ds);
    StaticRidge::fit(&x, &y, lambda)
}

impl Experiment for UnicycleVerify {
    const NAME: &'static str = "unicycle-verify";

    fn apply(&mut self, o: &Overrides) {
        if let Some(d) = o.delta {
            self.delta = d;
        }
        if let Some(k) = o.k {
            self.k = k;
        }
    }

    fn validate(&self) -> Result<()> {
        check_delta(self.delta)?;
        check_positive("k", self.k)?;
        check_positive("n", self.n)?;
        check_positive("j", self.j)?;
        check_positive("train_k", self.train_k)?;
        if !(self.lambda >= 0.0) {
            return Err(field_error("lambda", "must be >= 0"));
        }
        nested("scenario", self.scenario.validate())
    }

    fn execute(&self, seed: u64) -> Result<ExperimentReport> {
        let root = Streams::new(seed);
        let p = &self.scenario;
        let sc = Scenario::Unicycle(p.clone());
        let set = p.output_set();
        let fitted = train_unicycle(p, self.train_k, self.lambda, root.child("train", 0).seed())?;
        let untrained = StaticRidge::untrained(p.dim(), 2);
        let mut runs = Vec::new();
        for (label, model) in [("fitted", &fitted), ("untrained", &untrained)] {
            type Row = (f64, Status, Vec<bool>, f64);
            let per: Vec<Row> = (0..self.n as u64)
                .into_par_iter()
                .map(|i| {
                    let st = root.child("unicycle", i);
                    let cal = sc.sample_dataset(Split::Calibrate, self.k, &st)?;
                    let outs: Vec<Vec<f64>> = cal.traces().map(|t| model.predict(t.state(0))).collect();
                    let v = verify_lec_reachability(&outs, &set, self.delta)?;
                    let c = v.margin.to_f64();
                    let test = sc.sample_dataset(Split::Test, self.j, &st)?;
                    let ok = test.traces().map(|t| set.score(&model.predict(t.state(0))) <= c).collect();
                    let truth_in = fraction(test.traces().map(|t| set.contains(&t.state(test.horizon())[..2])));
                    Ok((c, v.status, ok, truth_in))
                })
                .collect::<Result<_>>()?;
            let mut run = RunSummary::new(label);
            run.c_values = per.iter().map(|r| r.0).collect();
            let rows: Vec<Vec<bool>> = per.iter().map(|r| r.2.clone()).collect();
            coverage_summary(&mut run, &rows, 1.0 - self.delta, self.k, self.delta)?;
            run.set("mean_c", mean(&run.c_values));
            run.set("certified_rate", fraction(per.iter().map(|r| r.1 == Status::Certified)));
            run.set("refuted_rate", fraction(per.iter().map(|r| r.1 == Status::Refuted)));
            run.set("true_position_in_set", mean(&per.iter().map(|r| r.3).collect::<Vec<_>>()));
            runs.push(run);
        }
        report(self, seed, runs)
    }
}

// ---------------------------------------------------------------------------

/// Union-bound versus single-score prediction regions for pedestrian forecasts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbstractionCompare {
    pub delta: f64,
    pub k: usize,
    /// Tune trajectories used to pick the weights.
    pub m: usize,
    pub n: usize,
    pub j: usize,
    pub scenario: PedestrianParams,
}

impl Default for AbstractionCompare {
    fn default() -> Self {
        Self { delta: 0.05, k: 596, m: 50, n: 500, j: 500, scenario: Default::default() }
    }
}

/// Labels of the compared constructions.
pub const ABSTRACTION_METHODS: [&str; 3] = ["ub", "snsa_cf", "snsa_lcp"];

struct CompareRow {
    radii: Vec<Vec<f64>>,
    covers: Vec<Vec<bool>>,
    scale_gap: f64,
    closed_le_open: f64,
}

impl AbstractionCompare {
    fn one(&self, st: &Streams) -> Result<CompareRow> {
        let sc = Scenario::Pedestrian(self.scenario.clone());
        let t0 = self.scenario.origin();
        let model = PredictorModel::constant_velocity(self.scenario.dim());
        let table = |split, k| -> Result<ErrorTable> {
            let ds = sc.sample_dataset(split, k, st)?;
            ErrorTable::compute(&ds, &model, Mode::OpenLoop, t0)
        };
        let tune = table(Split::Tune, self.m)?;
        let cal = table(Split::Calibrate, self.k)?;
        let test = table(Split::Test, self.j)?;
        let cf = normalization_closed_form(&tune)?;
        let lcp = optimize_alpha(&tune, self.delta, st.child("alpha", 0).seed())?;
        let abs: Vec<Abstraction> = vec![
            abstraction_naive(&cal, self.delta)?,
            abstraction_single_score(&cal, self.delta, &cf, None)?,
            abstraction_single_score(&cal, self.delta, &lcp, None)?,
        ];
        let covers = abs.iter().map(|a| (0..test.count()).map(|i| a.covers(&test, i)).collect::<Result<Vec<_>>>()).collect::<Result<_>>()?;
        let scaled = abstraction_single_score(&cal, self.delta, &cf.scaled(3.7), None)?;
        let scale_gap = scaled.radii.iter().zip(&abs[1].radii).map(|(a, b)| (a.to_f64() - b.to_f64()).abs()).fold(0.0, f64::max);

        // One-step radii from the closed-loop errors of the same trajectories.
        let cds = sc.sample_dataset(Split::Calibrate, self.k, st)?;
        let tds = sc.sample_dataset(Split::Tune, self.m, st)?;
        let ccal = ErrorTable::compute(&cds, &model, Mode::ClosedLoop, t0)?;
        let ctune = ErrorTable::compute(&tds, &model, Mode::ClosedLoop, t0)?;
        let closed = abstraction_single_score(&ccal, self.delta, &normalization_closed_form(&ctune)?, None)?;
        let (open_r, closed_r) = (abs[1].mean_radius_per_time(), closed.mean_radius_per_time());
        let pairs: Vec<bool> = closed
            .times
            .iter()
            .zip(&closed_r)
            .filter_map(|(tau, c)| abs[1].times.iter().position(|s| s == tau).map(|j| *c <= open_r[j]))
            .collect();
        Ok(CompareRow { radii: abs.iter().map(Abstraction::mean_radius_per_time).collect(), covers, scale_gap, closed_le_open: fraction(pairs.into_iter()) })
    }
}

impl Experiment for AbstractionCompare {
    const NAME: &'static str = "abstraction-compare";

    fn apply(&mut self, o: &Overrides) {
        if let Some(d) = o.delta {
            self.delta = d;
        }
        if let Some(k) = o.k {
            self.k = k;
        }
    }

    fn validate(&self) -> Result<()> {
        check_delta(self.delta)?;
        check_positive("k", self.k)?;
        check_positive("m", self.m)?;
        check_positive("n", self.n)?;
        check_positive("j", self.j)?;
        nested("scenario", self.scenario.validate())
    }

    fn execute(&self, seed: u64) -> Result<ExperimentReport> {
        let root = Streams::new(seed);
        let rows: Vec<CompareRow> = (0..self.n as u64).into_par_iter().map(|i| self.one(&root.child("pedestrian", i))).collect::<Result<_>>()?;
        let steps = rows[0].radii[0].len();
        let mut columns = BTreeMap::new();
        let mut runs = Vec::new();
        let mut hists = Vec::new();
        for (m, label) in ABSTRACTION_METHODS.iter().enumerate() {
            let mean_r: Vec<f64> = (0..steps).map(|s| mean(&rows.iter().map(|r| r.radii[m][s]).collect::<Vec<_>>())).collect();
            let area: Vec<f64> = (0..steps)
                .map(|s| mean(&rows.iter().map(|r| std::f64::consts::PI * r.radii[m][s].powi(2)).collect::<Vec<_>>()))
                .collect();
            let mut run = RunSummary::new(*label);
            let cov: Vec<Vec<bool>> = rows.iter().map(|r| r.covers[m].clone()).collect();
            coverage_summary(&mut run, &cov, 1.0 - self.delta, self.k, self.delta)?;
            run.set("mean_radius", mean(&mean_r));
            hists.push(cec_histogram(&format!("cec_{label}"), &run.cec)?);
            columns.insert(format!("{label}_radius"), mean_r);
            columns.insert(format!("{label}_area"), area);
            runs.push(run);
        }
        let ub = &columns["ub_radius"];
        for label in ["snsa_cf", "snsa_lcp"] {
            let r = &columns[&format!("{label}_radius")];
            let smaller = fraction(r.iter().zip(ub).map(|(a, b)| a < b));
            runs.iter_mut().find(|x| x.label == label).expect("run exists").set("steps_below_ub", smaller);
        }
        let mut summary = RunSummary::new("checks");
        summary.set("alpha_scale_max_gap", rows.iter().map(|r| r.scale_gap).fold(0.0, f64::max));
        summary.set("closed_le_open_fraction", mean(&rows.iter().map(|r| r.closed_le_open).collect::<Vec<_>>()));
        runs.push(summary);
        let mut rep = report(self, seed, runs)?;
        rep.series.push(Series {
            label: "radius_per_step".into(),
            x_name: "step".into(),
            x: (1..=steps).map(|s| s as f64).collect(),
            columns,
        });
        rep.histograms = hists;
        Ok(rep)
    }
}

// ---------------------------------------------------------------------------

/// Closed-loop STL verification of the cart-pole under two feedback gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartpoleVerify {
    pub delta: f64,
    pub k: usize,
    pub n: usize,
    pub j: usize,
    pub scenario: CartPoleParams,
    pub destabilized_gain: [f64; 4],
}

impl Default for CartpoleVerify {
    fn default() -> Self {
        Self { delta: 0.05, k: 500, n: 100, j: 200, scenario: Default::default(), destabilized_gain: DESTABILIZED_GAIN }
    }
}

impl Experiment for CartpoleVerify {
    const NAME: &'static str = "cartpole-verify";

    fn apply(&mut self, o: &Overrides) {
        if let Some(d) = o.delta {
            self.delta = d;
        }
        if let Some(k) = o.k {
            self.k = k;
        }
    }

    fn validate(&self) -> Result<()> {
        check_delta(self.delta)?;
        check_positive("k", self.k)?;
        check_positive("n", self.n)?;
        check_positive("j", self.j)?;
        nested("scenario", self.scenario.validate())
    }

    fn execute(&self, seed: u64) -> Result<ExperimentReport> {
        let root = Streams::new(seed);
        let spec = parse_formula(&self.scenario.spec_text(), &cartpole::SIGNALS)?;
        let variants = [
            ("stabilizing", self.scenario.clone()),
            ("destabilized", CartPoleParams { gain: self.destabilized_gain, ..self.scenario.clone() }),
        ];
        let mut runs = Vec::new();
        for (label, params) in variants {
            let sc = Scenario::CartPole(params);
            type Row = (f64, Status, Vec<bool>, f64);
            let per: Vec<Row> = (0..self.n as u64)
                .into_par_iter()
                .map(|i| {
                    let st = root.child(label, i);
                    let cal = sc.sample_dataset(Split::Calibrate, self.k, &st)?;
                    let v = verify_leas_stl(&cal, &spec, self.delta)?;
                    let smc = crate::verification::smc_satisfaction_bound(&cal, &spec)?;
                    let test = sc.sample_dataset(Split::Test, self.j, &st)?;
                    let c = v.margin;
                    let ok = test.traces().map(|t| Ok(robustness(&spec, &t, 0)?.neg() <= c)).collect::<Result<Vec<_>>>()?;
                    Ok((c.to_f64(), v.status, ok, smc))
                })
                .collect::<Result<_>>()?;
            let mut run = RunSummary::new(label);
            run.c_values = per.iter().map(|r| r.0).collect();
            let rows: Vec<Vec<bool>> = per.iter().map(|r| r.2.clone()).collect();
            coverage_summary(&mut run, &rows, 1.0 - self.delta, self.k, self.delta)?;
            run.set("mean_c", mean(&run.c_values));
            run.set("certified_rate", fraction(per.iter().map(|r| r.1 == Status::Certified)));
            run.set("refuted_rate", fraction(per.iter().map(|r| r.1 == Status::Refuted)));
            run.set("mean_smc_bound", mean(&per.iter().map(|r| r.3).collect::<Vec<_>>()));
            runs.push(run);
        }
        report(self, seed, runs)
    }
}

// ---------------------------------------------------------------------------

/// Shared setup of the aircraft monitoring experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AircraftSetup {
    pub scenario: AircraftParams,
    /// Observation time of the monitor.
    pub t: usize,
    pub train_k: usize,
    pub predictor: PredictorSpec,
}

impl Default for AircraftSetup {
    fn default() -> Self {
        Self { scenario: Default::default(), t: 80, train_k: 500, predictor: PredictorSpec::RidgeAr { order: 2, lambda: 1e-6 } }
    }
}

impl AircraftSetup {
    fn validate(&self) -> Result<()> {
        nested("scenario", self.scenario.validate())?;
        check_positive("train_k", self.train_k)?;
        if self.t > self.scenario.horizon {
            return Err(field_error("t", "must not exceed the scenario horizon"));
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<Formula> {
        parse_formula(&self.scenario.spec_text(), &aircraft::SIGNALS)
    }

    pub fn train(&self, root: &Streams) -> Result<PredictorModel> {
        let ds = Scenario::Aircraft(self.scenario.clone()).sample_dataset(Split::Train, self.train_k, &root.child("train", 0))?;
        fit(&ds, self.predictor)
    }
}

fn prefix<'a>(tr: &Trace<'a>, t: usize) -> Trace<'a> {
    Trace::new_unchecked(tr.dim(), &tr.data()[..(t + 1) * tr.dim()])
}

/// Whether `rho(z) >= rho*` for every test trajectory.
fn monitor_outcomes(cal: &crate::monitoring::MonitorCalibration, test: &TrajectoryDataset, model: &PredictorModel, spec: &Formula) -> Result<Vec<bool>> {
    test.traces()
        .map(|tr| {
            let r = monitor(cal, &prefix(&tr, cal.t), model)?;
            Ok(robustness(spec, &tr, 0)? >= r.rho_star)
        })
        .collect()
}

/// Accurate and interpretable predictive monitors on the aircraft surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorAircraft {
    pub delta: f64,
    pub k: usize,
    pub n: usize,
    pub j: usize,
    pub setup: AircraftSetup,
}

impl Default for MonitorAircraft {
    fn default() -> Self {
        Self { delta: 0.05, k: 700, n: 100, j: 200, setup: Default::default() }
    }
}

impl Experiment for MonitorAircraft {
    const NAME: &'static str = "monitor-aircraft";

    fn apply(&mut self, o: &Overrides) {
        if let Some(d) = o.delta {
            self.delta = d;
        }
        if let Some(k) = o.k {
            self.k = k;
        }
    }

    fn validate(&self) -> Result<()> {
        check_delta(self.delta)?;
        check_positive("k", self.k)?;
        check_positive("n", self.n)?;
        check_positive("j", self.j)?;
        nested("setup", self.setup.validate())
    }

    fn execute(&self, seed: u64) -> Result<ExperimentReport> {
        let root = Streams::new(seed);
        let spec = self.setup.spec()?;
        let model = self.setup.train(&root)?;
        let sc = Scenario::Aircraft(self.setup.scenario.clone());
        let methods = [("accurate", MonitorMethod::Accurate), ("interpretable", MonitorMethod::Interpretable)];
        type Row = Vec<(f64, Vec<bool>)>;
        let per: Vec<Row> = (0..self.n as u64)
            .into_par_iter()
            .map(|i| {
                let st = root.child("aircraft", i);
                let cal = sc.sample_dataset(Split::Calibrate, self.k, &st)?;
                let test = sc.sample_dataset(Split::Test, self.j, &st)?;
                methods
                    .iter()
                    .map(|(_, m)| {
                        let c = calibrate_monitor(&cal, &model, &spec, self.setup.t, self.delta, *m, &MonitorOptions::default())?;
                        let level = match (&c.c, &c.abstraction) {
                            (Some(q), _) => q.to_f64(),
                            (None, Some(a)) => a.score_quantile.map_or(f64::NAN, |q| q.to_f64()),
                            _ => f64::NAN,
                        };
                        Ok((level, monitor_outcomes(&c, &test, &model, &spec)?))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let mut runs = Vec::new();
        for (m, (label, _)) in methods.iter().enumerate() {
            let mut run = RunSummary::new(*label);
            run.c_values = per.iter().map(|r| r[m].0).collect();
            let rows: Vec<Vec<bool>> = per.iter().map(|r| r[m].1.clone()).collect();
            coverage_summary(&mut run, &rows, 1.0 - self.delta, self.k, self.delta)?;
            run.set("coverage", fraction(rows.iter().flatten().copied()));
            run.set("mean_c", mean(&run.c_values));
            runs.push(run);
        }
        // Full observation: the interpretable bound must equal the exact robustness.
        let st = root.child("final-time", 0);
        let cal = sc.sample_dataset(Split::Calibrate, self.k, &st)?;
        let test = sc.sample_dataset(Split::Test, self.j, &st)?;
        let horizon = self.setup.scenario.horizon;
        let c = calibrate_monitor(&cal, &model, &spec, horizon, self.delta, MonitorMethod::Interpretable, &MonitorOptions::default())?;
        let mut gap: f64 = 0.0;
        for tr in test.traces() {
            let r = monitor(&c, &tr, &model)?;
            let exact = robustness(&spec, &tr, 0)?;
            gap = gap.max(if r.rho_star == exact { 0.0 } else { (r.rho_star.to_f64() - exact.to_f64()).abs().max(f64::MIN_POSITIVE) });
        }
        let mut checks = RunSummary::new("checks");
        checks.set("final_time_max_gap", gap);
        runs.push(checks);
        report(self, seed, runs)
    }
}

// ---------------------------------------------------------------------------

/// Vanilla versus shift-robust accurate monitoring under a shifted initial law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorRobust {
    pub delta: f64,
    pub k: usize,
    pub n: usize,
    pub j: usize,
    /// Total-variation radius assumed by the robust monitor.
    pub epsilon: f64,
    pub setup: AircraftSetup,
    /// Initial law of the test trajectories.
    pub test_scenario: AircraftParams,
}

impl Default for MonitorRobust {
    fn default() -> Self {
        Self { delta: 0.2, k: 700, n: 100, j: 200, epsilon: 0.129, setup: Default::default(), test_scenario: AircraftParams::shifted() }
    }
}

impl Experiment for MonitorRobust {
    const NAME: &'static str = "monitor-robust";

    fn apply(&mut self, o: &Overrides) {
        if let Some(d) = o.delta {
            self.delta = d;
        }
        if let Some(k) = o.k {
            self.k = k;
        }
    }

    fn validate(&self) -> Result<()> {
        check_delta(self.delta)?;
        check_positive("k", self.k)?;
        check_positive("n", self.n)?;
        check_positive("j", self.j)?;
        if !(self.epsilon >= 0.0 && self.epsilon < 1.0) {
            return Err(field_error("epsilon", "must lie in [0, 1)"));
        }
        nested("setup", self.setup.validate())?;
        nested("test_scenario", self.test_scenario.validate())
    }

    fn execute(&self, seed: u64) -> Result<ExperimentReport> {
        let root = Streams::new(seed);
        let spec = self.setup.spec()?;
        let model = self.setup.train(&root)?;
        let cal_sc = Scenario::Aircraft(self.setup.scenario.clone());
        let test_sc = Scenario::Aircraft(self.test_scenario.clone());
        let shift = ShiftSpec::tv(self.epsilon);
        let variants: [(&str, Option<ShiftSpec>); 2] = [("vanilla", None), ("robust", Some(shift))];
        type Row = Vec<(f64, Vec<bool>)>;
        let per: Vec<Row> = (0..self.n as u64)
            .into_par_iter()
            .map(|i| {
                let st = root.child("aircraft", i);
                let cal = cal_sc.sample_dataset(Split::Calibrate, self.k, &st)?;
                let test = test_sc.sample_dataset(Split::Test, self.j, &st)?;
                variants
                    .iter()
                    .map(|(_, s)| {
                        let opts = MonitorOptions { shift: *s, alpha: None };
                        let c = calibrate_monitor(&cal, &model, &spec, self.setup.t, self.delta, MonitorMethod::Accurate, &opts)?;
                        Ok((c.c.map_or(f64::NAN, |q| q.to_f64()), monitor_outcomes(&c, &test, &model, &spec)?))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let target = 1.0 - self.delta;
        let mut runs = Vec::new();
        for (m, (label, _)) in variants.iter().enumerate() {
            let mut run = RunSummary::new(*label);
            run.c_values = per.iter().map(|r| r[m].0).collect();
            let rows: Vec<Vec<bool>> = per.iter().map(|r| r[m].1.clone()).collect();
            coverage_summary(&mut run, &rows, target, self.k, self.delta)?;
            run.set("mean_c", mean(&run.c_values));
            run.set("trials_below_target", fraction(run.cec.iter().map(|c| *c < target)));
            run.set("trials_at_or_above_target", fraction(run.cec.iter().map(|c| *c >= target)));
            runs.push(run);
        }
        let (cal_p, test_p) = (&self.setup.scenario, &self.test_scenario);
        let mut checks = RunSummary::new("checks");
        checks.set("tv_estimate", tv_product_gaussians(cal_p.init_mean, cal_p.init_std, test_p.init_mean, test_p.init_std, 800));
        checks.set("epsilon", self.epsilon);
        checks.set(
            "robust_c_ge_vanilla_fraction",
            fraction(per.iter().map(|r| r[1].0 >= r[0].0 || (r[1].0.is_infinite() && r[0].0.is_infinite()))),
        );
        runs.push(checks);
        report(self, seed, runs)
    }
}

// ---------------------------------------------------------------------------

/// Receding-horizon control past a crossing pedestrian with one-step regions
/// recalibrated for every episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossingControl {
    pub delta: f64,
    pub k: usize,
    pub n: usize,
    pub scenario: CrossingParams,
}

impl Default for CrossingControl {
    fn default() -> Self {
        Self { delta: 0.05, k: 100, n: 300, scenario: Default::default() }
    }
}

/// One-step regions for the crossing pedestrian, jointly valid over the episode.
pub fn crossing_regions(p: &CrossingParams, k: usize, delta: f64, st: &Streams) -> Result<Abstraction> {
    let cal = Scenario::Crossing(p.clone()).sample_dataset(Split::Calibrate, k, st)?;
    let model = PredictorModel::constant_velocity(p.dim());
    let errs = ErrorTable::compute(&cal, &model, Mode::ClosedLoop, 0)?;
    abstraction_single_score(&errs, delta, &AlphaWeights::uniform(errs.width()), None)
}

impl Experiment for CrossingControl {
    const NAME: &'static str = "crossing-control";

    fn apply(&mut self, o: &Overrides) {
        if let Some(d) = o.delta {
            self.delta = d;
        }
        if let Some(k) = o.k {
            self.k = k;
        }
    }

    fn validate(&self) -> Result<()> {
        check_delta(self.delta)?;
        check_positive("k", self.k)?;
        check_positive("n", self.n)?;
        nested("scenario", self.scenario.validate())
    }

    fn execute(&self, seed: u64) -> Result<ExperimentReport> {
        let root = Streams::new(seed);
        let p = &self.scenario;
        let sc = Scenario::Crossing(p.clone());
        let model = PredictorModel::constant_velocity(p.dim());
        let (sys, x0, form, cost, opts) = (p.system(), p.x0(), p.form(), p.cost(), p.episode_options());
        type Row = (bool, bool, f64, f64);
        let per: Vec<Row> = (0..self.n as u64)
            .into_par_iter()
            .map(|i| {
                let st = root.child("episode", i);
                let regions = crossing_regions(p, self.k, self.delta, &st)?;
                let env = sc.sample_dataset(Split::Test, 1, &st)?;
                let r = control_episode_closed_loop(&sys, &x0, &form, &regions, &model, &env.trace(0), &cost, &opts)?;
                let min_c = r.constraint_values.iter().copied().fold(f64::INFINITY, f64::min);
                Ok((r.satisfied, r.always_feasible, min_c, regions.score_quantile.map_or(f64::NAN, |q| q.to_f64())))
            })
            .collect::<Result<_>>()?;
        let mut run = RunSummary::new("closed_loop");
        run.target = Some(1.0 - self.delta);
        run.c_values = per.iter().map(|r| r.3).collect();
        let safe = fraction(per.iter().map(|r| r.0 && r.1));
        let feasible = fraction(per.iter().map(|r| r.1));
        run.set("safe_rate", safe);
        run.set("satisfied_rate", fraction(per.iter().map(|r| r.0)));
        run.set("always_feasible_rate", feasible);
        let given: Vec<bool> = per.iter().filter(|r| r.1).map(|r| r.0).collect();
        run.set("safe_given_feasible", if given.is_empty() { f64::NAN } else { fraction(given.into_iter()) });
        run.set("band_lo", binomial_band(1.0 - self.delta, self.n).0);
        run.set("min_clearance", per.iter().map(|r| r.2).fold(f64::INFINITY, f64::min));
        report(self, seed, vec![run])
    }
}

/// Robust quantile of `scores` for ad hoc use by the command line.
pub fn calibrate_scores(scores: Vec<f64>, delta: f64, shift: Option<&ShiftSpec>) -> Result<Quantile> {
    let s = CalibrationScores::new(scores)?;
    match shift {
        Some(sh) => robust_quantile(&s, delta, sh),
        None => conformal_quantile(&s, delta),
    }
}
