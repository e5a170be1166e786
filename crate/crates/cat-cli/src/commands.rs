use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use cat_core::abstraction::{
    abstraction_naive, abstraction_single_score, normalization_closed_form, optimize_alpha, AlphaWeights, ErrorTable, Mode,
};
use cat_core::control::control_episode_closed_loop;
use cat_core::cp_core::{calibration_conditional_quantile, conformal_rank, ConditionalVariant, ShiftSpec};
use cat_core::dataset::{Split, TrajectoryDataset};
use cat_core::monitoring::{calibrate_monitor, monitor as run_monitor, MonitorMethod, MonitorOptions};
use cat_core::predictors::{fit, PredictorModel, PredictorSpec, StaticRidge};
use cat_core::rng::Streams;
use cat_core::scenarios::config::{parse_str, ExperimentFile};
use cat_core::scenarios::experiments::{calibrate_scores, crossing_regions, run_experiment, train_unicycle, AircraftSetup, Overrides};
use cat_core::scenarios::{cartpole, AircraftParams, CartPoleParams, CrossingParams, PedestrianParams, Scenario, UnicycleParams};
use cat_core::stl::{parse_formula, robustness, Trace};
use cat_core::verification::{smc_satisfaction_bound, verify_leas_reachability, verify_leas_stl, verify_lec_reachability, OutputSet, Verdict};

use crate::Common;

fn load<T: serde::de::DeserializeOwned + Default>(c: &Common) -> Result<T> {
    match &c.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(parse_str(&text).with_context(|| format!("in {}", p.display()))?)
        }
        None => Ok(T::default()),
    }
}

/// Paths inside a config are relative to the config file.
fn resolve(c: &Common, p: &str) -> PathBuf {
    let base = c.config.as_deref().and_then(Path::parent).unwrap_or(Path::new(""));
    base.join(p)
}

fn write_json<T: Serialize>(c: &Common, name: &str, v: &T) -> Result<()> {
    fs::create_dir_all(&c.out)?;
    let p = c.out.join(name);
    fs::write(&p, serde_json::to_vec_pretty(v)?).with_context(|| format!("writing {}", p.display()))?;
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn read_dataset(c: &Common, p: &str) -> Result<TrajectoryDataset> {
    let path = resolve(c, p);
    let f = fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    Ok(TrajectoryDataset::read_csv(f, Split::Calibrate)?)
}

fn read_rows(c: &Common, p: &str) -> Result<Vec<Vec<f64>>> {
    let path = resolve(c, p);
    let mut rd = csv::Reader::from_path(&path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let row = rec.iter().map(|s| s.trim().parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>();
        out.push(row.with_context(|| format!("{} row {}: non-numeric value", path.display(), i + 2))?);
    }
    Ok(out)
}

fn exit_for(v: &Verdict) -> u8 {
    v.status.exit_code() as u8
}

// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateConfig {
    pub delta: f64,
    pub scores: Option<Vec<f64>>,
    /// CSV whose first column holds the scores.
    pub scores_csv: Option<String>,
    pub shift: Option<ShiftSpec>,
    /// Calibration-conditional confidence `1 - beta`.
    pub beta: Option<f64>,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        Self { delta: 0.05, scores: None, scores_csv: None, shift: None, beta: None }
    }
}

pub fn calibrate(c: &Common) -> Result<u8> {
    let cfg: CalibrateConfig = load(c)?;
    let delta = c.delta.unwrap_or(cfg.delta);
    let scores = match (&cfg.scores, &cfg.scores_csv) {
        (Some(s), None) => s.clone(),
        (None, Some(p)) => read_rows(c, p)?.into_iter().filter_map(|r| r.first().copied()).collect(),
        _ => bail!("config needs exactly one of `scores` and `scores_csv`"),
    };
    let k = scores.len();
    let q = calibrate_scores(scores.clone(), delta, cfg.shift.as_ref())?;
    let conditional = match cfg.beta {
        Some(b) => {
            let s = cat_core::cp_core::CalibrationScores::new(scores)?;
            Some(calibration_conditional_quantile(&s, delta, b, ConditionalVariant::Hoeffding)?)
        }
        None => None,
    };
    let out = serde_json::json!({
        "k": k,
        "delta": delta,
        "rank": conformal_rank(k, delta),
        "quantile": q,
        "shift": cfg.shift,
        "conditional": conditional,
    });
    write_json(c, "calibration.json", &out)?;
    Ok(0)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyLecConfig {
    pub delta: f64,
    pub k: usize,
    /// Component outputs, one row each; when absent they are sampled from the unicycle forecaster.
    pub outputs: Option<Vec<Vec<f64>>>,
    pub outputs_csv: Option<String>,
    /// Target set; the unicycle target disc when absent.
    pub set: Option<OutputSet>,
    pub scenario: UnicycleParams,
    pub trained: bool,
    pub train_k: usize,
    pub lambda: f64,
}

impl Default for VerifyLecConfig {
    fn default() -> Self {
        Self {
            delta: 0.05,
            k: 500,
            outputs: None,
            outputs_csv: None,
            set: None,
            scenario: Default::default(),
            trained: true,
            train_k: 2000,
            lambda: 1e-6,
        }
    }
}

pub fn verify_lec(c: &Common) -> Result<u8> {
    let cfg: VerifyLecConfig = load(c)?;
    let (delta, k, seed) = (c.delta.unwrap_or(cfg.delta), c.k.unwrap_or(cfg.k), c.seed.unwrap_or(0));
    let outputs = match (&cfg.outputs, &cfg.outputs_csv) {
        (Some(o), None) => o.clone(),
        (None, Some(p)) => read_rows(c, p)?,
        (None, None) => {
            let root = Streams::new(seed);
            let model = if cfg.trained {
                train_unicycle(&cfg.scenario, cfg.train_k, cfg.lambda, root.child("train", 0).seed())?
            } else {
                StaticRidge::untrained(cfg.scenario.dim(), 2)
            };
            let cal = Scenario::Unicycle(cfg.scenario.clone()).sample_dataset(Split::Calibrate, k, &root)?;
            cal.traces().map(|t| model.predict(t.state(0))).collect()
        }
        _ => bail!("config may give at most one of `outputs` and `outputs_csv`"),
    };
    let set = cfg.set.clone().unwrap_or_else(|| cfg.scenario.output_set());
    let v = verify_lec_reachability(&outputs, &set, delta)?;
    write_json(c, "verdict.json", &v)?;
    Ok(exit_for(&v))
}

// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeasConfig {
    pub delta: f64,
    pub k: usize,
    /// Calibration trajectories as CSV; sampled from `scenario` when absent.
    pub dataset: Option<String>,
    pub scenario: Scenario,
    /// STL spec; the scenario's default spec when absent.
    pub spec: Option<String>,
    /// Signal names binding spec identifiers to state components.
    pub signals: Option<Vec<String>>,
    /// Per-time reach tube; takes precedence over `spec` when present.
    pub tube: Option<Vec<OutputSet>>,
}

impl Default for LeasConfig {
    fn default() -> Self {
        Self {
            delta: 0.05,
            k: 500,
            dataset: None,
            scenario: Scenario::CartPole(CartPoleParams::default()),
            spec: None,
            signals: None,
            tube: None,
        }
    }
}

impl LeasConfig {
    fn dataset(&self, c: &Common) -> Result<TrajectoryDataset> {
        match &self.dataset {
            Some(p) => read_dataset(c, p),
            None => Ok(self.scenario.sample_dataset(Split::Calibrate, c.k.unwrap_or(self.k), &Streams::new(c.seed.unwrap_or(0)))?),
        }
    }

    fn spec(&self, dim: usize) -> Result<cat_core::stl::Formula> {
        let (text, default_signals): (String, Vec<String>) = match (&self.spec, &self.scenario) {
            (Some(s), _) => (s.clone(), (0..dim).map(|i| format!("c{i}")).collect()),
            (None, Scenario::CartPole(p)) => (p.spec_text(), cartpole::SIGNALS.iter().map(|s| s.to_string()).collect()),
            (None, Scenario::Aircraft(p)) => (p.spec_text(), cat_core::scenarios::aircraft::SIGNALS.iter().map(|s| s.to_string()).collect()),
            (None, _) => bail!("config needs `spec` for this scenario"),
        };
        let signals = self.signals.clone().unwrap_or(default_signals);
        Ok(parse_formula(&text, &signals)?)
    }
}

pub fn verify_leas(c: &Common) -> Result<u8> {
    let cfg: LeasConfig = load(c)?;
    let delta = c.delta.unwrap_or(cfg.delta);
    let ds = cfg.dataset(c)?;
    let v = match &cfg.tube {
        Some(t) => verify_leas_reachability(&ds, t, delta)?,
        None => verify_leas_stl(&ds, &cfg.spec(ds.dim())?, delta)?,
    };
    write_json(c, "verdict.json", &v)?;
    Ok(exit_for(&v))
}

pub fn smc(c: &Common) -> Result<u8> {
    let cfg: LeasConfig = load(c)?;
    let ds = cfg.dataset(c)?;
    let bound = smc_satisfaction_bound(&ds, &cfg.spec(ds.dim())?)?;
    write_json(c, "smc.json", &serde_json::json!({ "k": ds.count(), "satisfaction_lower_bound": bound }))?;
    Ok(0)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionConstruction {
    Naive,
    ClosedForm,
    Optimized,
    Uniform,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbstractConfig {
    pub delta: f64,
    pub k: usize,
    /// Tune trajectories for the weights.
    pub m: usize,
    pub construction: RegionConstruction,
    pub mode: Mode,
    pub scenario: PedestrianParams,
    pub predictor: PredictorSpec,
    /// Calibration, tune and train CSVs; sampled from the scenario when absent.
    pub calibration_csv: Option<String>,
    pub tune_csv: Option<String>,
    pub train_csv: Option<String>,
    /// Forecast origin; the scenario's history length when absent.
    pub base_time: Option<usize>,
}

impl Default for AbstractConfig {
    fn default() -> Self {
        Self {
            delta: 0.05,
            k: 596,
            m: 50,
            construction: RegionConstruction::ClosedForm,
            mode: Mode::OpenLoop,
            scenario: Default::default(),
            predictor: PredictorSpec::ConstantVelocity,
            calibration_csv: None,
            tune_csv: None,
            train_csv: None,
            base_time: None,
        }
    }
}

pub fn abstract_regions(c: &Common) -> Result<u8> {
    let cfg: AbstractConfig = load(c)?;
    let (delta, k, seed) = (c.delta.unwrap_or(cfg.delta), c.k.unwrap_or(cfg.k), c.seed.unwrap_or(0));
    let st = Streams::new(seed);
    let sc = Scenario::Pedestrian(cfg.scenario.clone());
    let get = |path: &Option<String>, split: Split, n: usize| -> Result<TrajectoryDataset> {
        match path {
            Some(p) => Ok(read_dataset(c, p)?.retag(split)),
            None => Ok(sc.sample_dataset(split, n, &st)?),
        }
    };
    let model = match cfg.predictor {
        PredictorSpec::ConstantVelocity => PredictorModel::constant_velocity(get(&cfg.calibration_csv, Split::Calibrate, 1)?.dim()),
        spec => fit(&get(&cfg.train_csv, Split::Train, 200)?, spec)?,
    };
    let base = cfg.base_time.unwrap_or(cfg.scenario.origin());
    let cal = ErrorTable::compute(&get(&cfg.calibration_csv, Split::Calibrate, k)?, &model, cfg.mode, base)?;
    let tune = || -> Result<ErrorTable> { Ok(ErrorTable::compute(&get(&cfg.tune_csv, Split::Tune, cfg.m)?, &model, cfg.mode, base)?) };
    let abs = match cfg.construction {
        RegionConstruction::Naive => abstraction_naive(&cal, delta)?,
        RegionConstruction::Uniform => abstraction_single_score(&cal, delta, &AlphaWeights::uniform(cal.width()), None)?,
        RegionConstruction::ClosedForm => abstraction_single_score(&cal, delta, &normalization_closed_form(&tune()?)?, None)?,
        RegionConstruction::Optimized => abstraction_single_score(&cal, delta, &optimize_alpha(&tune()?, delta, seed)?, None)?,
    };
    fs::create_dir_all(&c.out)?;
    let mut wr = csv::Writer::from_path(c.out.join("radii.csv"))?;
    wr.write_record(["tau", "agent", "radius"])?;
    for (j, tau) in abs.times.iter().enumerate() {
        for a in 0..abs.agents.len() {
            wr.write_record([tau.to_string(), a.to_string(), format!("{:?}", abs.radii[j * abs.agents.len() + a].to_f64())])?;
        }
    }
    wr.flush()?;
    write_json(c, "abstraction.json", &abs)?;
    Ok(0)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub delta: f64,
    pub k: usize,
    pub j: usize,
    pub method: MonitorMethod,
    pub setup: AircraftSetup,
    pub shift: Option<ShiftSpec>,
    /// Law of the test trajectories; the calibration law when absent.
    pub test_scenario: Option<AircraftParams>,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self { delta: 0.05, k: 700, j: 200, method: MonitorMethod::Accurate, setup: Default::default(), shift: None, test_scenario: None }
    }
}

pub fn monitor(c: &Common) -> Result<u8> {
    let cfg: MonitorConfig = load(c)?;
    let (delta, k) = (c.delta.unwrap_or(cfg.delta), c.k.unwrap_or(cfg.k));
    let root = Streams::new(c.seed.unwrap_or(0));
    let spec = cfg.setup.spec()?;
    let model = cfg.setup.train(&root)?;
    let cal = Scenario::Aircraft(cfg.setup.scenario.clone()).sample_dataset(Split::Calibrate, k, &root)?;
    let test_params = cfg.test_scenario.clone().unwrap_or_else(|| cfg.setup.scenario.clone());
    let test = Scenario::Aircraft(test_params).sample_dataset(Split::Test, cfg.j, &root)?;
    let opts = MonitorOptions { shift: cfg.shift, alpha: None };
    let mc = calibrate_monitor(&cal, &model, &spec, cfg.setup.t, delta, cfg.method, &opts)?;
    fs::create_dir_all(&c.out)?;
    let mut wr = csv::Writer::from_path(c.out.join("monitor.csv"))?;
    wr.write_record(["traj_id", "rho_star", "rho", "covered"])?;
    let mut hits = 0;
    for (i, tr) in test.traces().enumerate() {
        let prefix = Trace::new(tr.dim(), &tr.data()[..(cfg.setup.t + 1) * tr.dim()])?;
        let r = run_monitor(&mc, &prefix, &model)?;
        let rho = robustness(&spec, &tr, 0)?;
        let ok = rho >= r.rho_star;
        hits += ok as usize;
        wr.write_record([i.to_string(), format!("{:?}", r.rho_star.to_f64()), format!("{:?}", rho.to_f64()), ok.to_string()])?;
    }
    wr.flush()?;
    let out = serde_json::json!({
        "method": cfg.method,
        "t": cfg.setup.t,
        "delta": delta,
        "k": k,
        "c": mc.c,
        "uninformative": mc.uninformative,
        "coverage": hits as f64 / test.count() as f64,
        "tests": test.count(),
    });
    write_json(c, "monitor.json", &out)?;
    Ok(0)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub delta: f64,
    pub k: usize,
    pub episodes: usize,
    pub scenario: CrossingParams,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self { delta: 0.05, k: 100, episodes: 1, scenario: Default::default() }
    }
}

pub fn control(c: &Common) -> Result<u8> {
    let cfg: ControlConfig = load(c)?;
    let (delta, k) = (c.delta.unwrap_or(cfg.delta), c.k.unwrap_or(cfg.k));
    let p = &cfg.scenario;
    p.validate()?;
    let root = Streams::new(c.seed.unwrap_or(0));
    let model = PredictorModel::constant_velocity(p.dim());
    let (sys, x0, form, cost, opts) = (p.system(), p.x0(), p.form(), p.cost(), p.episode_options());
    fs::create_dir_all(&c.out)?;
    let mut reports = Vec::new();
    for i in 0..cfg.episodes as u64 {
        let st = root.child("episode", i);
        let regions = crossing_regions(p, k, delta, &st)?;
        let env = Scenario::Crossing(p.clone()).sample_dataset(Split::Test, 1, &st)?;
        let r = control_episode_closed_loop(&sys, &x0, &form, &regions, &model, &env.trace(0), &cost, &opts)?;
        let mut wr = csv::Writer::from_path(c.out.join(format!("episode_{i}.csv")))?;
        wr.write_record(["t", "robot_x", "robot_y", "ped_x", "ped_y", "constraint"])?;
        let e = env.trace(0);
        for t in 0..e.len() {
            let x = &r.states[t * 4..t * 4 + 2];
            let cv = if t == 0 { String::new() } else { format!("{:?}", r.constraint_values[t - 1]) };
            wr.write_record([t.to_string(), format!("{:?}", x[0]), format!("{:?}", x[1]), format!("{:?}", e.state(t)[0]), format!("{:?}", e.state(t)[1]), cv])?;
        }
        wr.flush()?;
        reports.push(serde_json::json!({
            "episode": i,
            "satisfied": r.satisfied,
            "always_feasible": r.always_feasible,
            "cost": r.cost,
            "score_quantile": regions.score_quantile,
            "log": r.log,
        }));
    }
    write_json(c, "control.json", &reports)?;
    Ok(0)
}

// ---------------------------------------------------------------------------

pub fn experiment(c: &Common, name: &str) -> Result<u8> {
    let (params, file_seed) = match &c.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let f: ExperimentFile = parse_str(&text).with_context(|| format!("in {}", p.display()))?;
            if f.experiment != name {
                bail!("config {} is for experiment `{}`, not `{name}`", p.display(), f.experiment);
            }
            (f.params, f.seed)
        }
        None => (serde_json::json!({}), None),
    };
    let seed = c.seed.or(file_seed).unwrap_or(0);
    let rep = run_experiment(name, params, seed, &Overrides { delta: c.delta, k: c.k })?;
    let dir = c.out.join(name);
    let written = rep.write_artifacts(&dir)?;
    for r in &rep.runs {
        let ec = r.ec.map_or(String::new(), |v| format!(" ec={v:.4}"));
        let metrics: Vec<String> = r.metrics.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
        println!("{}:{} {}", r.label, ec, metrics.join(" "));
    }
    println!("wrote {} files to {} in {} ms", written.len(), dir.display(), rep.runtime_ms);
    Ok(0)
}
