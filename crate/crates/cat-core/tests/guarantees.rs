//! Sampled checks of the coverage guarantees on the bundled scenarios.

use cat_core::abstraction::{abstraction_naive, abstraction_single_score, AlphaWeights, ErrorTable, Mode};
use cat_core::control::{control_episode_closed_loop, HorizonMode};
use cat_core::dataset::Split;
use cat_core::monitoring::{calibrate_monitor, monitor, MonitorMethod, MonitorOptions};
use cat_core::predictors::PredictorModel;
use cat_core::rng::Streams;
use cat_core::scenarios::experiments::{crossing_regions, train_unicycle, AircraftSetup};
use cat_core::scenarios::{CrossingParams, PedestrianParams, Scenario, UnicycleParams};
use cat_core::stl::{robustness, Trace};
use cat_core::verification::{verify_lec_reachability, Status};

fn prefix<'a>(tr: &Trace<'a>, t: usize) -> Trace<'a> {
    Trace::new(tr.dim(), &tr.data()[..(t + 1) * tr.dim()]).unwrap()
}

#[test]
fn monitors_cover_fresh_trajectories() {
    let setup = AircraftSetup::default();
    let root = Streams::new(3);
    let model = setup.train(&root).unwrap();
    let spec = setup.spec().unwrap();
    let sc = Scenario::Aircraft(setup.scenario.clone());
    let cal = sc.sample_dataset(Split::Calibrate, 300, &root).unwrap();
    let test = sc.sample_dataset(Split::Test, 300, &root).unwrap();
    for method in [MonitorMethod::Accurate, MonitorMethod::Interpretable] {
        let c = calibrate_monitor(&cal, &model, &spec, setup.t, 0.05, method, &MonitorOptions::default()).unwrap();
        let hits = test
            .traces()
            .filter(|tr| robustness(&spec, tr, 0).unwrap() >= monitor(&c, &prefix(tr, setup.t), &model).unwrap().rho_star)
            .count();
        let cov = hits as f64 / 300.0;
        assert!(cov >= 0.88, "{method:?} coverage {cov}");
    }
}

#[test]
fn interpretable_monitor_is_exact_at_final_time() {
    let setup = AircraftSetup::default();
    let root = Streams::new(4);
    let model = setup.train(&root).unwrap();
    let spec = setup.spec().unwrap();
    let sc = Scenario::Aircraft(setup.scenario.clone());
    let cal = sc.sample_dataset(Split::Calibrate, 50, &root).unwrap();
    let test = sc.sample_dataset(Split::Test, 20, &root).unwrap();
    let t = test.horizon();
    let c = calibrate_monitor(&cal, &model, &spec, t, 0.05, MonitorMethod::Interpretable, &MonitorOptions::default()).unwrap();
    for tr in test.traces() {
        assert_eq!(monitor(&c, &tr, &model).unwrap().rho_star, robustness(&spec, &tr, 0).unwrap());
    }
}

#[test]
fn certified_component_covers_fresh_outputs() {
    let p = UnicycleParams::default();
    let model = train_unicycle(&p, 2000, 1e-6, 11).unwrap();
    let set = p.output_set();
    let sc = Scenario::Unicycle(p.clone());
    let root = Streams::new(12);
    let cal = sc.sample_dataset(Split::Calibrate, 500, &root).unwrap();
    let outs: Vec<Vec<f64>> = cal.traces().map(|t| model.predict(t.state(0))).collect();
    let v = verify_lec_reachability(&outs, &set, 0.05).unwrap();
    assert_eq!(v.status, Status::Certified);
    let test = sc.sample_dataset(Split::Test, 2000, &root).unwrap();
    let inside = test.traces().filter(|t| set.contains(&model.predict(t.state(0)))).count() as f64 / 2000.0;
    assert!(inside >= 0.95 - 3.0 * (0.05f64 * 0.95 / 2000.0).sqrt(), "inside {inside}");
}

#[test]
fn one_step_regions_are_no_wider_than_open_loop() {
    let p = PedestrianParams::default();
    let sc = Scenario::Pedestrian(p.clone());
    let cal = sc.sample_dataset(Split::Calibrate, 400, &Streams::new(5)).unwrap();
    let model = PredictorModel::constant_velocity(p.dim());
    let base = p.origin();
    let open = ErrorTable::compute(&cal, &model, Mode::OpenLoop, base).unwrap();
    let closed = ErrorTable::compute(&cal, &model, Mode::ClosedLoop, base).unwrap();
    assert_eq!(open.column(0), closed.column(0));
    let ro = abstraction_naive(&open, 0.05).unwrap().mean_radius_per_time();
    let rc = abstraction_naive(&closed, 0.05).unwrap().mean_radius_per_time();
    assert_eq!(ro[0], rc[0]);
    assert!(ro.iter().sum::<f64>() > rc.iter().sum::<f64>());
    let a = AlphaWeights::uniform(open.width());
    let so = abstraction_single_score(&open, 0.05, &a, None).unwrap().mean_radius_per_time();
    let sc = abstraction_single_score(&closed, 0.05, &a, None).unwrap().mean_radius_per_time();
    assert!(so.last() > sc.last());
}

#[test]
fn shrinking_horizon_episode_runs_to_the_end() {
    let p = CrossingParams::default();
    let st = Streams::new(6);
    let regions = crossing_regions(&p, 100, 0.05, &st).unwrap();
    let env = Scenario::Crossing(p.clone()).sample_dataset(Split::Test, 1, &st).unwrap();
    let model = PredictorModel::constant_velocity(p.dim());
    let mut opts = p.episode_options();
    opts.mode = HorizonMode::Shrinking;
    let rep = control_episode_closed_loop(&p.system(), &p.x0(), &p.form(), &regions, &model, &env.trace(0), &p.cost(), &opts).unwrap();
    assert_eq!(rep.log.len(), env.len() - 1);
    assert_eq!(rep.constraint_values.len(), env.len() - 1);
    assert_eq!(rep.states.len(), 4 * env.len());
    assert!(rep.cost.is_finite());
}
