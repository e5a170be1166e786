//! Seeded simulators, validation statistics and the experiment harness.
//!
//! Every dataset is drawn from a sub-stream named after its split, and every
//! trajectory from its own indexed stream below that, so train, tune,
//! calibrate and test data never share randomness and any single trajectory
//! can be regenerated on its own.

pub mod aircraft;
pub mod cartpole;
pub mod config;
pub mod crossing;
pub mod experiments;
pub mod navigation;
pub mod pedestrian;
pub mod report;
pub mod stats;
pub mod unicycle;

use rand::Rng;
use rayon::prelude::*;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use crate::dataset::{Split, TrajectoryDataset};
use crate::error::Result;
use crate::rng::Streams;

pub use aircraft::AircraftParams;
pub use cartpole::CartPoleParams;
pub use crossing::CrossingParams;
pub use navigation::NavigationParams;
pub use pedestrian::PedestrianParams;
pub use unicycle::UnicycleParams;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    Navigation(NavigationParams),
    Unicycle(UnicycleParams),
    Pedestrian(PedestrianParams),
    CartPole(CartPoleParams),
    Aircraft(AircraftParams),
    Crossing(CrossingParams),
}

const KINDS: &[&str] = &["navigation", "unicycle", "pedestrian", "cart_pole", "aircraft", "crossing"];

// Dispatches on `kind` by hand so field paths inside the parameters survive.
impl<'de> Deserialize<'de> for Scenario {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let mut v = serde_json::Value::deserialize(d)?;
        let kind = v.as_object_mut().and_then(|m| m.remove("kind")).ok_or_else(|| D::Error::missing_field("kind"))?;
        let kind = kind.as_str().ok_or_else(|| D::Error::custom("`kind` must be a string"))?;
        match kind {
            "navigation" => config::tagged(v).map(Scenario::Navigation),
            "unicycle" => config::tagged(v).map(Scenario::Unicycle),
            "pedestrian" => config::tagged(v).map(Scenario::Pedestrian),
            "cart_pole" => config::tagged(v).map(Scenario::CartPole),
            "aircraft" => config::tagged(v).map(Scenario::Aircraft),
            "crossing" => config::tagged(v).map(Scenario::Crossing),
            other => Err(D::Error::unknown_variant(other, KINDS)),
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        match self {
            Scenario::Navigation(p) => p.validate(),
            Scenario::Unicycle(p) => p.validate(),
            Scenario::Pedestrian(p) => p.validate(),
            Scenario::CartPole(p) => p.validate(),
            Scenario::Aircraft(p) => p.validate(),
            Scenario::Crossing(p) => p.validate(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Scenario::Navigation(p) => p.dim(),
            Scenario::Unicycle(p) => p.dim(),
            Scenario::Pedestrian(p) => p.dim(),
            Scenario::CartPole(p) => p.dim(),
            Scenario::Aircraft(p) => p.dim(),
            Scenario::Crossing(p) => p.dim(),
        }
    }

    /// One trajectory, flattened row-major.
    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Scenario::Navigation(p) => p.simulate(rng),
            Scenario::Unicycle(p) => p.simulate(rng),
            Scenario::Pedestrian(p) => p.simulate(rng),
            Scenario::CartPole(p) => p.simulate(rng),
            Scenario::Aircraft(p) => p.simulate(rng),
            Scenario::Crossing(p) => p.simulate(rng),
        }
    }

    /// `k` i.i.d. trajectories tagged `split`, one stream per trajectory.
    pub fn sample_dataset(&self, split: Split, k: usize, streams: &Streams) -> Result<TrajectoryDataset> {
        self.validate()?;
        let s = streams.child(split.name(), 0);
        let trajs: Vec<Vec<f64>> = (0..k as u64).into_par_iter().map(|i| self.simulate(&mut s.indexed("traj", i))).collect();
        let dim = self.dim();
        let len = trajs.first().map_or(1, |t| t.len() / dim);
        let ds = TrajectoryDataset::new(split, dim, len, trajs.concat())?;
        match self {
            Scenario::Pedestrian(p) if p.agents > 1 => ds.with_agents((0..p.agents).map(|a| 2 * a..2 * a + 2).collect()),
            _ => Ok(ds),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::laplace;

    fn all() -> Vec<Scenario> {
        vec![
            Scenario::Navigation(Default::default()),
            Scenario::Unicycle(Default::default()),
            Scenario::Pedestrian(PedestrianParams { agents: 2, ..Default::default() }),
            Scenario::CartPole(Default::default()),
            Scenario::Aircraft(Default::default()),
            Scenario::Crossing(Default::default()),
        ]
    }

    #[test]
    fn dataset_shapes_and_determinism() {
        let st = Streams::new(9);
        for sc in all() {
            let a = sc.sample_dataset(Split::Calibrate, 7, &st).unwrap();
            let b = sc.sample_dataset(Split::Calibrate, 7, &st).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.count(), 7);
            assert_eq!(a.dim(), sc.dim());
            let c = sc.sample_dataset(Split::Test, 7, &st).unwrap();
            assert_ne!(a.trace(0).data(), c.trace(0).data());
        }
    }

    #[test]
    fn expected_lengths() {
        let st = Streams::new(1);
        let len = |sc: Scenario| sc.sample_dataset(Split::Train, 2, &st).unwrap().len();
        assert_eq!(len(Scenario::CartPole(Default::default())), 229);
        assert_eq!(len(Scenario::Aircraft(Default::default())), 151);
        assert_eq!(len(Scenario::Unicycle(Default::default())), 11);
        assert_eq!(len(Scenario::Pedestrian(Default::default())), 29);
        assert_eq!(len(Scenario::Navigation(Default::default())), 1);
    }

    #[test]
    fn zero_noise_is_repeatable() {
        let sc = Scenario::CartPole(CartPoleParams { init: 0.0, process_noise: 0.0, ..Default::default() });
        let st = Streams::new(3);
        let a = sc.simulate(&mut st.indexed("x", 0));
        let b = sc.simulate(&mut st.indexed("x", 1));
        assert_eq!(a, b);
    }

    #[test]
    fn navigation_sensor_scale() {
        let mut rng = Streams::new(5).stream("lap");
        let n = 100_000;
        let mad = (0..n).map(|_| (laplace(&mut rng, 2.0, 0.025) - 2.0).abs()).sum::<f64>() / n as f64;
        assert!((mad / 0.025 - 1.0).abs() < 0.05);
    }
}
