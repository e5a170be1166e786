//! Pedestrians walking towards waypoints with velocity noise and random goal
//! switches.
//!
//! Each agent steers its velocity towards its current goal at a preferred
//! speed. With a small probability per step, or when the goal is reached, a
//! new goal is drawn, which turns the walker sharply and makes long-horizon
//! forecasts occasionally far off.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{normal, uniform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkerParams {
    pub dt: f64,
    pub speed_mean: f64,
    pub speed_std: f64,
    /// Fraction of the velocity gap to the preferred velocity closed per step.
    pub steering: f64,
    /// Standard deviation of the per-step velocity perturbation.
    pub velocity_noise: f64,
    /// Probability per step of drawing a new goal.
    pub switch_prob: f64,
    /// Goals are drawn uniformly from `[-arena, arena]^2`.
    pub arena: f64,
}

impl Default for WalkerParams {
    fn default() -> Self {
        Self { dt: 0.4, speed_mean: 1.3, speed_std: 0.2, steering: 0.3, velocity_noise: 0.06, switch_prob: 0.03, arena: 6.0 }
    }
}

impl WalkerParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dt > 0.0
            && self.speed_mean > 0.0
            && self.speed_std >= 0.0
            && (0.0..=1.0).contains(&self.steering)
            && self.velocity_noise >= 0.0
            && (0.0..=1.0).contains(&self.switch_prob)
            && self.arena > 0.0;
        if ok {
            Ok(())
        } else {
            Err(invalid("walker needs dt, speed and arena > 0, steering and switch_prob in [0, 1]"))
        }
    }
}

/// One walker's mutable state.
#[derive(Debug, Clone)]
pub struct Walker {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub goal: [f64; 2],
    pub speed: f64,
}

impl Walker {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, p: &WalkerParams, pos: [f64; 2], goal: [f64; 2]) -> Self {
        let speed = normal(rng, p.speed_mean, p.speed_std).max(0.1 * p.speed_mean);
        let mut w = Walker { pos, vel: [0.0; 2], goal, speed };
        w.vel = w.preferred();
        w
    }

    fn preferred(&self) -> [f64; 2] {
        let d = [self.goal[0] - self.pos[0], self.goal[1] - self.pos[1]];
        let n = (d[0] * d[0] + d[1] * d[1]).sqrt();
        if n < 1e-9 {
            [0.0, 0.0]
        } else {
            [self.speed * d[0] / n, self.speed * d[1] / n]
        }
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R, p: &WalkerParams) {
        let reached = (self.goal[0] - self.pos[0]).hypot(self.goal[1] - self.pos[1]) < self.speed * p.dt;
        if reached || rng.random::<f64>() < p.switch_prob {
            self.goal = [uniform(rng, -p.arena, p.arena), uniform(rng, -p.arena, p.arena)];
        }
        let pref = self.preferred();
        for i in 0..2 {
            self.vel[i] += p.steering * (pref[i] - self.vel[i]) + normal(rng, 0.0, p.velocity_noise);
            self.pos[i] += p.dt * self.vel[i];
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PedestrianParams {
    pub agents: usize,
    /// Observed steps before the forecast origin.
    pub history: usize,
    /// Forecast steps after the origin.
    pub horizon: usize,
    /// Unrecorded steps that let each walker settle.
    pub warmup: usize,
    pub walker: WalkerParams,
}

impl Default for PedestrianParams {
    fn default() -> Self {
        Self { agents: 1, history: 8, horizon: 20, warmup: 5, walker: WalkerParams::default() }
    }
}

impl PedestrianParams {
    pub fn validate(&self) -> Result<()> {
        if self.agents == 0 || self.horizon == 0 {
            return Err(invalid("pedestrian scenario needs at least one agent and one forecast step"));
        }
        self.walker.validate()
    }

    pub fn dim(&self) -> usize {
        2 * self.agents
    }

    /// Index of the forecast origin in each trajectory.
    pub fn origin(&self) -> usize {
        self.history
    }

    pub fn len(&self) -> usize {
        self.history + self.horizon + 1
    }

    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let a = self.walker.arena;
        let mut ws: Vec<Walker> = (0..self.agents)
            .map(|_| {
                let pos = [uniform(rng, -a, a), uniform(rng, -a, a)];
                let goal = [uniform(rng, -a, a), uniform(rng, -a, a)];
                Walker::new(rng, &self.walker, pos, goal)
            })
            .collect();
        for _ in 0..self.warmup {
            ws.iter_mut().for_each(|w| w.step(rng, &self.walker));
        }
        let mut out = Vec::with_capacity(self.len() * self.dim());
        for t in 0..self.len() {
            if t > 0 {
                ws.iter_mut().for_each(|w| w.step(rng, &self.walker));
            }
            ws.iter().for_each(|w| out.extend_from_slice(&w.pos));
        }
        out
    }
}
