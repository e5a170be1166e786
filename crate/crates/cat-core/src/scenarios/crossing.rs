//! A planar robot driving past a pedestrian who crosses its path.
//!
//! The pedestrian ignores the robot. The robot is a double integrator that
//! must keep a minimum distance from the pedestrian at every step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::control::{ConstraintForm, Cost, EpisodeOptions, GoalTerm, HorizonMode, LinearSystem, SolverOptions};
use crate::error::{invalid, Result};
use crate::rng::uniform;
use crate::scenarios::pedestrian::{Walker, WalkerParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossingParams {
    pub horizon: usize,
    pub walker: WalkerParams,
    /// Pedestrian start `x` range and `y`.
    pub ped_start_x: [f64; 2],
    pub ped_start_y: f64,
    pub ped_goal_y: f64,
    pub robot_start: [f64; 2],
    pub robot_goal: [f64; 2],
    pub u_max: f64,
    pub min_distance: f64,
    pub control_horizon: usize,
    pub input_weight: f64,
    pub goal_weight: f64,
}

impl Default for CrossingParams {
    fn default() -> Self {
        Self {
            horizon: 40,
            walker: WalkerParams {
                dt: 0.25,
                speed_mean: 1.0,
                speed_std: 0.15,
                steering: 0.3,
                velocity_noise: 0.05,
                switch_prob: 0.0,
                arena: 6.0,
            },
            ped_start_x: [3.0, 5.0],
            ped_start_y: -4.0,
            ped_goal_y: 6.0,
            robot_start: [0.0, 0.0],
            robot_goal: [8.0, 0.0],
            u_max: 2.0,
            min_distance: 1.0,
            control_horizon: 8,
            input_weight: 0.1,
            goal_weight: 1.0,
        }
    }
}

impl CrossingParams {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 || self.control_horizon == 0 || self.u_max <= 0.0 || self.min_distance < 0.0 {
            return Err(invalid("crossing needs horizon >= 2, control horizon >= 1 and positive input bound"));
        }
        if self.ped_start_x[0] > self.ped_start_x[1] {
            return Err(invalid("crossing pedestrian start range must be ordered"));
        }
        self.walker.validate()
    }

    pub fn dim(&self) -> usize {
        2
    }

    /// Pedestrian trajectory of `horizon + 1` positions.
    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let x = uniform(rng, self.ped_start_x[0], self.ped_start_x[1]);
        let gx = uniform(rng, self.ped_start_x[0], self.ped_start_x[1]);
        let mut w = Walker::new(rng, &self.walker, [x, self.ped_start_y], [gx, self.ped_goal_y]);
        let mut out = Vec::with_capacity((self.horizon + 1) * 2);
        out.extend_from_slice(&w.pos);
        for _ in 0..self.horizon {
            w.step(rng, &self.walker);
            out.extend_from_slice(&w.pos);
        }
        out
    }

    pub fn system(&self) -> LinearSystem {
        LinearSystem::double_integrator_2d(self.walker.dt, self.u_max)
    }

    pub fn x0(&self) -> Vec<f64> {
        vec![self.robot_start[0], self.robot_start[1], 0.0, 0.0]
    }

    pub fn form(&self) -> ConstraintForm {
        ConstraintForm::Distance { sel: vec![0, 1], d: self.min_distance }
    }

    pub fn cost(&self) -> Cost {
        Cost {
            input_weight: self.input_weight,
            terminal: None,
            stage: Some(GoalTerm { sel: vec![0, 1], target: self.robot_goal.to_vec(), weight: self.goal_weight, squared: true }),
        }
    }

    pub fn episode_options(&self) -> EpisodeOptions {
        EpisodeOptions { horizon: self.control_horizon, mode: HorizonMode::Receding, slack: false, solver: SolverOptions::default() }
    }
}
