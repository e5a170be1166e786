//! Robot navigation with two uncertain waypoint regions sensed by noisy sensors.
//!
//! A sample is the single state `(r1, r2, s1, s2)`: true region locations and
//! their Laplace-perturbed sensor readings.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::control::{ConstraintForm, Cost, GoalTerm, LinearSystem, SafetyConstraint};
use crate::error::{invalid, Result};
use crate::rng::{laplace, uniform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NavigationParams {
    /// Box `[x_lo, x_hi, y_lo, y_hi]` of the first region location.
    pub r1_box: [f64; 4],
    pub r2_box: [f64; 4],
    /// Laplace scale of each sensor coordinate.
    pub sensor_scale: f64,
    /// Required visiting precision around each region.
    pub epsilon: f64,
    pub visit_times: [usize; 2],
    pub goal: [f64; 2],
    pub goal_precision: f64,
    pub horizon: usize,
    pub u_max: f64,
    pub input_weight: f64,
    pub goal_weight: f64,
}

impl Default for NavigationParams {
    fn default() -> Self {
        Self {
            r1_box: [1.5, 2.5, 0.5, 1.0],
            r2_box: [2.5, 3.5, 4.0, 4.5],
            sensor_scale: 0.025,
            epsilon: 0.6,
            visit_times: [5, 15],
            goal: [5.0, 5.0],
            goal_precision: 0.2,
            horizon: 20,
            u_max: 1.0,
            input_weight: 0.4,
            goal_weight: 0.6,
        }
    }
}

impl NavigationParams {
    pub fn validate(&self) -> Result<()> {
        let boxes_ok = [self.r1_box, self.r2_box].iter().all(|b| b[0] <= b[1] && b[2] <= b[3]);
        if !boxes_ok || self.sensor_scale < 0.0 || self.epsilon <= 0.0 || self.u_max <= 0.0 {
            return Err(invalid("navigation boxes must be ordered and scales positive"));
        }
        if self.visit_times.iter().any(|t| *t == 0 || *t > self.horizon) {
            return Err(invalid("navigation visit times must lie in 1..=horizon"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        8
    }

    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut r = Vec::with_capacity(4);
        for b in [self.r1_box, self.r2_box] {
            r.push(uniform(rng, b[0], b[1]));
            r.push(uniform(rng, b[2], b[3]));
        }
        let s: Vec<f64> = r.iter().map(|v| laplace(rng, *v, self.sensor_scale)).collect();
        r.extend(s);
        r
    }

    pub fn system(&self) -> LinearSystem {
        LinearSystem::double_integrator_2d(1.0, self.u_max)
    }

    /// Waypoint constraints against the sensed locations tightened by `c`, plus the goal.
    pub fn constraints(&self, sample: &[f64], c: f64) -> Vec<SafetyConstraint> {
        let mut out: Vec<SafetyConstraint> = (0..2)
            .map(|l| SafetyConstraint {
                form: ConstraintForm::Reach { sel: vec![0, 1], eps: self.epsilon },
                time: self.visit_times[l],
                e_hat: sample[4 + 2 * l..6 + 2 * l].to_vec(),
                radius: c,
            })
            .collect();
        out.push(SafetyConstraint {
            form: ConstraintForm::Reach { sel: vec![0, 1], eps: self.goal_precision },
            time: self.horizon,
            e_hat: self.goal.to_vec(),
            radius: 0.0,
        });
        out
    }

    pub fn cost(&self) -> Cost {
        Cost {
            input_weight: self.input_weight,
            terminal: Some(GoalTerm { sel: vec![0, 1], target: self.goal.to_vec(), weight: self.goal_weight, squared: false }),
            stage: None,
        }
    }

    /// Whether planned states visit the true regions within `epsilon`.
    pub fn visits_true_regions(&self, states: &[f64], sample: &[f64]) -> bool {
        (0..2).all(|l| {
            let t = self.visit_times[l];
            let p = &states[t * 4..t * 4 + 2];
            let r = &sample[2 * l..2 * l + 2];
            ((p[0] - r[0]).powi(2) + (p[1] - r[1]).powi(2)).sqrt() <= self.epsilon
        })
    }
}

/// `max_l |s_l - r_l|`.
pub fn sensor_score(sample: &[f64]) -> f64 {
    (0..2)
        .map(|l| {
            let (r, s) = (&sample[2 * l..2 * l + 2], &sample[4 + 2 * l..6 + 2 * l]);
            ((s[0] - r[0]).powi(2) + (s[1] - r[1]).powi(2)).sqrt()
        })
        .fold(0.0, f64::max)
}
