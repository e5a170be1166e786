//! Noisy unicycle whose final position is forecast by a learned component.
//!
//! The state is `(px, py, theta, v, omega)`; speed and turn rate stay fixed
//! along a run, the heading relaxes towards zero at a rate set by `omega`, and
//! the position receives additive Gaussian noise.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{normal, truncated_normal, uniform};
use crate::verification::{OutputSet, SublevelFn};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnicycleParams {
    pub steps: usize,
    pub step_length: f64,
    pub heading_relax: f64,
    pub theta_std: f64,
    pub speed_mean: f64,
    pub speed_std: f64,
    pub position_noise: f64,
    /// Center and radius of the disc `h_out <= 0` the forecast must land in.
    pub target: [f64; 2],
    pub target_radius: f64,
}

impl Default for UnicycleParams {
    fn default() -> Self {
        Self {
            steps: 10,
            step_length: 1.3,
            heading_relax: 0.1,
            theta_std: 0.1,
            speed_mean: 1.0,
            speed_std: 0.1,
            position_noise: 0.01,
            target: [13.5, 0.5],
            target_radius: 3.0,
        }
    }
}

impl UnicycleParams {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.speed_std <= 0.0 || self.theta_std < 0.0 || self.position_noise < 0.0 || self.target_radius <= 0.0 {
            return Err(invalid("unicycle needs steps >= 1 and nonnegative noise levels"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        5
    }

    pub fn sample_input<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let px = uniform(rng, 0.0, 1.0);
        let py = uniform(rng, 0.0, 1.0);
        let th = normal(rng, 0.0, self.theta_std);
        let hi = 2.0 * self.speed_mean;
        let v = truncated_normal(rng, self.speed_mean, self.speed_std, 0.0, hi);
        let w = truncated_normal(rng, self.speed_mean, self.speed_std, 0.0, hi);
        vec![px, py, th, v, w]
    }

    /// Trajectory of `steps + 1` states from a sampled input.
    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut s = self.sample_input(rng);
        let mut out = s.clone();
        for _ in 0..self.steps {
            let (v, w) = (s[3], s[4]);
            s[0] += self.step_length * v * s[2].cos() + normal(rng, 0.0, self.position_noise);
            s[1] += self.step_length * v * s[2].sin() + normal(rng, 0.0, self.position_noise);
            s[2] -= self.heading_relax * w * s[2];
            out.extend_from_slice(&s);
        }
        out
    }

    /// `h_out(y) = |y - target|^2 - radius^2`.
    pub fn output_set(&self) -> OutputSet {
        OutputSet::Sublevel { h: SublevelFn::Quadratic { center: self.target.to_vec(), radius: self.target_radius } }
    }
}
