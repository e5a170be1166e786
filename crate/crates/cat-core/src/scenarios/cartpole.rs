//! Cart-pole under a linear bang-bang feedback.
//!
//! State `(p, v, theta, omega)`; the force is `+F` when `gain . state > 0`
//! and `-F` otherwise. Integration is explicit Euler.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{normal, uniform};

pub const GRAVITY: f64 = 9.8;
pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
pub const HALF_LENGTH: f64 = 0.5;
pub const FORCE: f64 = 10.0;
pub const DT: f64 = 0.02;

/// Feedback that keeps the pole upright over the default horizon.
pub const STABILIZING_GAIN: [f64; 4] = [0.1, 0.5, 10.0, 2.0];
/// Same gain with the angle terms flipped, which pushes the pole over.
pub const DESTABILIZED_GAIN: [f64; 4] = [0.1, 0.5, -10.0, -2.0];

/// One Euler step under `force`.
pub fn cartpole_step(s: [f64; 4], force: f64) -> [f64; 4] {
    let [p, v, th, om] = s;
    let (st, ct) = th.sin_cos();
    let total = CART_MASS + POLE_MASS;
    let tmp = (force + POLE_MASS * HALF_LENGTH * om * om * st) / total;
    let th_acc = (GRAVITY * st - ct * tmp) / (HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * ct * ct / total));
    let p_acc = tmp - POLE_MASS * HALF_LENGTH * th_acc * ct / total;
    [p + DT * v, v + DT * p_acc, th + DT * om, om + DT * th_acc]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartPoleParams {
    pub gain: [f64; 4],
    pub horizon: usize,
    /// Initial state drawn uniformly from `[-init, init]^4`.
    pub init: f64,
    /// Standard deviation of the noise added to both velocities each step.
    pub process_noise: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self { gain: STABILIZING_GAIN, horizon: 228, init: 0.05, process_noise: 0.01 }
    }
}

impl CartPoleParams {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.init < 0.0 || self.process_noise < 0.0 {
            return Err(invalid("cart-pole needs a positive horizon and nonnegative noise"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        4
    }

    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut s = [0.0; 4];
        for v in &mut s {
            *v = uniform(rng, -self.init, self.init);
        }
        let mut out = Vec::with_capacity((self.horizon + 1) * 4);
        out.extend_from_slice(&s);
        for _ in 0..self.horizon {
            let a: f64 = self.gain.iter().zip(&s).map(|(k, x)| k * x).sum();
            s = cartpole_step(s, if a > 0.0 { FORCE } else { -FORCE });
            s[1] += normal(rng, 0.0, self.process_noise);
            s[3] += normal(rng, 0.0, self.process_noise);
            out.extend_from_slice(&s);
        }
        out
    }

    /// `G[0,T](|theta| <= 0.2 and |p| <= 4.5)` over signals `p, v, theta, omega`.
    pub fn spec_text(&self) -> String {
        format!("G[0,{}](theta <= 0.2 and theta >= -0.2 and p <= 4.5 and p >= -4.5)", self.horizon)
    }
}

pub const SIGNALS: [&str; 4] = ["p", "v", "theta", "omega"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilibrium_is_fixed() {
        let mut s = [0.0; 4];
        for _ in 0..1000 {
            let n = cartpole_step(s, 0.0);
            assert!(n.iter().zip(&s).all(|(a, b)| (a - b).abs() <= 1e-12));
            s = n;
        }
        assert_eq!(s, [0.0; 4]);
    }
}
