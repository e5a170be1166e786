//! Aircraft altitude and airspeed under a scheduled dive-and-recover manoeuvre.
//!
//! State `(alt, spd)`. Speed is a weakly damped random walk around its
//! nominal value. During the dive window altitude drops at a rate that grows
//! with speed, and during the recovery window it climbs at the nominal rate,
//! so the lowest altitude reached depends on the initial speed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::normal;

pub const SIGNALS: [&str; 2] = ["alt", "spd"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AircraftParams {
    pub horizon: usize,
    /// Means of the Gaussian initial altitude and speed.
    pub init_mean: [f64; 2],
    pub init_std: [f64; 2],
    pub nominal_speed: f64,
    /// Dive occupies steps `dive[0]..dive[1]`, recovery `dive[1]..dive[2]`.
    pub dive: [usize; 3],
    /// Altitude change per step at nominal speed.
    pub dive_rate: f64,
    /// Relative increase of the dive rate per unit of excess speed.
    pub speed_gain: f64,
    pub speed_damping: f64,
    pub alt_noise: f64,
    pub spd_noise: f64,
}

impl Default for AircraftParams {
    fn default() -> Self {
        Self {
            horizon: 150,
            init_mean: [1000.0, 650.0],
            init_std: [10.0, 5.0],
            nominal_speed: 650.0,
            dive: [90, 115, 140],
            dive_rate: 20.0,
            speed_gain: 0.04,
            speed_damping: 0.002,
            alt_noise: 1.0,
            spd_noise: 0.1,
        }
    }
}

impl AircraftParams {
    /// Test-time law with the initial means moved to `(998, 651)`.
    pub fn shifted() -> Self {
        Self { init_mean: [998.0, 651.0], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let [a, b, c] = self.dive;
        if !(a <= b && b <= c) || self.init_std.iter().any(|s| !(*s > 0.0)) || self.alt_noise < 0.0 || self.spd_noise < 0.0 {
            return Err(invalid("aircraft needs ordered dive windows and positive spreads"));
        }
        if !(0.0..=1.0).contains(&self.speed_damping) {
            return Err(invalid("aircraft speed damping must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        2
    }

    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut alt = normal(rng, self.init_mean[0], self.init_std[0]);
        let mut spd = normal(rng, self.init_mean[1], self.init_std[1]);
        let mut out = Vec::with_capacity((self.horizon + 1) * 2);
        out.extend([alt, spd]);
        for t in 0..self.horizon {
            let rate = if (self.dive[0]..self.dive[1]).contains(&t) {
                -self.dive_rate * (1.0 + self.speed_gain * (spd - self.nominal_speed))
            } else if (self.dive[1]..self.dive[2]).contains(&t) {
                self.dive_rate
            } else {
                0.0
            };
            alt += rate + normal(rng, 0.0, self.alt_noise);
            spd += self.speed_damping * (self.nominal_speed - spd) + normal(rng, 0.0, self.spd_noise);
            out.extend([alt, spd]);
        }
        out
    }

    /// `G[0,T](alt >= 100 and (alt < 300 => spd <= 650))`.
    pub fn spec_text(&self) -> String {
        format!("G[0,{}](alt >= 100 and (alt < 300 => spd <= 650))", self.horizon)
    }
}

/// Total variation between two product Gaussians on the plane, by midpoint
/// quadrature of `|p - q| / 2` on an `n x n` grid spanning 8 standard deviations.
pub fn tv_product_gaussians(p_mean: [f64; 2], p_std: [f64; 2], q_mean: [f64; 2], q_std: [f64; 2], n: usize) -> f64 {
    let pdf = |x: f64, m: f64, s: f64| (-0.5 * ((x - m) / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
    let axis = |i: usize| {
        let lo = (p_mean[i] - 8.0 * p_std[i]).min(q_mean[i] - 8.0 * q_std[i]);
        let hi = (p_mean[i] + 8.0 * p_std[i]).max(q_mean[i] + 8.0 * q_std[i]);
        let h = (hi - lo) / n as f64;
        let pts: Vec<f64> = (0..n).map(|k| lo + h * (k as f64 + 0.5)).collect();
        let pv: Vec<f64> = pts.iter().map(|x| pdf(*x, p_mean[i], p_std[i])).collect();
        let qv: Vec<f64> = pts.iter().map(|x| pdf(*x, q_mean[i], q_std[i])).collect();
        (h, pv, qv)
    };
    let (hx, px, qx) = axis(0);
    let (hy, py, qy) = axis(1);
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += (px[i] * py[j] - qx[i] * qy[j]).abs();
        }
    }
    0.5 * acc * hx * hy
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn tv_matches_closed_form_for_equal_covariances() {
        let c = AircraftParams::default();
        let s = AircraftParams::shifted();
        let tv = tv_product_gaussians(c.init_mean, c.init_std, s.init_mean, s.init_std, 800);
        let d = ((2.0f64 / 10.0).powi(2) + (1.0f64 / 5.0).powi(2)).sqrt();
        let exact = 2.0 * Normal::new(0.0, 1.0).unwrap().cdf(d / 2.0) - 1.0;
        assert!((tv - exact).abs() < 1e-4, "{tv} vs {exact}");
    }
}
