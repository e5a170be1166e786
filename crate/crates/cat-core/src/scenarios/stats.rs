//! Validation statistics: empirical coverage, conditional coverage and the
//! Beta-law goodness of fit.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{invalid, Result};

/// Fraction of `true` outcomes.
pub fn empirical_coverage(outcomes: &[bool]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(invalid("coverage needs at least one outcome"));
    }
    Ok(outcomes.iter().filter(|o| **o).count() as f64 / outcomes.len() as f64)
}

/// Per-experiment coverage: row `n` holds the test outcomes under calibration `n`.
pub fn conditional_empirical_coverage(outcomes: &[Vec<bool>]) -> Result<Vec<f64>> {
    if outcomes.is_empty() {
        return Err(invalid("conditional coverage needs at least one experiment"));
    }
    outcomes.iter().map(|row| empirical_coverage(row)).collect()
}

/// Kolmogorov-Smirnov distance between the empirical CDF of `samples` and `Beta(a, b)`.
pub fn ks_distance_beta(samples: &[f64], a: f64, b: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid("KS distance needs samples"));
    }
    let law = Beta::new(a, b).map_err(|e| invalid(format!("Beta({a}, {b}): {e}")))?;
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < s.len() {
        let mut j = i;
        while j + 1 < s.len() && s[j + 1] == s[i] {
            j += 1;
        }
        let f = law.cdf(s[i].clamp(0.0, 1.0));
        d = d.max((f - i as f64 / n).abs()).max(((j + 1) as f64 / n - f).abs());
        i = j + 1;
    }
    Ok(d)
}

/// `p +- 3 sqrt(p (1 - p) / n)`.
pub fn binomial_band(p: f64, n: usize) -> (f64, f64) {
    let s = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
    (p - s, p + s)
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Equal-width histogram on `[lo, hi]`; values outside are clamped into the end bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub label: String,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(label: impl Into<String>, values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(invalid("histogram needs bins > 0 and hi > lo"));
        }
        let w = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + w * i as f64).collect();
        let mut counts = vec![0; bins];
        for v in values {
            let i = (((v - lo) / w).floor().max(0.0) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Ok(Self { label: label.into(), edges, counts })
    }

    /// Rows `bin_lo,bin_hi,count`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["bin_lo", "bin_hi", "count"])?;
        for (i, c) in self.counts.iter().enumerate() {
            wr.write_record([format!("{:?}", self.edges[i]), format!("{:?}", self.edges[i + 1]), c.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}
