//! Counter-based random streams.
//!
//! Every simulator draws from a [`Streams`] handle. A stream is a ChaCha8
//! keystream keyed by the master seed and addressed by a stream id derived
//! from a name and an index, so sub-streams never overlap and adding a new
//! consumer does not perturb existing ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Factory of named, independent random streams under one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream addressed by `name`.
    pub fn stream(&self, name: &str) -> ChaCha8Rng {
        self.indexed(name, 0)
    }

    /// Stream addressed by `(name, index)`.
    pub fn indexed(&self, name: &str, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream_id(name, index));
        rng
    }

    /// Child factory whose streams are disjoint from the parent's.
    pub fn child(&self, name: &str, index: u64) -> Streams {
        let mut rng = self.indexed(name, index);
        Streams { seed: rng.random() }
    }
}

fn stream_id(name: &str, index: u64) -> u64 {
    // FNV-1a over the name bytes, then the index bytes.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes().chain(index.to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Uniform draw on `[lo, hi)`.
pub fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Gaussian draw with the given mean and standard deviation.
pub fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, std: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + std * z
}

/// Laplace draw by inverse CDF.
pub fn laplace<R: Rng + ?Sized>(rng: &mut R, loc: f64, scale: f64) -> f64 {
    // u in (-1/2, 1/2); the open lower end keeps ln finite.
    let u = loop {
        let v = rng.random::<f64>() - 0.5;
        if v > -0.5 {
            break v;
        }
    };
    loc - scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Gaussian draw truncated to `[lo, hi]`, by rejection.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, std: f64, lo: f64, hi: f64) -> f64 {
    debug_assert!(lo < hi);
    loop {
        let x = normal(rng, mean, std);
        if (lo..=hi).contains(&x) {
            return x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let s = Streams::new(42);
        let a: Vec<u64> = (0..4).map(|_| s.stream("a").random()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        let mut x = s.indexed("a", 0);
        let mut y = s.indexed("a", 1);
        assert_ne!(x.random::<u64>(), y.random::<u64>());
    }

    #[test]
    fn laplace_scale_matches() {
        let mut rng = Streams::new(1).stream("lap");
        let n = 100_000;
        let mean_abs: f64 = (0..n).map(|_| laplace(&mut rng, 3.0, 0.025) - 3.0).map(f64::abs).sum::<f64>() / n as f64;
        assert!((mean_abs / 0.025 - 1.0).abs() < 0.05, "{mean_abs}");
    }

    #[test]
    fn truncated_normal_stays_in_bounds() {
        let mut rng = Streams::new(2).stream("tn");
        for _ in 0..10_000 {
            let x = truncated_normal(&mut rng, 1.0, 0.5, 0.0, 2.0);
            assert!((0.0..=2.0).contains(&x));
        }
    }
}
