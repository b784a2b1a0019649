//! Named random substreams derived from one master seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Uniform { low: f64, high: f64 },
    Exponential { mean: f64 },
    Bernoulli { p: f64 },
    /// Uniform index into a set of `n` items.
    DiscreteUniform { n: usize },
}

impl Distribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Distribution::Uniform { low, high } if !(low.is_finite() && high.is_finite() && low <= high) => {
                Err(SimError::config("distribution", format!("invalid uniform({low}, {high})")))
            }
            Distribution::Exponential { mean } if !(mean.is_finite() && mean > 0.0) => {
                Err(SimError::config("distribution", format!("exponential mean must be positive, got {mean}")))
            }
            Distribution::Bernoulli { p } if !(0.0..=1.0).contains(&p) => {
                Err(SimError::config("distribution", format!("bernoulli p must lie in [0,1], got {p}")))
            }
            Distribution::DiscreteUniform { n: 0 } => {
                Err(SimError::config("distribution", "discrete-uniform over an empty set"))
            }
            _ => Ok(()),
        }
    }
}

// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Derives the 64-bit seed of substream `stream_id` under `master_seed`.
pub fn derive_seed(master_seed: u64, stream_id: &str) -> u64 {
    mix64(mix64(master_seed.wrapping_add(0x9e37_79b9_7f4a_7c15)) ^ fnv1a(stream_id))
}

#[derive(Debug, Clone)]
pub struct RngStream {
    id: String,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: &str) -> Self {
        RngStream {
            id: stream_id.to_string(),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(master_seed, stream_id)),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// One draw from `dist`. Bernoulli yields 0.0/1.0; discrete-uniform yields the index.
    pub fn draw(&mut self, dist: Distribution) -> Result<f64> {
        dist.validate()?;
        Ok(match dist {
            Distribution::Uniform { low, high } => self.uniform(low, high),
            Distribution::Exponential { mean } => self.exponential(mean),
            Distribution::Bernoulli { p } => f64::from(u8::from(self.bernoulli(p))),
            Distribution::DiscreteUniform { n } => self.index(n) as f64,
        })
    }

    /// Uniform in `[low, high)`.
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.rng.gen::<f64>()
    }

    /// Inverse-transform exponential sample.
    pub fn exponential(&mut self, mean: f64) -> f64 {
        let u: f64 = self.rng.gen();
        -mean * (1.0 - u).ln()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        // p == 0 must never succeed, p == 1 must always succeed.
        self.rng.gen::<f64>() < p
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_zero_is_always_false() {
        let mut s = RngStream::new(1, "rach");
        assert!((0..10_000).all(|_| !s.bernoulli(0.0)));
        assert!((0..10_000).all(|_| s.bernoulli(1.0)));
    }

    #[test]
    fn exponential_mean_converges() {
        let mut s = RngStream::new(42, "traffic-ht");
        let n = 100_000;
        let mean = (0..n).map(|_| s.exponential(0.1)).sum::<f64>() / n as f64;
        assert!((mean - 0.1).abs() / 0.1 < 0.02, "mean {mean}");
    }

    #[test]
    fn same_seed_same_stream_is_reproducible() {
        let mut a = RngStream::new(7, "mobility");
        let mut b = RngStream::new(7, "mobility");
        let xs: Vec<f64> = (0..1000).map(|_| a.uniform(0.0, 1.0)).collect();
        let ys: Vec<f64> = (0..1000).map(|_| b.uniform(0.0, 1.0)).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn streams_are_independent_by_label() {
        let mut a = RngStream::new(7, "mobility");
        let mut b = RngStream::new(7, "traffic-ht");
        let xs: Vec<f64> = (0..8).map(|_| a.uniform(0.0, 1.0)).collect();
        let ys: Vec<f64> = (0..8).map(|_| b.uniform(0.0, 1.0)).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let mut s = RngStream::new(0, "x");
        assert!(s.draw(Distribution::Exponential { mean: -1.0 }).is_err());
        assert!(s.draw(Distribution::Bernoulli { p: 1.5 }).is_err());
        assert!(s.draw(Distribution::DiscreteUniform { n: 0 }).is_err());
        assert!(s.draw(Distribution::Uniform { low: 2.0, high: 1.0 }).is_err());
        assert!(s.draw(Distribution::DiscreteUniform { n: 3 }).unwrap() < 3.0);
    }
}
