use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::LatentGrid;
use crate::error::Result;

/// Seeded, stream-separated random source.
///
/// Backed by ChaCha8 (a counter-based cipher generator): the 64-bit seed is
/// expanded to a 256-bit key with `SeedableRng::seed_from_u64`, and `stream_id`
/// selects the ChaCha stream (nonce). Normal deviates come from the ziggurat
/// sampler of `rand_distr::StandardNormal`. Both algorithms are pinned through
/// `Cargo.lock`, so a given `(seed, stream_id)` yields the same sequence on
/// every platform.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }
}

/// I.i.d. standard normal grid drawn from `rng`.
pub fn sample_gaussian(
    rng: &mut RngStream,
    channels: usize,
    height: usize,
    width: usize,
) -> Result<LatentGrid> {
    let mut g = LatentGrid::zeros(channels, height, width)?;
    rng.fill_normal(g.data_mut());
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_stream_is_bit_identical() {
        let a = sample_gaussian(&mut RngStream::new(7, 0), 1, 4, 4).unwrap();
        let b = sample_gaussian(&mut RngStream::new(7, 0), 1, 4, 4).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn streams_differ() {
        let a = sample_gaussian(&mut RngStream::new(7, 0), 1, 4, 4).unwrap();
        let b = sample_gaussian(&mut RngStream::new(7, 1), 1, 4, 4).unwrap();
        assert_ne!(a.data(), b.data());
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(sample_gaussian(&mut RngStream::new(7, 0), 1, 0, 4).is_err());
    }

    #[test]
    fn moments_at_4096() {
        let g = sample_gaussian(&mut RngStream::new(7, 0), 1, 64, 64).unwrap();
        let n = g.len() as f64;
        let mean = g.data().iter().sum::<f64>() / n;
        let var = g.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 4.0 / 64.0, "mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn sequence_is_frozen() {
        // Guards against a silent change of generator or sampler.
        let mut r = RngStream::new(7, 0);
        let first: Vec<u64> = (0..2).map(|_| r.next_u64()).collect();
        let mut again = RngStream::new(7, 0);
        assert_eq!(first, vec![again.next_u64(), again.next_u64()]);
        assert_eq!(FROZEN_U64, first[0]);
        let z = RngStream::new(7, 0).normal();
        assert_eq!(z.to_bits(), FROZEN_NORMAL_BITS);
    }

    const FROZEN_U64: u64 = 0x2865_5334_23d7_43bb;
    const FROZEN_NORMAL_BITS: u64 = 0xbfe8_cfd8_cced_03f8;
}
