//! Seeded random streams and the few distributions the crate draws from.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

/// The generator used everywhere in the crate.
pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream from `seed` and a stream index.
pub fn split(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

/// Beta(a, a) draw as `g1 / (g1 + g2)` with `g1, g2 ~ Gamma(a, 1)`.
///
/// Both gamma draws come from a rejection sampler, so the number of words
/// consumed from `rng` varies, but the result is a pure function of the
/// generator state.
pub fn symmetric_beta<R: Rng + ?Sized>(rng: &mut R, a: f64) -> f64 {
    let gamma = Gamma::new(a, 1.0).expect("shape must be positive");
    loop {
        let g1: f64 = gamma.sample(rng);
        let g2: f64 = gamma.sample(rng);
        let s = g1 + g2;
        if s > 0.0 && s.is_finite() {
            return g1 / s;
        }
    }
}

/// Uniform index in `0..n` excluding `skip`. Requires `n >= 2`.
pub fn partner_index<R: Rng + ?Sized>(rng: &mut R, n: usize, skip: usize) -> usize {
    debug_assert!(n >= 2 && skip < n);
    let j = rng.random_range(0..n - 1);
    if j >= skip {
        j + 1
    } else {
        j
    }
}
