//! Deterministically keyed random streams.
//!
//! Every consumer of randomness derives its own stream from the run seed plus a
//! purpose tag and integer keys (iteration, step, element, ...). Two code paths
//! that ask for the same key see the same draws, which is what lets factual and
//! counterfactual worlds share exogenous noise.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Stream = ChaCha8Rng;

/// Purpose tags keep streams for different subsystems disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Exogenous = 1,
    Consistency = 2,
    Init = 3,
    Discriminator = 4,
    Rollout = 5,
    Simulator = 6,
    Synthetic = 7,
    Split = 8,
    Evaluation = 9,
    Minibatch = 10,
    Catalog = 11,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a seed, purpose and keys into a single 64-bit stream seed.
pub fn stream_seed(seed: u64, purpose: Purpose, keys: &[u64]) -> u64 {
    let mut h = splitmix(seed ^ (purpose as u64).rotate_left(32));
    for &k in keys {
        h = splitmix(h ^ splitmix(k.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn stream(seed: u64, purpose: Purpose, keys: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, purpose, keys))
}

/// Uniform draw on the open interval (0, 1).
#[inline]
pub fn open_uniform<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard Gumbel draw `-ln(-ln u)`.
#[inline]
pub fn gumbel<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    -(-open_uniform(rng).ln()).ln()
}

#[inline]
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}
