//! Reproducible, order-independent random streams.
//!
//! Every replicate draws from its own ChaCha stream keyed by `(seed, purpose, index)`, so the
//! result of a replicate never depends on how replicates are scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Factory for independent streams derived from a single user seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The stream for replicate `index` of the computation named `purpose`.
    pub fn get(&self, purpose: &str, index: u64) -> SimRng {
        let mut rng = SimRng::seed_from_u64(splitmix64(self.seed ^ splitmix64(fnv1a(purpose))));
        rng.set_stream(index);
        rng
    }

    /// A child factory, for nesting one seeded computation inside another.
    pub fn derive(&self, purpose: &str) -> Streams {
        Streams::new(splitmix64(self.seed.wrapping_add(fnv1a(purpose))))
    }
}

/// Runs `count` replicates in parallel, each with its own stream, and returns the results in
/// replicate order.
pub fn replicate<T, F>(streams: &Streams, purpose: &str, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut SimRng) -> T + Sync + Send,
{
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.get(purpose, i as u64);
            f(i, &mut rng)
        })
        .collect()
}
