//! Reproducible random streams for parallel replicates.
//!
//! Every replicate draws from its own ChaCha8 stream, selected by
//! `(root seed, experiment id, replicate index)`. Results therefore do not
//! depend on how replicates are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[inline]
pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit id for an experiment name (FNV-1a).
pub fn experiment_id(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    root: u64,
}

impl SeedStream {
    pub fn new(root: u64) -> Self {
        SeedStream { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Generator for replicate `index` of `experiment`.
    pub fn rng(&self, experiment: u64, index: u64) -> SimRng {
        let key = splitmix64(self.root ^ splitmix64(experiment));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(index);
        rng
    }

    /// A derived stream family, e.g. one per torus size in a sweep.
    pub fn child(&self, tag: u64) -> SeedStream {
        SeedStream {
            root: splitmix64(self.root ^ splitmix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d))),
        }
    }
}
