//! Counter-based random streams.
//!
//! Every stochastic step in a simulation draws from a [`Streams`] handle
//! identified by a path of integers below one root seed, e.g.
//! `(root, replication, batch)`. Children are derived by hashing the path, so
//! any stream can be materialised without touching its siblings and parallel
//! schedules reproduce sequential ones bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator handed to simulation code.
pub type SimRng = ChaCha8Rng;

/// Labels separating independent uses of the same root seed.
pub mod label {
    pub const REPLICATION: u64 = 0x7265_706c;
    pub const BATCH: u64 = 0x6261_7463;
    pub const NULL_CALIBRATION: u64 = 0x6e75_6c6c;
    pub const LAMBDA: u64 = 0x6c61_6d62;
    pub const CUTOFF: u64 = 0x6375_746f;
    pub const CONTEXT: u64 = 0x6374_7874;
    pub const POLICY: u64 = 0x706f_6c69;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Streams {
    key: u64,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Streams {
    pub fn new(root_seed: u64) -> Self {
        Self {
            key: splitmix64(root_seed ^ 0x5EED_0000_0000_0000),
        }
    }

    /// Child stream `index` below this one.
    pub fn child(self, index: u64) -> Self {
        Self {
            key: splitmix64(self.key ^ splitmix64(index.wrapping_add(0xA076_1D64_78BD_642F))),
        }
    }

    pub fn labeled(self, label: u64, index: u64) -> Self {
        self.child(label).child(index)
    }

    pub fn replication(self, rep: u64) -> Self {
        self.labeled(label::REPLICATION, rep)
    }

    pub fn batch(self, t: u64) -> Self {
        self.labeled(label::BATCH, t)
    }

    /// Materialises a generator for this stream.
    pub fn rng(self) -> SimRng {
        let mut seed = [0u8; 32];
        let mut k = self.key;
        for chunk in seed.chunks_mut(8) {
            k = splitmix64(k);
            chunk.copy_from_slice(&k.to_le_bytes());
        }
        SimRng::from_seed(seed)
    }

    pub fn key(self) -> u64 {
        self.key
    }
}
