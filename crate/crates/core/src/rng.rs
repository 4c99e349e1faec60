//! Seeded random streams.
//!
//! Every source of randomness derives from one run seed. Each consumer draws
//! from its own named stream, so adding draws in one component never shifts
//! the numbers another component sees. Streams can be further split by a
//! path of integers (epoch, batch, example) to give per-example generators
//! whose output does not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Dropout,
    Gumbel,
    Shuffle,
    ToyData,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Dropout => 2,
            Stream::Gumbel => 3,
            Stream::Shuffle => 4,
            Stream::ToyData => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngTree {
    seed: u64,
}

impl RngTree {
    pub fn new(seed: u64) -> Self {
        RngTree { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, stream: Stream) -> StreamRng {
        self.substream(stream, &[])
    }

    pub fn substream(&self, stream: Stream, path: &[u64]) -> StreamRng {
        let mut h = splitmix(self.seed ^ 0x5851_f42d_4c95_7f2d);
        h = splitmix(h ^ stream.id());
        for &p in path {
            h = splitmix(h ^ p.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        rng.set_stream(stream.id());
        rng
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
