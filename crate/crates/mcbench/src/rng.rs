//! Keyed random streams.
//!
//! Every draw is addressed by its coordinates instead of by the order in
//! which it is requested, so a move computed by a speculative duplicate sees
//! exactly the numbers the sequential run would have seen.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Init = 0,
    Move = 1,
    Accept = 2,
    Exchange = 3,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct RngKey {
    pub seed: u64,
    pub replica: u32,
    pub iteration: u64,
    pub domain: u32,
    pub purpose: Purpose,
}

const REPLICA_BITS: u32 = 14;
const DOMAIN_BITS: u32 = 14;
const ITER_BITS: u32 = 34;

impl RngKey {
    pub fn new(seed: u64, replica: usize, iteration: usize, domain: usize, purpose: Purpose) -> Self {
        RngKey {
            seed,
            replica: replica as u32,
            iteration: iteration as u64,
            domain: domain as u32,
            purpose,
        }
    }

    /// Packs the coordinates into a ChaCha stream id.
    ///
    /// # Panics
    /// If a coordinate does not fit its field.
    pub fn stream(&self) -> u64 {
        assert!(self.replica < 1 << REPLICA_BITS, "replica {} out of range", self.replica);
        assert!(self.domain < 1 << DOMAIN_BITS, "domain {} out of range", self.domain);
        assert!(self.iteration < 1 << ITER_BITS, "iteration {} out of range", self.iteration);
        let mut s = self.iteration;
        s = (s << REPLICA_BITS) | self.replica as u64;
        s = (s << DOMAIN_BITS) | self.domain as u64;
        (s << 2) | self.purpose as u64
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream());
        rng
    }

    /// First uniform draw in [0, 1) of the stream.
    pub fn uniform(&self) -> f64 {
        use rand::Rng;
        self.rng().random::<f64>()
    }
}
