//! Seeded random streams.
//!
//! All randomness comes from ChaCha20 (a counter-based generator) keyed by
//! the run seed, with a distinct stream id per subsystem. Point sampling,
//! weight initialization and the projection order of the gradient combiner
//! therefore never consume each other's numbers, and changing the network
//! architecture leaves the sampled point sets untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub use rand_chacha::ChaCha20Rng as StreamRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Sampling = 1,
    Init = 2,
    Pcgrad = 3,
    /// Test and validation fixtures.
    Fixture = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
