//! Seeded random streams.
//!
//! Every consumer of randomness derives its generator from a `(seed, stream)`
//! pair. The generator is ChaCha8 with the 64-bit stream id selecting an
//! independent keystream, so the training data, test data, initial weights,
//! mini-batch order, focus points and plane directions never share draws and
//! are reproducible on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    TrainData = 1,
    TestData = 2,
    Init = 3,
    Minibatch = 4,
    Sampling = 5,
    PlaneDirections = 6,
    PowerIteration = 7,
}

pub fn stream_rng(seed: u64, stream: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
