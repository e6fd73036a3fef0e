//! Counter-based random streams.
//!
//! Realization `i` of seed `s` reads ChaCha8 keyed by `s`, on stream `i`,
//! from word 0. The draws of a trajectory never depend on which worker
//! produced it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

pub fn realization_stream(seed: u64, realization_index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(realization_index);
    rng
}
