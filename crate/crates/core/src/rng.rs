//! Seeded random streams.
//!
//! Every independent batch of work (a harness sub-run, an optimizer restart, a swap
//! batch) owns a ChaCha stream derived from the run seed and a fixed stream index, so
//! results do not depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn stream(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
