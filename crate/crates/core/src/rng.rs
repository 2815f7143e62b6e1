//! Seeded random streams.
//!
//! Every random quantity is drawn from a ChaCha stream selected by
//! `(seed, stream id)`, so results do not depend on evaluation order or on
//! how work is split across threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent generator for `stream` under `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A child seed for `stream` under `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    substream(seed, stream).next_u64()
}

/// Stream id for dataset `index` of replication `rep`.
pub fn dataset_stream(rep: u64, index: u64) -> u64 {
    (rep << 20) | index
}
