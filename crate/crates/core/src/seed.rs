//! Counter-based seed derivation.
//!
//! Every stochastic stage takes a `u64` seed. Stage seeds are derived from a
//! master seed by reading one word of an independent ChaCha stream, so a seed
//! depends only on `(master, stream, counter)` and never on evaluation order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Named streams used by the library. Callers may use any other value.
pub mod stream {
    pub const BALANCE: u64 = 1;
    pub const FOLDS: u64 = 2;
    pub const FOLD_TRAIN: u64 = 3;
    pub const FILTER: u64 = 4;
    pub const GTB: u64 = 5;
    pub const GU: u64 = 6;
    pub const TRAIN: u64 = 7;
    pub const PROBE: u64 = 8;
    pub const SYNTH: u64 = 9;
    pub const HOLDOUT: u64 = 10;
}

/// Derives a child seed from `master` for the given stream and counter.
/// Derived seeds use 63 bits so they stay valid TOML integers.
pub fn derive_seed(master: u64, stream: u64, counter: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(counter) * 2);
    rng.next_u64() >> 1
}

/// Seeded generator used throughout the crate.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
