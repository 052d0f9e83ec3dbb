//! Counter-based random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 generator keyed
//! by `(seed, task, index)`: the 64-bit seed fills the key, and `task` and
//! `index` are mixed into the 64-bit stream id. Two draws with the same triple
//! are identical no matter which worker performs them or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Task identifiers used to separate independent consumers of one seed.
pub mod task {
    pub const TARGET_SAMPLES: u64 = 1;
    pub const PUSHFORWARD: u64 = 2;
    pub const IMPORTANCE_NODES: u64 = 3;
    pub const GAUSSIAN_REFERENCE: u64 = 4;
    pub const PROBE_DIRECTIONS: u64 = 5;
    pub const PROJECTIONS: u64 = 6;
    pub const TEST_FUNCTIONS: u64 = 7;
    pub const WEIERSTRASS: u64 = 8;
}

/// Generator for item `index` of task `task` under `seed`.
pub fn stream(seed: u64, task: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index);
    rng
}
