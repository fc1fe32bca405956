//! Counter-based seed derivation.
//!
//! Every random stream in the crate is keyed by a tuple such as
//! `(seed, tree_index, node_counter)`, so results never depend on the order
//! in which workers happen to run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of counters into a single 64-bit seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut acc = GOLDEN;
    for &p in parts {
        acc = splitmix64(acc.wrapping_add(GOLDEN) ^ splitmix64(p.wrapping_add(GOLDEN)));
    }
    acc
}

/// Deterministic generator for the stream identified by `parts`.
pub fn stream(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

// Stream domains, so that e.g. the balance and split streams of class 3 differ.
pub(crate) const DOMAIN_BALANCE: u64 = 1;
pub(crate) const DOMAIN_BALANCE_ORDER: u64 = 2;
pub(crate) const DOMAIN_SPLIT: u64 = 3;
pub(crate) const DOMAIN_BOOTSTRAP: u64 = 4;
pub(crate) const DOMAIN_MTRY: u64 = 5;
pub(crate) const DOMAIN_SVM: u64 = 6;
