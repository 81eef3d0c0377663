//! Sub-seed derivation.
//!
//! Every random stream in a run is keyed by `(master, tag, epoch, index)` and
//! mixed with SplitMix64, so any presentation can be replayed in isolation and
//! results do not depend on the order in which streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over the tag bytes; stable across platforms and releases.
fn tag_hash(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn derive_seed(master: u64, tag: &str, epoch: u64, index: u64) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ tag_hash(tag));
    h = splitmix64(h ^ epoch);
    splitmix64(h ^ index)
}

pub fn rng_for(master: u64, tag: &str, epoch: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, epoch, index))
}
