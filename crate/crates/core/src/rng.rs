//! Labeled random sub-streams.
//!
//! One user seed drives every random choice of a run. Each stage draws from
//! its own ChaCha stream selected by a stable hash of a label, so changing
//! how one stage consumes randomness never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for `label` under `seed`.
pub fn substream(seed: u64, label: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label_hash(label));
    rng
}

// 64-bit FNV-1a; fixed so labels map to the same streams across builds.
fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}
