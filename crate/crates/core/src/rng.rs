//! Seeded, splittable random streams.
//!
//! All randomness in the crate flows through [`Stream`], a ChaCha generator
//! addressed by `(seed, stream id)`. Substreams are independent for distinct
//! ids, which lets dataset generation, nuisance fits and sweep repetitions
//! draw from disjoint streams while staying reproducible from a single seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type Stream = ChaCha12Rng;

/// Root stream for a seed.
pub fn master(seed: u64) -> Stream {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Independent substream `id` of `seed`.
pub fn substream(seed: u64, id: u64) -> Stream {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Mixes labels into a derived seed (splitmix64 finalizer per word).
///
/// Used to address deep hierarchies (cell / method / repetition) where a
/// single stream id is not enough.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    let mut state = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &l in labels {
        state = state.wrapping_add(l).wrapping_add(0x9e37_79b9_7f4a_7c15);
        state = splitmix64(state);
    }
    state
}

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fisher-Yates shuffle of `0..n` driven by `rng`.
pub fn shuffled_indices(n: usize, rng: &mut Stream) -> Vec<usize> {
    use rand::Rng;
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
