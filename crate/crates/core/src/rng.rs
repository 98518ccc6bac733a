//! Keyed random streams.
//!
//! Every consumer of randomness derives its own generator from an explicit
//! `(seed, stream name, counters...)` key, so results never depend on the
//! order in which independent consumers run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Generator for the stream `name` under `seed`, further keyed by `counters`
/// (epoch, example id, ...).
pub fn stream(seed: u64, name: &str, counters: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(seed ^ fnv1a(name.as_bytes()));
    for &c in counters {
        state = splitmix64(state ^ splitmix64(c.wrapping_add(0x5851_f42d_4c95_7f2d)));
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
