//! Deterministic stream derivation.
//!
//! Every random draw in a run is taken from a stream derived from the run's
//! master seed plus a purpose label and integer salts. Streams are hermetic:
//! rollout sampling, label generation, and oracle draws never share state, so
//! adding draws to one phase cannot perturb another. This is what makes
//! paired-seed comparisons and byte-identical reruns possible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 step; a stable 64-bit mixer with good avalanche behavior.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Collapses `(master, domain, salts)` into a single seed, for APIs that
/// take a plain `u64` and derive their own substreams from it.
pub fn derive_seed(master: u64, domain: &str, salts: &[u64]) -> u64 {
    let mut state = master ^ fnv1a(domain.as_bytes());
    let mut out = splitmix64(&mut state);
    for &s in salts {
        state ^= s.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        out ^= splitmix64(&mut state);
    }
    out
}

/// Derives a ChaCha8 stream from `(master, domain, salts)`.
///
/// The same triple always yields the same stream on every platform.
pub fn derive_rng(master: u64, domain: &str, salts: &[u64]) -> ChaCha8Rng {
    let mut state = master ^ fnv1a(domain.as_bytes());
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    let mut stream_state = master;
    for &s in salts {
        stream_state ^= splitmix64(&mut state).wrapping_add(s.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    rng.set_stream(splitmix64(&mut stream_state));
    rng
}
