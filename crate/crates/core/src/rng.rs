//! Counter-based random streams.
//!
//! A stream is identified by a root seed plus a path of integer keys
//! (purpose tag, replication index, resample index, ...). The path is mixed
//! into a ChaCha key and the final key selects the ChaCha stream, so two
//! distinct paths never share draws and the draws of one path do not depend
//! on how many other streams were consumed before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags keep streams of different subsystems apart.
pub mod tag {
    pub const SCENARIO: u64 = 0x5ce0;
    pub const BOOTSTRAP: u64 = 0xb007;
    pub const TRUTH: u64 = 0x7247;
    pub const COPULA: u64 = 0xc0a1;
    pub const TEST: u64 = 0x7e57;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic generator for `seed` and the key path `keys`.
pub fn stream(seed: u64, keys: &[u64]) -> StreamRng {
    let (last, prefix) = match keys.split_last() {
        Some((last, prefix)) => (*last, prefix),
        None => (0, &[][..]),
    };
    let mut h = splitmix64(seed);
    for &k in prefix {
        h = splitmix64(h ^ splitmix64(k));
    }
    let mut key = [0u8; 32];
    let mut s = h;
    for chunk in key.chunks_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(last);
    rng
}

/// A 64-bit seed derived from `seed` and a key path, for handing to
/// components that take a plain seed.
pub fn derive(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(seed), |h, &k| splitmix64(h ^ splitmix64(k)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_path_same_draws() {
        let a: Vec<u64> = stream(7, &[1, 2, 3]).random_iter().take(8).collect();
        let b: Vec<u64> = stream(7, &[1, 2, 3]).random_iter().take(8).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn different_paths_differ() {
        let a: u64 = stream(7, &[1, 2, 3]).random();
        let b: u64 = stream(7, &[1, 2, 4]).random();
        let c: u64 = stream(7, &[1, 3, 3]).random();
        let d: u64 = stream(8, &[1, 2, 3]).random();
        assert!(a != b && a != c && a != d && b != c);
    }
}
