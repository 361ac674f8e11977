//! Seed plumbing. Every stochastic routine takes an explicit 64-bit seed; child
//! seeds are derived from a root seed and a tag so components never share a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `root` and a numeric stream index.
pub fn derive(root: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(root) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Derives a child seed from `root` and a string tag (FNV-1a of the tag).
pub fn derive_tagged(root: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    derive(root, h)
}
