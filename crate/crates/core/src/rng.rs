//! Seed fan-out.
//!
//! Every random quantity is drawn from a ChaCha8 stream whose key is derived
//! from `(master seed, purpose label)` and whose stream number is the sample
//! index. Streams therefore depend only on those three values and never on
//! which worker happens to draw them.

use crate::lattice::Site;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Child seed for `(master, label, index)`.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let a = splitmix64(master ^ splitmix64(label_hash(label)));
    splitmix64(a ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}

fn key_from(seed: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    let mut s = seed;
    for chunk in key.chunks_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    key
}

/// Sample stream `index` of the family `(master, label)`.
pub fn stream(master: u64, label: &str, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::from_seed(key_from(derive_seed(master, label, 0)));
    rng.set_stream(index);
    rng
}

/// Stream attached to one lattice site of an environment.
pub fn site_stream(seed: u64, site: Site) -> Stream {
    let mut h = derive_seed(seed, "site", 0);
    for &c in &site.0 {
        h = splitmix64(h ^ (c as i64 as u64));
    }
    ChaCha8Rng::from_seed(key_from(h))
}
