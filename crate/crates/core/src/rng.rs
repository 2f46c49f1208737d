//! Counter-based random streams.
//!
//! Every random quantity in the engine is drawn from a ChaCha stream addressed
//! by `(seed, key, stream)`, so a given row of a resample matrix or a given row
//! of a projection matrix can be regenerated independently of execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 64-bit FNV-1a, used to turn labels (layer ids, battery names) into stream keys.
pub fn label_key(label: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in label.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

pub fn keyed_rng(seed: u64, key: u64, stream: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&key.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(bytes);
    rng.set_stream(stream);
    rng
}
