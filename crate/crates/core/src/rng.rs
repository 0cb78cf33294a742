//! Seedable, splittable random streams.
//!
//! Every (seed, episode, stream) triple maps to an independent ChaCha20
//! stream, so results do not depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn stream(seed: u64, key: u64, stream: u64) -> ChaCha20Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&key.to_le_bytes());
    let mut rng = ChaCha20Rng::from_seed(bytes);
    rng.set_stream(stream);
    rng
}

/// Uniform draw on `(0, 1]`, safe to take the logarithm of.
pub fn open_unit<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}
