//! Seeded, splittable generator shared by every sampling operation.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type LabRng = ChaCha20Rng;

pub fn seeded(seed: u64) -> LabRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Independent generator for worker or item `stream` under `seed`.
pub fn split(seed: u64, stream: u64) -> LabRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
