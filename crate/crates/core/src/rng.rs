use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// FNV-1a; stable across platforms and releases, unlike std's hasher.
fn stream_id(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Generator for one named consumer of an experiment seed. Distinct names
/// give independent ChaCha streams under the same key.
pub fn named_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(name));
    rng
}
