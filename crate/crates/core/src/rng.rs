use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a path of tags, so
/// that work items can be processed in any order (or in parallel) while the
/// output stays a pure function of the base seed.
pub(crate) fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub(crate) fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, path))
}

pub(crate) const TAG_PHRASE: u64 = 1;
pub(crate) const TAG_TURN: u64 = 2;
pub(crate) const TAG_PAIRS: u64 = 3;
pub(crate) const TAG_TRUNCATE: u64 = 4;
pub(crate) const TAG_ORDER: u64 = 5;
pub(crate) const TAG_CONTEXT: u64 = 6;
