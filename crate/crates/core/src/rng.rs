//! Counter-based random stream derivation.
//!
//! Every stochastic draw in the pipeline comes from a stream addressed by
//! `(master seed, purpose, user, step)`. The master seed keys a ChaCha8
//! generator, `(purpose, user)` selects the 64-bit stream id and `step`
//! selects a block offset inside that stream. Streams are therefore
//! independent of the order in which users or steps are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Init = 1,
    Shuffle = 2,
    TimeDraw = 3,
    Forward = 4,
    Dropout = 5,
    BurnUp = 6,
    Split = 7,
    Synth = 8,
    TieBreak = 9,
    Verify = 10,
}

/// Words reserved per step inside one stream (2^40 32-bit words).
const STEP_STRIDE: u128 = 1 << 40;

/// Derive the generator for `(seed, purpose, user, step)`.
pub fn stream(seed: u64, purpose: Purpose, user: u64, step: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&splitmix64(seed ^ 0x5354_4147_4543_4621).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(((purpose as u64) << 56) ^ (user & 0x00ff_ffff_ffff_ffff));
    rng.set_word_pos(u128::from(step) * STEP_STRIDE);
    rng
}

/// SplitMix64 finalizer. Used for hashing small integer tuples.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic 64-bit hash of `(seed, a, b)`.
pub fn hash3(seed: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b.rotate_left(17))
}
