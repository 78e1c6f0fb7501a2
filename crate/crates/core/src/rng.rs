//! Seeded random streams.
//!
//! Every random decision in the pipeline draws from a ChaCha8 generator keyed
//! by a 64-bit seed and a 64-bit stream id. The stream id is built from the
//! purpose of the draw plus the indices that identify it (iteration, batch
//! slot, character, test repetition), so results never depend on how work is
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purposes get distinct high bytes so their streams never collide.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Init = 1,
    Shuffle = 2,
    Augment = 3,
    Dropout = 4,
    TestDrop = 5,
    Synth = 6,
}

/// Generator for `seed` on the stream identified by `purpose` and `index`.
///
/// The stream id is `(purpose << 56) | (index & 0x00ff_ffff_ffff_ffff)`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 56) | (index & 0x00ff_ffff_ffff_ffff));
    rng
}

/// Packs two indices into one stream index (32 bits each after masking).
pub fn pair(a: u64, b: u64) -> u64 {
    ((a & 0xff_ffff) << 32) | (b & 0xffff_ffff)
}

/// Packs three indices: 24 bits for `a`, 20 for `b`, 12 for `c`.
pub fn triple(a: u64, b: u64, c: u64) -> u64 {
    ((a & 0xff_ffff) << 32) | ((b & 0xf_ffff) << 12) | (c & 0xfff)
}
