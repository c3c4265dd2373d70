//! Deterministic seed derivation.
//!
//! Every random stream in a run is a ChaCha8 generator keyed by the
//! experiment seed plus a purpose tag and coordinates (client id, round).
//! Streams never depend on execution order, so parallel client training
//! and resumed runs draw identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    ModelInit = 1,
    RegulatorInit = 2,
    Partition = 3,
    Selection = 4,
    LocalTraining = 5,
    SyntheticTrain = 6,
    SyntheticTest = 7,
    Subsample = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: Stream, coords: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(stream as u64));
    for &c in coords {
        h = splitmix64(h ^ splitmix64(c.wrapping_add(0x5851_F42D_4C95_7F2D)));
    }
    h
}

pub fn stream_rng(seed: u64, stream: Stream, coords: &[u64]) -> SimRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, coords))
}
