//! Seed derivation.
//!
//! Every random decision in a run is keyed by a path of integers hashed into
//! a 64-bit seed, so results never depend on call order or scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags that keep sub-seeds of one run disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Run = 1,
    Process = 2,
    InitialDesign = 3,
    Candidates = 4,
    Noise = 5,
    Folds = 6,
    Fit = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a base seed together with a stream tag and an index path.
pub fn derive(base: u64, stream: Stream, path: &[u64]) -> u64 {
    let mut h = splitmix64(base ^ splitmix64(stream as u64));
    for &p in path {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    h
}

/// Seed of run `run_index` under `master_seed`.
pub fn run_seed(master_seed: u64, run_index: usize) -> u64 {
    derive(master_seed, Stream::Run, &[run_index as u64])
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
