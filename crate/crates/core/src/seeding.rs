//! Per-sample random streams.
//!
//! Every random draw in a batch is keyed by `(master_seed, sample_index,
//! stream)`, so a sample's content never depends on which worker produced it
//! or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random streams consumed while generating one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Source = 1,
    Jitter = 2,
    ToaNoise = 3,
    Offsets = 4,
    Waveform = 5,
    Split = 6,
    Forest = 7,
    MlpInit = 8,
    MlpShuffle = 9,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed for `(master, index, stream)`.
pub fn derive_seed(master: u64, index: u64, stream: Stream) -> u64 {
    let a = splitmix64(master);
    let b = splitmix64(a ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93));
    splitmix64(b ^ (stream as u64).wrapping_mul(0xa076_1d64_78bd_642f))
}

pub fn rng_for(master: u64, index: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, index, stream))
}
