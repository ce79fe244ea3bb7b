//! Seeded PRNG streams. Every random draw in the toolkit comes from a PCG32
//! (`rand_pcg::Pcg32`) keyed by a user seed and a purpose-specific stream id,
//! so independent consumers never share a sequence.

use rand_pcg::Pcg32;

pub const STREAM_SPLIT: u64 = 0x5350_4c49_0000_0000;
pub const STREAM_SVM: u64 = 0x5356_4d00_0000_0000;
pub const STREAM_CNN_INIT: u64 = 0x434e_4e49_0000_0000;
pub const STREAM_CNN_SHUFFLE: u64 = 0x434e_4e53_0000_0000;
pub const STREAM_SYNTH: u64 = 0x5359_4e54_0000_0000;

pub fn stream_rng(seed: u64, stream: u64) -> Pcg32 {
    Pcg32::new(seed ^ 0x853c_49e6_748f_ea9b, stream)
}
