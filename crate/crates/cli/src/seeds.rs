//! Every random choice in a run derives from one master seed.
//!
//! `seed(stage, index) = splitmix64(master + φ · (stage << 32 | index))`
//! with `φ = 0x9E3779B97F4A7C15`, wrapping arithmetic. Stage ids are fixed
//! constants, so adding stages never shifts existing seeds.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stage {
    Split = 1,
    Train = 2,
    Calibration = 3,
    SweepSubset = 4,
    SweepCorpus = 5,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stage: Stage, index: u64) -> u64 {
    let counter = ((stage as u64) << 32) | (index & 0xFFFF_FFFF);
    splitmix64(master.wrapping_add(GOLDEN.wrapping_mul(counter)))
}
