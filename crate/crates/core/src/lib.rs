//! Grounded question-answer dialog agents trained with REINFORCE, alone or
//! against a second team.

pub mod agents;
pub mod arena;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod neural;
pub mod trainer;
pub mod world;

pub use error::{Error, Result};

use rand::SeedableRng;

/// Random number generator used for every stochastic stream.
pub type RunRng = rand_chacha::ChaCha8Rng;

/// Independent stream for `label` under a run seed.
pub fn derive_rng(seed: u64, label: &str) -> RunRng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    RunRng::seed_from_u64(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derived_streams_differ_by_label_and_seed() {
        let a: u64 = derive_rng(1, "team1.train").gen();
        let b: u64 = derive_rng(1, "team2.train").gen();
        let c: u64 = derive_rng(2, "team1.train").gen();
        let d: u64 = derive_rng(1, "team1.train").gen();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, d);
    }
}
