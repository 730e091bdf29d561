//! Seeded, labelled random streams.
//!
//! Every random draw in the simulator comes from a [`ChaCha8Rng`] derived from
//! `(seed, stream, index)`, so channel, noise, data and initialization draws
//! never share state and a whole run is reproducible from one 64-bit seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose label of a random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Channel,
    Noise,
    Data,
    Init,
    Calibration,
    Evaluation,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Channel => 0x43_48_41_4e,
            Stream::Noise => 0x4e_4f_49_53,
            Stream::Data => 0x44_41_54_41,
            Stream::Init => 0x49_4e_49_54,
            Stream::Calibration => 0x43_41_4c_49,
            Stream::Evaluation => 0x45_56_41_4c,
        }
    }
}

/// Root seed of a simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngSeed(pub u64);

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngSeed {
    /// Generator for the `index`-th draw of `stream`.
    pub fn rng(&self, stream: Stream, index: u64) -> ChaCha8Rng {
        let mut state = self.0 ^ stream.tag().rotate_left(32);
        let _ = splitmix64(&mut state);
        state ^= index.wrapping_mul(0xd1b5_4a32_d192_ed03);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }

    /// A child seed, used to give each configuration of a sweep its own root.
    pub fn derive(&self, label: u64) -> RngSeed {
        let mut state = self.0 ^ label.wrapping_mul(0xa076_1d64_78bd_642f);
        RngSeed(splitmix64(&mut state))
    }
}
