//! Deterministic random number generation.
//!
//! Every stochastic operation draws from an explicitly passed ChaCha
//! generator. Independent units of work (corpus segments, ablation cells,
//! sampling jobs) get independent streams of the same master seed, so runs
//! are bit-reproducible and parallelizable.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type Rng = ChaCha20Rng;

/// Generator for (seed, stream). Distinct streams never overlap.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Full generator state, serializable into checkpoints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub const BYTES: usize = 56;

    pub fn capture(rng: &Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> Rng {
        let mut rng = ChaCha20Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }

    pub fn to_bytes(&self) -> [u8; Self::BYTES] {
        let mut out = [0u8; Self::BYTES];
        out[..32].copy_from_slice(&self.seed);
        out[32..40].copy_from_slice(&self.stream.to_le_bytes());
        out[40..56].copy_from_slice(&self.word_pos.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8; Self::BYTES]) -> Self {
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&bytes[..32]);
        let stream = u64::from_le_bytes(bytes[32..40].try_into().unwrap());
        let word_pos = u128::from_le_bytes(bytes[40..56].try_into().unwrap());
        RngState {
            seed,
            stream,
            word_pos,
        }
    }
}
