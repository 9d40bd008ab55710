//! Counter-based random streams.
//!
//! Every draw made by a run is addressed by `(seed, domain, episode, step)`.
//! The seed selects the ChaCha key, `(domain, episode)` selects the stream
//! and `step` selects a fixed window of the keystream, so the value of a draw
//! never depends on how many draws happened before it or on thread
//! scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Keystream words reserved per step (four ChaCha blocks).
const WORDS_PER_STEP: u128 = 64;

/// Independent purposes a run draws randomness for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Domain {
    /// Initial-state and transition draws of the environment.
    Environment = 1,
    /// Random restarts of the sign-ascent maximizer.
    Maximizer = 2,
    /// Instance generation.
    Generator = 3,
    /// Packing-set rejection sampling.
    Packing = 4,
    /// Monte Carlo checks and other auxiliary draws.
    Auxiliary = 5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RunKey {
    pub seed: u64,
}

impl RunKey {
    pub fn new(seed: u64) -> Self {
        RunKey { seed }
    }

    /// Generator positioned at the window for `(domain, episode, step)`.
    pub fn rng(&self, domain: Domain, episode: u64, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        // 8 bits of domain, 56 bits of episode.
        rng.set_stream(((domain as u64) << 56) | (episode & ((1 << 56) - 1)));
        rng.set_word_pos(step as u128 * WORDS_PER_STEP);
        rng
    }

    /// A long sequential stream for bulk draws (generation, Monte Carlo).
    pub fn sequential(&self, domain: Domain, episode: u64) -> ChaCha8Rng {
        self.rng(domain, episode, 0)
    }
}
