//! Seeded random streams.
//!
//! Every stream is a [`ChaCha8Rng`] seeded from `(seed, trial, component)`
//! through a SplitMix64 finalizer, so trials can run in any order or on any
//! thread and still draw the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for within one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    /// Initial belief means.
    Init,
    /// Environment sampling (transitions, rewards, fixed trajectories).
    Env,
    /// Action selection.
    Policy,
    /// Monte-Carlo greedy evaluation.
    Eval,
}

impl Component {
    fn tag(self) -> u64 {
        match self {
            Component::Init => 1,
            Component::Env => 2,
            Component::Policy => 3,
            Component::Eval => 4,
        }
    }
}

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(splitmix64(splitmix64(seed) ^ trial) ^ component)`.
pub fn stream_seed(seed: u64, trial: u64, component: Component) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ trial) ^ component.tag())
}

pub fn stream(seed: u64, trial: u64, component: Component) -> StreamRng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, trial, component))
}
