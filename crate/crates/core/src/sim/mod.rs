//! Benchmark environments: a stochastic pendulum and a planar robot.

pub mod pendulum;
pub mod robot;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use pendulum::*;
pub use robot::*;

/// Independent random stream `stream` derived from a root seed.
pub fn episode_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
