//! Independent seeded random streams.
//!
//! Every consumer of randomness draws from its own ChaCha stream derived from
//! the master seed, so adding draws in one place never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Parameter initialization.
    Init,
    /// Training episode sampling.
    Episodes,
    /// Augmentation radii and pairings.
    Augment,
    /// Synthetic data rendering.
    Data,
    /// Feature sampling for domain-gap analysis.
    Features,
    /// One evaluation task.
    EvalTask(u64),
    /// One frequency-probe task.
    ProbeTask(u64),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Episodes => 2,
            Stream::Augment => 3,
            Stream::Data => 4,
            Stream::Features => 5,
            Stream::EvalTask(i) => (1 << 40) | i,
            Stream::ProbeTask(i) => (2 << 40) | i,
        }
    }
}

pub fn stream_rng(seed: u64, stream: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}
