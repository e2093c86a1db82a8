//! Deterministic random streams.
//!
//! All randomness flows through ChaCha8 streams derived from a single run
//! seed. Each consumer gets its own `(purpose, index)` stream, so the
//! training loop can be resumed mid-run, or samples drawn in parallel,
//! without any consumer perturbing another's sequence.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream namespaces. Keep the discriminants stable: checkpoints replay
/// iteration streams by number.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    /// Parameter initialisation, one stream per module.
    Init(u64),
    /// Per-iteration batch composition (patch positions, reference picks).
    Batch(u64),
    /// Per-sample latent noise: iteration * MAX_BATCH + slot.
    Latent(u64),
    /// Degradation noise.
    Degrade(u64),
    /// Evaluation-time sampling.
    Eval(u64),
}

const MAX_BATCH: u64 = 4096;

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init(i) => i,
            Stream::Batch(i) => (1 << 40) + i,
            Stream::Latent(i) => (2 << 40) + i,
            Stream::Degrade(i) => (3 << 40) + i,
            Stream::Eval(i) => (4 << 40) + i,
        }
    }
}

/// Per-sample latent stream index for iteration `iter`, batch slot `slot`.
pub fn latent_stream(iter: u64, slot: usize) -> Stream {
    Stream::Latent(iter * MAX_BATCH + slot as u64)
}

/// A ChaCha stream uniquely identified by `(seed, stream)`.
pub fn stream(seed: u64, s: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s.id().into());
    rng
}
