//! Seeded random streams.
//!
//! Every random quantity is drawn from ChaCha8 keyed with
//! `ChaCha8Rng::seed_from_u64(seed)` and then moved to a fixed stream index
//! with `set_stream`, so independent consumers of the same seed never share
//! a keystream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Mini-batch index sampling inside the engine.
pub const SAMPLING_STREAM: u64 = 0;
/// Synthetic data generation.
pub const DATA_STREAM: u64 = 1;
/// Initial point.
pub const INIT_STREAM: u64 = 2;
/// Probe points for smoothness estimation.
pub const PROBE_STREAM: u64 = 3;

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
