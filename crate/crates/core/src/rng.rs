//! Deterministic counter-based random streams.
//!
//! Every random draw in the library comes from a stream derived from
//! `(master seed, trial index, module label, call-site tag)`. Streams are
//! independent by construction, so results do not depend on thread count or
//! execution order: trial 17 consumes the same randomness whether it runs
//! first or last.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Concrete stream type used throughout the library.
pub type RngStream = ChaCha12Rng;

/// Derives an independent stream keyed by `(seed, trial, module, tag)`.
///
/// The key tuple is hashed into a 256-bit ChaCha seed, so distinct tuples
/// give statistically independent streams.
pub fn derive_stream(seed: u64, trial: u64, module: &str, tag: &str) -> RngStream {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(trial.to_le_bytes());
    h.update([module.len() as u8]);
    h.update(module.as_bytes());
    h.update([tag.len() as u8]);
    h.update(tag.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(key)
}

/// Fills a vector with i.i.d. standard-normal draws.
pub fn standard_normal_vec(n: usize, rng: &mut RngStream) -> ndarray::Array1<f64> {
    use rand::Rng;
    ndarray::Array1::from_shape_fn(n, |_| rng.sample(rand_distr::StandardNormal))
}
