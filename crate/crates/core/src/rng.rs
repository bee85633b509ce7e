//! Deterministic per-trial randomness.
//!
//! Every trial owns an independent ChaCha8 substream keyed by
//! (seed, domain, context, trial index). Variates inside a trial are consumed
//! in a fixed order (lambda z, lambda azimuth, swap bit, kill bit, detection),
//! so serial and parallel runs over any batch partition are bit-identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Logical randomness domains. Each domain sees an independent stream family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamDomain {
    /// Shared hidden-variable stream for trial generation.
    Trial = 0,
    /// Alice's private setting choices (random-quadruple schedule).
    AliceSettings = 2,
    /// Bob's private setting choices (random-quadruple schedule).
    BobSettings = 3,
}

const INDEX_BITS: u32 = 40;

/// ChaCha8 stream keyed by (domain, context, index). `context` separates
/// e.g. scan grid points; `index` is typically the trial index (< 2^40).
pub fn substream(seed: u64, domain: StreamDomain, context: u16, index: u64) -> ChaCha8Rng {
    assert!(index < 1 << INDEX_BITS, "substream index out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stream =
        ((domain as u64) << (INDEX_BITS + 16)) | ((context as u64) << INDEX_BITS) | index;
    rng.set_stream(stream);
    rng
}

/// The fixed uniform variates of one trial, in draw order.
#[derive(Debug, Clone, Copy)]
pub struct TrialDraws {
    pub u_z: f64,
    pub u_phi: f64,
    pub u_swap: f64,
    pub u_kill: f64,
    pub u_detect: f64,
}

/// Draws the full variate block for trial `index`. All five variates are
/// always consumed so the layout never depends on the model variant.
pub fn trial_draws(seed: u64, context: u16, index: u64) -> TrialDraws {
    let mut rng = substream(seed, StreamDomain::Trial, context, index);
    TrialDraws {
        u_z: rng.random(),
        u_phi: rng.random(),
        u_swap: rng.random(),
        u_kill: rng.random(),
        u_detect: rng.random(),
    }
}

/// Deterministic setting index in {0, 1} for one side of one trial.
pub fn setting_draw(seed: u64, domain: StreamDomain, context: u16, index: u64) -> u8 {
    let mut rng = substream(seed, domain, context, index);
    if rng.random::<f64>() < 0.5 {
        0
    } else {
        1
    }
}
