//! Deterministic, position-addressed Gaussian noise.
//!
//! Every random draw in the pipeline comes from a ChaCha8 stream whose seed
//! is derived from the global seed and a path of labels (stage, axis, index,
//! step, phase). Draws therefore do not depend on the order in which clips
//! are processed, which keeps serial and parallel execution bit-identical.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::frame::Frame;

/// Phase labels used when deriving child seeds.
pub mod label {
    pub const STAGE_A1: u64 = 0xA1;
    pub const STAGE_A2: u64 = 0xA2;
    pub const STAGE_A3: u64 = 0xA3;
    pub const INTERIOR_INIT: u64 = 0xB0;
    pub const CAMERA_PASS: u64 = 0xB1;
    pub const CAMERA_RENOISE: u64 = 0xB2;
    pub const TIME_PASS: u64 = 0xB3;
    pub const TIME_RENOISE: u64 = 0xB4;
    pub const INIT: u64 = 0x10;
    pub const RENOISE: u64 = 0x11;
    pub const REDRAW: u64 = 0x12;
    pub const PIN_START: u64 = 0x13;
    pub const PIN_END: u64 = 0x14;
    pub const PERTURB: u64 = 0x15;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A node in the seed derivation tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedSource(u64);

impl SeedSource {
    pub fn new(seed: u64) -> Self {
        Self(splitmix64(seed))
    }

    /// Seed for the sub-stream identified by `label`.
    pub fn child(self, label: u64) -> Self {
        Self(splitmix64(
            self.0 ^ splitmix64(label.wrapping_add(0x632B_E59B_D9B4_E019)),
        ))
    }

    /// Convenience for a chain of labels.
    pub fn path(self, labels: &[u64]) -> Self {
        labels.iter().fold(self, |s, &l| s.child(l))
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// Draws one standard normal sample.
#[inline]
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Adds `scale · ε` to every element, drawing ε in buffer order.
pub fn add_scaled_noise(frame: &mut Frame, scale: f64, rng: &mut ChaCha8Rng) {
    for v in frame.data_mut() {
        *v = (*v as f64 + scale * standard_normal(rng)) as f32;
    }
}

/// `base + scale · ε` as a new frame.
pub fn noised(base: &Frame, scale: f64, rng: &mut ChaCha8Rng) -> Frame {
    let mut out = base.clone();
    if scale != 0.0 {
        add_scaled_noise(&mut out, scale, rng);
    }
    out
}
