//! Benchmark fixtures shared by the criterion targets.

use masked_llp::synthgen::{generate_sample, GenConfig};
use masked_llp::Sample;

/// A default 64x64 synthetic sample.
pub fn sample(seed: u64) -> Sample {
    generate_sample(&GenConfig {
        seed,
        ..GenConfig::default()
    })
    .expect("default config generates")
}
