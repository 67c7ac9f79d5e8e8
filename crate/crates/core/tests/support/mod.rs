//! Shared checks for the integration, property and acceptance tests.
#![allow(dead_code)]

pub mod gradients;
pub mod invariants;

use masked_llp::dataset::{CellClass, CellRecord};
use masked_llp::ImageGrid;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central difference `(f(x + h) - f(x - h)) / 2h`.
pub fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> ImageGrid {
    let vals = (0..h * w * c).map(|_| rng.random::<f64>()).collect();
    ImageGrid::from_planar(h, w, c, vals).unwrap()
}

pub fn random_cells(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> Vec<CellRecord> {
    (0..n)
        .map(|_| CellRecord {
            row: rng.random_range(0..h),
            col: rng.random_range(0..w),
            class: match rng.random_range(0..3) {
                0 => CellClass::PosTumor,
                1 => CellClass::NegTumor,
                _ => CellClass::NonTumor,
            },
        })
        .collect()
}

/// Binary mask with roughly `density` of pixels set and at least one set.
pub fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, density: f64) -> ImageGrid {
    let mut m = ImageGrid::zeros(h, w, 1);
    for v in m.values_mut() {
        *v = if rng.random::<f64>() < density { 1.0 } else { 0.0 };
    }
    let (r, c) = (rng.random_range(0..h), rng.random_range(0..w));
    m.set(r, c, 0, 1.0);
    m
}
