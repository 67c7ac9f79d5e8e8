//! Deterministic synthetic core images with known cells and exact
//! proportions.
//!
//! Every sample is a pure function of its [`GenConfig`]; benchmark datasets
//! derive one seed per sample from `(seed, index)`, so samples can be
//! generated in any order.

use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{interval_of, save_dataset, CellClass, CellRecord, IntervalId, Sample};
use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::pnm::quantize16;

const MAX_ATTEMPTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    pub background: [f64; 3],
    pub pos_intensity: [f64; 3],
    pub neg_intensity: [f64; 3],
    pub nontumor_intensity: [f64; 3],
    pub noise_std: f64,
    /// Fraction of non-tumor cells whose first channel copies the
    /// positive-tumor value.
    pub confusability: f64,
}

impl Default for Appearance {
    fn default() -> Self {
        Self {
            background: [0.1, 0.1, 0.1],
            pos_intensity: [0.85, 0.45, 0.25],
            neg_intensity: [0.30, 0.40, 0.85],
            nontumor_intensity: [0.35, 0.75, 0.40],
            noise_std: 0.03,
            confusability: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub grid_size: usize,
    pub n_tumor: usize,
    pub n_nontumor: usize,
    pub target_r: f64,
    pub min_separation: f64,
    pub cell_radius: f64,
    pub appearance: Appearance,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            grid_size: 64,
            n_tumor: 24,
            n_nontumor: 8,
            target_r: 0.5,
            min_separation: 5.0,
            cell_radius: 2.0,
            appearance: Appearance::default(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let a = &self.appearance;
        if self.n_tumor == 0 {
            return bad("n_tumor must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.target_r) {
            return bad("target_r must lie in [0, 1]");
        }
        if !(self.cell_radius > 0.0) || !(self.min_separation >= 0.0) {
            return bad("cell_radius must be > 0 and min_separation >= 0");
        }
        if self.grid_size <= 2 * self.margin() {
            return bad("grid_size too small for cell_radius");
        }
        let colors = [a.background, a.pos_intensity, a.neg_intensity, a.nontumor_intensity];
        if colors.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("appearance intensities must lie in [0, 1]");
        }
        if !(a.noise_std >= 0.0) || !(0.0..=1.0).contains(&a.confusability) {
            return bad("noise_std must be >= 0 and confusability in [0, 1]");
        }
        Ok(())
    }

    /// Positive tumor count, rounding half up.
    pub fn n_positive(&self) -> usize {
        ((self.target_r * self.n_tumor as f64 + 0.5).floor() as usize).min(self.n_tumor)
    }

    /// Gaussian blob scale.
    pub fn blob_sigma(&self) -> f64 {
        self.cell_radius / 2.0
    }

    fn margin(&self) -> usize {
        self.cell_radius.ceil() as usize
    }
}

fn place_cells(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>> {
    let total = cfg.n_tumor + cfg.n_nontumor;
    let m = cfg.margin();
    let hi = cfg.grid_size - m;
    let min_d2 = cfg.min_separation * cfg.min_separation;
    let mut placed: Vec<(usize, usize)> = Vec::with_capacity(total);
    let mut attempts = 0;
    while placed.len() < total {
        if attempts == MAX_ATTEMPTS {
            return Err(Error::Generation(format!(
                "placed only {} of {total} cells at separation {} after {MAX_ATTEMPTS} attempts; \
                 use a larger grid_size or fewer cells",
                placed.len(),
                cfg.min_separation
            )));
        }
        attempts += 1;
        let p = (rng.random_range(m..hi), rng.random_range(m..hi));
        let ok = placed.iter().all(|q| {
            let dr = p.0 as f64 - q.0 as f64;
            let dc = p.1 as f64 - q.1 as f64;
            dr * dr + dc * dc >= min_d2
        });
        if ok {
            placed.push(p);
        }
    }
    Ok(placed)
}

/// Renders one synthetic core image with its full cell list.
///
/// The returned sample carries the cells as `oracle_cells`; `cells` (the
/// detection annotations) is left empty for the caller to fill.
pub fn generate_sample(cfg: &GenConfig) -> Result<Sample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let positions = place_cells(cfg, &mut rng)?;
    let n_pos = cfg.n_positive();
    let a = &cfg.appearance;

    let mut cells = Vec::with_capacity(positions.len());
    let mut colors = Vec::with_capacity(positions.len());
    for (i, &(row, col)) in positions.iter().enumerate() {
        let (class, color) = if i < n_pos {
            (CellClass::PosTumor, a.pos_intensity)
        } else if i < cfg.n_tumor {
            (CellClass::NegTumor, a.neg_intensity)
        } else {
            let mut c = a.nontumor_intensity;
            if rng.random::<f64>() < a.confusability {
                c[0] = a.pos_intensity[0];
            }
            (CellClass::NonTumor, c)
        };
        cells.push(CellRecord { row, col, class });
        colors.push(color);
    }

    let size = cfg.grid_size;
    let sigma = cfg.blob_sigma();
    let reach = 3.0 * sigma;
    let reach_px = reach.floor() as isize;
    // strongest blob per pixel and its color index
    let mut weight = vec![0.0f64; size * size];
    let mut owner = vec![usize::MAX; size * size];
    for (i, c) in cells.iter().enumerate() {
        for dr in -reach_px..=reach_px {
            for dc in -reach_px..=reach_px {
                let (r, cc) = (c.row as isize + dr, c.col as isize + dc);
                if r < 0 || cc < 0 || r >= size as isize || cc >= size as isize {
                    continue;
                }
                let d2 = (dr * dr + dc * dc) as f64;
                if d2 > reach * reach {
                    continue;
                }
                let g = (-d2 / (2.0 * sigma * sigma)).exp();
                let k = r as usize * size + cc as usize;
                if g > weight[k] {
                    weight[k] = g;
                    owner[k] = i;
                }
            }
        }
    }

    let noise = Normal::new(0.0, a.noise_std).expect("noise_std validated");
    let mut image = ImageGrid::zeros(size, size, 3);
    for ch in 0..3 {
        let bg = a.background[ch];
        for k in 0..size * size {
            let clean = match owner[k] {
                usize::MAX => bg,
                i => bg + weight[k] * (colors[i][ch] - bg),
            };
            let v = if a.noise_std > 0.0 {
                clean + noise.sample(&mut rng)
            } else {
                clean
            };
            image.values_mut()[ch * size * size + k] = quantize16(v.clamp(0.0, 1.0));
        }
    }

    let true_r = n_pos as f64 / cfg.n_tumor as f64;
    Ok(Sample {
        id: format!("seed{}", cfg.seed),
        image,
        cells: None,
        oracle_cells: Some(cells),
        interval: interval_of(true_r)?,
        true_r,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkProfile {
    Easy,
    Imbalanced,
    Distractor,
}

impl FromStr for BenchmarkProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(BenchmarkProfile::Easy),
            "imbalanced" => Ok(BenchmarkProfile::Imbalanced),
            "distractor" => Ok(BenchmarkProfile::Distractor),
            _ => Err(Error::Config(format!("unknown profile '{s}'"))),
        }
    }
}

impl BenchmarkProfile {
    pub fn sample_count(self) -> usize {
        match self {
            BenchmarkProfile::Easy | BenchmarkProfile::Distractor => 200,
            BenchmarkProfile::Imbalanced => 300,
        }
    }

    /// Relative interval frequencies.
    pub fn interval_weights(self) -> [usize; 5] {
        match self {
            BenchmarkProfile::Imbalanced => [8, 6, 2, 1, 3],
            _ => [1, 1, 1, 1, 1],
        }
    }

    /// Number of leading samples that carry detection annotations (5%).
    pub fn annotated_count(self) -> usize {
        (self.sample_count() * 5).div_ceil(100)
    }
}

/// Mixes a sample index into a benchmark seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Interval label of every sample, in sample order.
fn interval_plan(profile: BenchmarkProfile, seed: u64) -> Vec<IntervalId> {
    let n = profile.sample_count();
    let w = profile.interval_weights();
    let total: usize = w.iter().sum();
    let mut plan = Vec::with_capacity(n);
    for (id, wi) in IntervalId::ALL.into_iter().zip(w) {
        plan.extend(std::iter::repeat_n(id, n * wi / total));
    }
    debug_assert_eq!(plan.len(), n);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    plan.shuffle(&mut rng);
    plan
}

/// Generator config for one benchmark sample aimed at `bucket`.
pub fn benchmark_config(profile: BenchmarkProfile, seed: u64, index: usize, bucket: IntervalId) -> GenConfig {
    let sample_seed = derive_seed(seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed ^ 0xA5A5_A5A5);
    let (n_tumor, n_nontumor, confusability) = match profile {
        BenchmarkProfile::Easy | BenchmarkProfile::Imbalanced => {
            (rng.random_range(16..=32), rng.random_range(4..=12), 0.0)
        }
        BenchmarkProfile::Distractor => {
            let nt: usize = rng.random_range(16..=28);
            let lo = nt.div_ceil(2);
            let hi = (3 * nt).div_ceil(4);
            (nt, rng.random_range(lo..=hi), 0.5)
        }
    };
    let mut cfg = GenConfig {
        seed: sample_seed,
        n_tumor,
        n_nontumor,
        appearance: Appearance {
            confusability,
            ..Appearance::default()
        },
        ..GenConfig::default()
    };
    if bucket == IntervalId::I0_1 {
        // (0, 0.01]; rounding yields zero positives for these cell counts
        cfg.target_r = 0.01 * (1.0 - rng.random::<f64>());
        if !bucket.contains(cfg.n_positive() as f64 / n_tumor as f64) {
            cfg.target_r = 0.0;
        }
    } else {
        let valid: Vec<usize> = (0..=n_tumor)
            .filter(|&k| bucket.contains(k as f64 / n_tumor as f64))
            .collect();
        let k = valid[rng.random_range(0..valid.len())];
        cfg.target_r = k as f64 / n_tumor as f64;
    }
    cfg
}

/// Generates a benchmark in memory. Samples are named `s0000`, `s0001`, ...
pub fn benchmark_samples(profile: BenchmarkProfile, seed: u64) -> Result<Vec<Sample>> {
    let annotated = profile.annotated_count();
    interval_plan(profile, seed)
        .into_iter()
        .enumerate()
        .map(|(i, bucket)| {
            let cfg = benchmark_config(profile, seed, i, bucket);
            let mut s = generate_sample(&cfg)?;
            s.id = format!("s{i:04}");
            if i < annotated {
                s.cells = s.oracle_cells.clone();
            }
            Ok(s)
        })
        .collect()
}

/// Generates a benchmark and writes it as a dataset directory.
pub fn generate_benchmark(profile: BenchmarkProfile, seed: u64, out: &Path) -> Result<Vec<Sample>> {
    let samples = benchmark_samples(profile, seed)?;
    save_dataset(out, &samples)?;
    Ok(samples)
}
