//! Dataset model: cells, proportion intervals, samples, and the on-disk
//! dataset directory.
//!
//! A dataset directory holds `manifest.json`, one pixmap per sample under
//! `images/`, detection annotations under `annotations/` for the annotated
//! subset, and full ground-truth cell lists under `oracle/` when available.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::pnm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellClass {
    PosTumor,
    NegTumor,
    NonTumor,
}

impl CellClass {
    pub fn is_tumor(self) -> bool {
        !matches!(self, CellClass::NonTumor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRecord {
    pub row: usize,
    pub col: usize,
    pub class: CellClass,
}

/// The five clinical proportion buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IntervalId {
    I0_1,
    I1_25,
    I25_50,
    I50_75,
    I75_100,
}

impl IntervalId {
    pub const ALL: [IntervalId; 5] = [
        IntervalId::I0_1,
        IntervalId::I1_25,
        IntervalId::I25_50,
        IntervalId::I50_75,
        IntervalId::I75_100,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn bounds(self) -> (f64, f64) {
        match self {
            IntervalId::I0_1 => (0.0, 0.01),
            IntervalId::I1_25 => (0.01, 0.25),
            IntervalId::I25_50 => (0.25, 0.5),
            IntervalId::I50_75 => (0.5, 0.75),
            IntervalId::I75_100 => (0.75, 1.0),
        }
    }

    /// Column label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            IntervalId::I0_1 => "0-1%",
            IntervalId::I1_25 => "1-25%",
            IntervalId::I25_50 => "25-50%",
            IntervalId::I50_75 => "50-75%",
            IntervalId::I75_100 => "75-100%",
        }
    }

    pub fn interval(self) -> ProportionInterval {
        ProportionInterval::new(self)
    }

    /// `(lower, upper]`, except that 0 also belongs to the first bucket.
    pub fn contains(self, r: f64) -> bool {
        let (lo, hi) = self.bounds();
        (r > lo || (self == IntervalId::I0_1 && r == 0.0)) && r <= hi
    }
}

impl fmt::Display for IntervalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProportionInterval {
    pub id: IntervalId,
    pub lower: f64,
    pub upper: f64,
    pub midpoint: f64,
    pub gamma: f64,
}

impl ProportionInterval {
    /// Bucket with the default focal exponent: 0 on the narrow first bucket,
    /// 2 elsewhere.
    pub fn new(id: IntervalId) -> Self {
        let (lower, upper) = id.bounds();
        let gamma = if id == IntervalId::I0_1 { 0.0 } else { 2.0 };
        Self {
            id,
            lower,
            upper,
            midpoint: (lower + upper) / 2.0,
            gamma,
        }
    }

    pub fn with_gamma(self, gamma: f64) -> Self {
        Self { gamma, ..self }
    }

    pub fn contains(&self, r: f64) -> bool {
        self.id.contains(r)
    }
}

/// Maps a proportion to the unique bucket containing it.
pub fn interval_of(r: f64) -> Result<IntervalId> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Domain(r));
    }
    Ok(IntervalId::ALL
        .into_iter()
        .find(|id| id.contains(r))
        .expect("buckets cover [0, 1]"))
}

/// Positive fraction among tumor cells, `None` when there are no tumor cells.
pub fn tumor_proportion(cells: &[CellRecord]) -> Option<f64> {
    let pos = cells.iter().filter(|c| c.class == CellClass::PosTumor).count();
    let neg = cells.iter().filter(|c| c.class == CellClass::NegTumor).count();
    (pos + neg > 0).then(|| pos as f64 / (pos + neg) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: ImageGrid,
    /// Detection annotations; present only for the annotated subset.
    pub cells: Option<Vec<CellRecord>>,
    /// Complete ground-truth cells, used for oracle masks and evaluation only.
    pub oracle_cells: Option<Vec<CellRecord>>,
    pub interval: IntervalId,
    /// Exact synthetic proportion. Never used as a training target.
    pub true_r: f64,
}

impl Sample {
    /// Checks every sample invariant, naming the sample in the error.
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::Load {
            id: self.id.clone(),
            reason,
        };
        if !self.image.is_finite() || !self.image.in_unit_range() {
            return Err(fail("image values must be finite and in [0, 1]".into()));
        }
        let bucket = interval_of(self.true_r).map_err(|e| fail(e.to_string()))?;
        if bucket != self.interval {
            return Err(fail(format!(
                "interval mismatch: true_r={} lies in {bucket}, labelled {}",
                self.true_r, self.interval
            )));
        }
        for (what, cells) in [("annotations", &self.cells), ("oracle", &self.oracle_cells)] {
            let Some(cells) = cells else { continue };
            for c in cells {
                if c.row >= self.image.height() || c.col >= self.image.width() {
                    return Err(fail(format!(
                        "{what}: cell ({}, {}) outside {}x{} grid",
                        c.row,
                        c.col,
                        self.image.height(),
                        self.image.width()
                    )));
                }
            }
            match tumor_proportion(cells) {
                Some(r) if r == self.true_r => {}
                Some(r) => {
                    return Err(fail(format!(
                        "{what}: cell counts give proportion {r}, manifest says {}",
                        self.true_r
                    )))
                }
                None => return Err(fail(format!("{what}: no tumor cells"))),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub image: String,
    pub annotations: Option<String>,
    pub interval: IntervalId,
    pub true_r: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationFile {
    cells: Vec<CellRecord>,
}

pub const MANIFEST: &str = "manifest.json";

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::json(path, e))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    read_json(&dir.join(MANIFEST))
}

/// Loads every sample listed in `manifest.json`, in manifest order.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let dir = dir.as_ref();
    read_manifest(dir)?
        .into_iter()
        .map(|entry| load_entry(dir, entry))
        .collect()
}

fn load_entry(dir: &Path, entry: ManifestEntry) -> Result<Sample> {
    let wrap = |e: Error| Error::Load {
        id: entry.id.clone(),
        reason: e.to_string(),
    };
    let image = pnm::read(&dir.join(&entry.image)).map_err(wrap)?;
    let load_cells = |rel: &Option<String>| -> Result<Option<Vec<CellRecord>>> {
        rel.as_ref()
            .map(|p| read_json::<AnnotationFile>(&dir.join(p)).map(|a| a.cells))
            .transpose()
            .map_err(wrap)
    };
    let sample = Sample {
        cells: load_cells(&entry.annotations)?,
        oracle_cells: load_cells(&entry.oracle)?,
        id: entry.id,
        image,
        interval: entry.interval,
        true_r: entry.true_r,
    };
    sample.validate()?;
    Ok(sample)
}

/// Writes samples as a dataset directory. Images are stored as 16-bit
/// pixmaps, so values that sit on the 1/65535 lattice round-trip exactly.
pub fn save_dataset(dir: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["images", "annotations", "oracle"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut manifest = Vec::with_capacity(samples.len());
    for s in samples {
        s.validate()?;
        let ext = if s.image.channels() == 1 { "pgm" } else { "ppm" };
        let image = format!("images/{}.{ext}", s.id);
        pnm::write(&dir.join(&image), &s.image)?;
        let write_cells = |sub: &str, cells: &Option<Vec<CellRecord>>| -> Result<Option<String>> {
            let Some(cells) = cells else { return Ok(None) };
            let rel = format!("{sub}/{}.json", s.id);
            write_json(
                &dir.join(&rel),
                &AnnotationFile {
                    cells: cells.clone(),
                },
            )?;
            Ok(Some(rel))
        };
        let annotations = write_cells("annotations", &s.cells)?;
        let oracle = write_cells("oracle", &s.oracle_cells)?;
        manifest.push(ManifestEntry {
            id: s.id.clone(),
            image,
            annotations,
            interval: s.interval,
            true_r: s.true_r,
            oracle,
        });
    }
    write_json(&dir.join(MANIFEST), &manifest)
}
