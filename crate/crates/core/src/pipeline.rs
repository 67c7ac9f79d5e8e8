//! Two-stage orchestration: build masks (learned, oracle, or none), train the
//! proportion scorer on the training split, predict the held-out split.

use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::detect::{self, DetectConfig, LossLog, Stage1};
use crate::error::{Error, Result};
use crate::eval::detection_metrics;
use crate::grid::ImageGrid;
use crate::losses::LossMode;
use crate::propnet::{self, EpochLog, PropTrainConfig, ProportionModel, TrainItem};
use crate::synthgen::derive_seed;

/// Match radius for stage-one detection quality.
pub const DETECTION_MATCH_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// Mask from the trained detector and classifier.
    Masked,
    /// Every pixel counts.
    Unmasked,
    /// Mask from ground-truth cells.
    OracleMask,
}

impl std::str::FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "masked" => Ok(MaskMode::Masked),
            "unmasked" => Ok(MaskMode::Unmasked),
            "oracle-mask" | "oracle" => Ok(MaskMode::OracleMask),
            _ => Err(Error::Config(format!("unknown mask mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub mask_mode: MaskMode,
    pub loss_mode: LossMode,
    pub detect: DetectConfig,
    pub proportion: PropTrainConfig,
    pub folds: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mask_mode: MaskMode::Masked,
            loss_mode: LossMode::Wfl,
            detect: DetectConfig::default(),
            proportion: PropTrainConfig::default(),
            folds: 4,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Copy with stage seeds derived from the run seed and a stream index.
    pub fn seeded(&self, stream: u64) -> Self {
        let mut c = self.clone();
        c.detect.seed = derive_seed(self.seed, 2 * stream);
        c.proportion.seed = derive_seed(self.seed, 2 * stream + 1);
        c
    }
}

/// Mask for one sample under a mode.
pub fn mask_for(sample: &Sample, mode: MaskMode, stage1: Option<&Stage1>, alpha: f64) -> Result<ImageGrid> {
    let (h, w) = (sample.image.height(), sample.image.width());
    match mode {
        MaskMode::Unmasked => Ok(ImageGrid::filled(h, w, 1, 1.0)),
        MaskMode::OracleMask => {
            let cells = sample.oracle_cells.as_deref().or(sample.cells.as_deref()).ok_or_else(|| {
                Error::Config(format!("oracle-mask mode: sample {} has no ground-truth cells", sample.id))
            })?;
            Ok(detect::oracle_mask(cells, h, w, alpha))
        }
        MaskMode::Masked => {
            let s1 = stage1.ok_or_else(|| Error::Config("masked mode needs a trained stage one".into()))?;
            Ok(s1.mask(&sample.image))
        }
    }
}

/// A trained pipeline.
#[derive(Debug, Clone)]
pub struct Trained {
    pub stage1: Option<Stage1>,
    pub proportion: ProportionModel,
    pub detector_log: LossLog,
    pub classifier_log: LossLog,
    pub proportion_log: Vec<EpochLog>,
    /// The configuration with the seeds actually used.
    pub config: PipelineConfig,
}

impl Trained {
    pub fn mask(&self, sample: &Sample) -> Result<ImageGrid> {
        mask_for(
            sample,
            self.config.mask_mode,
            self.stage1.as_ref(),
            self.config.detect.alpha,
        )
    }

    pub fn predict(&self, sample: &Sample) -> Result<propnet::ProportionEstimate> {
        propnet::forward(&self.proportion, &sample.image, &self.mask(sample)?)
    }
}

/// Trains stage one (when masked) then stage two on `train`.
/// `cfg` seeds are used as given.
pub fn train(train: &[&Sample], cfg: &PipelineConfig) -> Result<Trained> {
    let (stage1, dlog, clog) = if cfg.mask_mode == MaskMode::Masked {
        let (s, d, c) = Stage1::train(train, &cfg.detect)?;
        (Some(s), d, c)
    } else {
        (None, vec![], vec![])
    };
    let d = cfg.proportion.downsample;
    let masks = train
        .iter()
        .map(|s| mask_for(s, cfg.mask_mode, stage1.as_ref(), cfg.detect.alpha))
        .collect::<Result<Vec<_>>>()?;
    let items = train
        .iter()
        .zip(&masks)
        .map(|(s, m)| TrainItem::new(s, m, d))
        .collect::<Result<Vec<_>>>()?;
    let (proportion, plog) = propnet::train_proportion(&items, cfg.loss_mode, &cfg.proportion)?;
    Ok(Trained {
        stage1,
        proportion,
        detector_log: dlog,
        classifier_log: clog,
        proportion_log: plog,
        config: cfg.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutput {
    pub r_hats: Vec<f64>,
    pub detection_f1: Option<f64>,
}

/// Trains on `train` and predicts `test` for one cross-validation fold.
pub fn run_fold(train_set: &[&Sample], test: &[&Sample], cfg: &PipelineConfig, fold: u64) -> Result<FoldOutput> {
    let trained = train(train_set, &cfg.seeded(fold))?;
    let r_hats = test
        .iter()
        .map(|s| trained.predict(s).map(|e| e.r_hat))
        .collect::<Result<Vec<_>>>()?;
    let detection_f1 = trained.stage1.as_ref().and_then(|s1| {
        let scored: Vec<f64> = test
            .iter()
            .filter_map(|s| {
                let gt = s.oracle_cells.as_deref()?;
                Some(detection_metrics(&s1.detect(&s.image), gt, DETECTION_MATCH_RADIUS).f1)
            })
            .collect();
        (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64)
    });
    Ok(FoldOutput { r_hats, detection_f1 })
}
