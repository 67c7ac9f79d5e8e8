//! Run configuration: a JSON file with every field optional, overridden by
//! command-line flags and `MASKED_LLP_SEED`.

use std::path::{Path, PathBuf};

use masked_llp::detect::DetectConfig;
use masked_llp::pipeline::{MaskMode, PipelineConfig};
use masked_llp::propnet::PropTrainConfig;
use masked_llp::synthgen::BenchmarkProfile;
use masked_llp::LossMode;
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "MASKED_LLP_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Dataset directory; when absent the benchmark `profile` is generated
    /// in memory from `seed`.
    pub dataset: Option<PathBuf>,
    /// Directory for the command's artifacts.
    pub output: Option<PathBuf>,
    /// Directory holding trained checkpoints.
    pub checkpoints: Option<PathBuf>,
    pub profile: BenchmarkProfile,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub mask_mode: MaskMode,
    pub folds: usize,
    pub detect: DetectConfig,
    pub proportion: PropTrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            output: None,
            checkpoints: None,
            profile: BenchmarkProfile::Easy,
            seed: 0,
            loss_mode: LossMode::Wfl,
            mask_mode: MaskMode::Masked,
            folds: 4,
            detect: DetectConfig::default(),
            proportion: PropTrainConfig::default(),
        }
    }
}

fn check(ok: bool, what: &str, errors: &mut Vec<String>) {
    if !ok {
        errors.push(what.to_string());
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Every violated range, joined into one message.
    pub fn validate(&self) -> Result<(), String> {
        let d = &self.detect;
        let p = &self.proportion;
        let mut e = Vec::new();
        check(self.folds >= 2, "folds must be >= 2", &mut e);
        check(d.sigma > 0.0, "detect.sigma must be > 0", &mut e);
        check(d.threshold > 0.0 && d.threshold < 1.0, "detect.threshold must be in (0, 1)", &mut e);
        check(d.nms_radius >= 1.0, "detect.nms_radius must be >= 1", &mut e);
        check(d.alpha > 0.0, "detect.alpha must be > 0", &mut e);
        check(d.label_match_radius > 0.0, "detect.label_match_radius must be > 0", &mut e);
        check(d.detector_lr > 0.0, "detect.detector_lr must be > 0", &mut e);
        check(d.classifier_lr > 0.0, "detect.classifier_lr must be > 0", &mut e);
        check(d.batch_size >= 1, "detect.batch_size must be >= 1", &mut e);
        check(p.batch_size >= 1, "proportion.batch_size must be >= 1", &mut e);
        check(p.optimizer.lr() > 0.0, "proportion.optimizer.lr must be > 0", &mut e);
        check(p.patience >= 1, "proportion.patience must be >= 1", &mut e);
        check(
            (0.0..1.0).contains(&p.val_fraction),
            "proportion.val_fraction must be in [0, 1)",
            &mut e,
        );
        check(p.downsample >= 1, "proportion.downsample must be >= 1", &mut e);
        check(p.threads >= 1, "proportion.threads must be >= 1", &mut e);
        if e.is_empty() {
            Ok(())
        } else {
            Err(e.join("; "))
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            mask_mode: self.mask_mode,
            loss_mode: self.loss_mode,
            detect: self.detect.clone(),
            proportion: self.proportion.clone(),
            folds: self.folds,
            seed: self.seed,
        }
    }
}
