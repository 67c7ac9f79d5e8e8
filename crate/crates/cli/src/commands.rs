//! Subcommand bodies.

use std::fs;
use std::path::Path;

use masked_llp::detect::{self, ClassifierModel, DetectorModel, Stage1};
use masked_llp::eval::{cross_validate, CvReport};
use masked_llp::pipeline::{self, mask_for, MaskMode};
use masked_llp::propnet::{self, ProportionModel};
use masked_llp::synthgen::{benchmark_samples, generate_benchmark};
use masked_llp::{load_dataset, pnm, Error, Sample};
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

pub const RUN_CONFIG: &str = "run_config.json";

fn required<'a>(dir: Option<&'a Path>, flag: &str) -> Result<&'a Path, CliError> {
    dir.ok_or_else(|| CliError::Usage(format!("{flag} is required")))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::json(path, e))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e).into())
}

fn samples(c: &RunConfig) -> Result<Vec<Sample>, CliError> {
    Ok(match &c.dataset {
        Some(dir) => load_dataset(dir)?,
        None => benchmark_samples(c.profile, c.seed)?,
    })
}

/// Table label of a configuration.
pub fn method_label(c: &RunConfig) -> String {
    let loss = c.loss_mode.name();
    match c.mask_mode {
        MaskMode::Masked => loss.to_string(),
        MaskMode::Unmasked => format!("{loss} w/o mask"),
        MaskMode::OracleMask => format!("{loss} oracle"),
    }
}

pub fn generate(c: &RunConfig) -> Result<(), CliError> {
    let out = required(c.output.as_deref(), "--out")?;
    let written = generate_benchmark(c.profile, c.seed, out)?;
    println!("wrote {} samples to {}", written.len(), out.display());
    Ok(())
}

pub fn train(c: &RunConfig) -> Result<(), CliError> {
    let out = required(c.checkpoints.as_deref().or(c.output.as_deref()), "--out")?;
    let data = samples(c)?;
    let refs: Vec<&Sample> = data.iter().collect();
    let cfg = c.pipeline().seeded(0);
    let trained = pipeline::train(&refs, &cfg)?;
    create_dir(out)?;
    let mut written = vec![];
    if let Some(s1) = &trained.stage1 {
        s1.detector.save(&out.join("detector.ckpt"), &cfg.detect)?;
        s1.classifier.save(&out.join("classifier.ckpt"), &cfg.detect)?;
        detect::write_loss_log(&out.join("detector_loss.csv"), &trained.detector_log)?;
        detect::write_loss_log(&out.join("classifier_loss.csv"), &trained.classifier_log)?;
        written.extend(["detector.ckpt", "classifier.ckpt"]);
    } else if c.mask_mode == MaskMode::OracleMask && refs.iter().any(|s| s.cells.is_some()) {
        let (classifier, log) = detect::train_classifier_on_cells(&refs, &cfg.detect)?;
        classifier.save(&out.join("classifier.ckpt"), &cfg.detect)?;
        detect::write_loss_log(&out.join("classifier_loss.csv"), &log)?;
        written.push("classifier.ckpt");
    }
    trained.proportion.save(&out.join("proportion.ckpt"), &cfg.proportion)?;
    propnet::write_train_log(&out.join("proportion_log.csv"), &trained.proportion_log)?;
    written.push("proportion.ckpt");
    let mut saved = c.clone();
    saved.checkpoints = Some(out.to_path_buf());
    write_json(&out.join(RUN_CONFIG), &saved)?;
    println!(
        "trained {} on {} samples; wrote {} to {}",
        method_label(c),
        data.len(),
        written.join(", "),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    method: String,
    folds: usize,
    seed: u64,
    #[serde(flatten)]
    report: &'a CvReport,
}

pub fn eval(c: &RunConfig) -> Result<(), CliError> {
    let out = required(c.output.as_deref(), "--out")?;
    let data = samples(c)?;
    if c.folds > data.len() {
        return Err(CliError::Usage(format!(
            "folds ({}) exceeds the number of samples ({})",
            c.folds,
            data.len()
        )));
    }
    let report = cross_validate(&data, c.folds, &c.pipeline())?;
    let method = method_label(c);
    print!("{}", report.aggregate.to_table(&method));
    create_dir(out)?;
    write_json(
        &out.join("eval.json"),
        &EvalOutput {
            method,
            folds: c.folds,
            seed: c.seed,
            report: &report,
        },
    )
}

pub fn plot_losses(c: &RunConfig) -> Result<(), CliError> {
    let out = required(c.output.as_deref(), "--out")?;
    let points = masked_llp::losses::plot_loss_curves(out)?;
    println!("wrote {} curve points to {}", points.len(), out.display());
    Ok(())
}

/// Configuration saved next to trained checkpoints, or the default.
pub fn trained_config(checkpoints: Option<&Path>) -> Result<RunConfig, CliError> {
    match checkpoints.map(|d| d.join(RUN_CONFIG)) {
        Some(p) if p.exists() => RunConfig::load(&p).map_err(CliError::Usage),
        _ => Ok(RunConfig::default()),
    }
}

pub fn visualize(c: &RunConfig, id: &str) -> Result<(), CliError> {
    let ckpt = required(c.checkpoints.as_deref(), "--checkpoints")?;
    let out = required(c.output.as_deref(), "--out")?.join(id);
    let data = samples(c)?;
    let sample = data
        .iter()
        .find(|s| s.id == id)
        .ok_or_else(|| CliError::Usage(format!("no sample with id '{id}'")))?;
    let model = ProportionModel::load(&ckpt.join("proportion.ckpt"), c.proportion.downsample)?;
    let stage1 = if c.mask_mode == MaskMode::Masked {
        Some(Stage1 {
            detector: DetectorModel::load(&ckpt.join("detector.ckpt"))?,
            classifier: ClassifierModel::load(&ckpt.join("classifier.ckpt"))?,
            config: c.detect.clone(),
        })
    } else {
        None
    };
    let mask = mask_for(sample, c.mask_mode, stage1.as_ref(), c.detect.alpha)?;
    let estimate = propnet::forward(&model, &sample.image, &mask)?;
    let sidecar = propnet::export_visualization(&estimate, &out)?;
    pnm::write(&out.join("image.ppm"), &sample.image)?;
    println!(
        "{id}: r_hat {:.4} (s_p {:.4}, s_n {:.4}){}; wrote {}",
        sidecar.r_hat,
        sidecar.s_p,
        sidecar.s_n,
        if sidecar.degenerate { ", degenerate" } else { "" },
        out.display()
    );
    Ok(())
}
