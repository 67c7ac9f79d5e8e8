//! Stage two: a pixel scorer producing positive and negative maps whose
//! masked sums give the proportion estimate, trained from interval labels.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{IntervalId, Sample};
use crate::detect::{load_network, save_network};
use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::losses::{loss_for_interval, LossMode};
use crate::nn::{Activation, LayerSpec, Network, Topology};
use crate::optim::{Optimizer, OptimizerConfig};

/// Masked score mass at or below which an estimate is degenerate.
pub const SUM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ProportionModel {
    pub net: Network,
}

impl ProportionModel {
    /// Average-pool by `downsample`, then a 3x3 conv and two 1x1 convs ending
    /// in a softplus pair of maps (positive, negative).
    pub fn topology(downsample: usize) -> Topology {
        Topology {
            input_channels: 3,
            layers: vec![
                LayerSpec::AvgPool { factor: downsample },
                LayerSpec::conv(3, 8, 3),
                LayerSpec::act(Activation::Tanh),
                LayerSpec::conv(8, 8, 1),
                LayerSpec::act(Activation::Tanh),
                LayerSpec::conv(8, 2, 1),
                LayerSpec::act(Activation::Softplus),
            ],
        }
    }

    pub fn init(downsample: usize, seed: u64) -> Self {
        Self {
            net: Network::init(Self::topology(downsample), seed),
        }
    }

    pub fn downsample(&self) -> usize {
        self.net.topology.downsample()
    }

    /// Positive (channel 0) and negative (channel 1) maps.
    pub fn maps(&self, image: &ImageGrid) -> ImageGrid {
        self.net.forward(image)
    }

    pub fn save(&self, path: &Path, cfg: &PropTrainConfig) -> Result<()> {
        save_network(path, "proportion", &self.net, cfg)
    }

    pub fn load(path: &Path, downsample: usize) -> Result<Self> {
        Ok(Self {
            net: load_network(path, "proportion", Self::topology(downsample))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProportionEstimate {
    pub s_p: f64,
    pub s_n: f64,
    pub r_hat: f64,
    pub degenerate: bool,
    /// Unmasked positive/negative maps.
    pub maps: ImageGrid,
    /// Mask at map resolution.
    pub mask: ImageGrid,
    /// Mask at image resolution.
    pub pixel_mask: ImageGrid,
    pub downsample: usize,
}

impl ProportionEstimate {
    /// Estimate from positive/negative maps and an image-resolution mask
    /// that is max-pooled by `downsample` to map resolution.
    pub fn from_maps(maps: ImageGrid, pixel_mask: ImageGrid, downsample: usize) -> Self {
        let mask = downsample_mask(&pixel_mask, downsample);
        let (s_p, s_n) = masked_sums(&maps, &mask);
        let r_hat = ratio(s_p, s_n).unwrap_or(0.5);
        Self {
            s_p,
            s_n,
            r_hat,
            degenerate: ratio(s_p, s_n).is_none(),
            maps,
            mask,
            pixel_mask,
            downsample,
        }
    }

    /// `F_p * M` and `F_n * M` as a two-channel grid.
    pub fn masked_maps(&self) -> ImageGrid {
        self.maps.masked(&self.mask).expect("mask matches map size")
    }
}

fn masked_sums(maps: &ImageGrid, mask_d: &ImageGrid) -> (f64, f64) {
    let m = mask_d.values();
    let s_p: f64 = maps.plane(0).iter().zip(m).map(|(f, m)| f * m).sum();
    let s_n: f64 = maps.plane(1).iter().zip(m).map(|(f, m)| f * m).sum();
    (s_p, s_n)
}

/// `s_p / (s_p + s_n)`, or `None` when the mass is at most `SUM_EPS`.
fn ratio(s_p: f64, s_n: f64) -> Option<f64> {
    let total = s_p + s_n;
    (total > SUM_EPS).then(|| s_p / total)
}

/// Shrinks an image-resolution mask to map resolution: a map cell is inside
/// when any pixel it covers is.
pub fn downsample_mask(mask: &ImageGrid, d: usize) -> ImageGrid {
    mask.max_pool(d)
}

fn check_mask(image: &ImageGrid, mask: &ImageGrid) -> Result<()> {
    if mask.channels() != 1 || mask.height() != image.height() || mask.width() != image.width() {
        return Err(Error::shape(
            format!("{}x{}x1 mask", image.height(), image.width()),
            format!("{}x{}x{}", mask.height(), mask.width(), mask.channels()),
        ));
    }
    Ok(())
}

/// Masked estimate: `s_p = sum F_p M_d`, `s_n = sum F_n M_d`,
/// `r_hat = s_p / (s_p + s_n)`; 0.5 with the degenerate flag when the mass
/// vanishes.
pub fn forward(model: &ProportionModel, image: &ImageGrid, mask: &ImageGrid) -> Result<ProportionEstimate> {
    check_mask(image, mask)?;
    let d = model.downsample();
    Ok(ProportionEstimate::from_maps(model.maps(image), mask.clone(), d))
}

/// Estimate over the whole image.
pub fn forward_unmasked(model: &ProportionModel, image: &ImageGrid) -> ProportionEstimate {
    forward(model, image, &ImageGrid::filled(image.height(), image.width(), 1, 1.0))
        .expect("all-ones mask matches")
}

/// Loss of one sample and its parameter gradient (scaled by `scale`) added
/// into `grad`. `mask_d` is at map resolution. Returns `None`, touching
/// nothing, for a degenerate estimate.
pub fn sample_loss_grad(
    model: &ProportionModel,
    image: &ImageGrid,
    mask_d: &ImageGrid,
    interval: IntervalId,
    mode: LossMode,
    scale: f64,
    grad: &mut [f64],
) -> Option<f64> {
    let trace = model.net.forward_trace(image);
    let maps = trace.output();
    let m = mask_d.values();
    let (s_p, s_n) = masked_sums(maps, mask_d);
    let r_hat = ratio(s_p, s_n)?;
    let total = s_p + s_n;
    let lg = loss_for_interval(&interval.interval(), r_hat, mode);
    let dsp = scale * lg.grad * s_n / (total * total);
    let dsn = -scale * lg.grad * s_p / (total * total);
    let mut g = ImageGrid::zeros(maps.height(), maps.width(), 2);
    for (v, &mq) in g.plane_mut(0).iter_mut().zip(m) {
        *v = dsp * mq;
    }
    for (v, &mq) in g.plane_mut(1).iter_mut().zip(m) {
        *v = dsn * mq;
    }
    model.net.backward(&trace, &g, grad, false);
    Some(lg.loss)
}

/// One training example: image, map-resolution mask and interval label.
#[derive(Debug, Clone)]
pub struct TrainItem<'a> {
    pub image: &'a ImageGrid,
    pub mask_d: ImageGrid,
    pub interval: IntervalId,
}

impl<'a> TrainItem<'a> {
    pub fn new(sample: &'a Sample, mask: &ImageGrid, downsample: usize) -> Result<Self> {
        check_mask(&sample.image, mask)?;
        Ok(Self {
            image: &sample.image,
            mask_d: downsample_mask(mask, downsample),
            interval: sample.interval,
        })
    }
}

/// Mean loss and summed (already scaled) gradient over a batch. Per-sample
/// work may run in parallel; the reduction is always in batch order.
pub fn batch_loss_grad(
    model: &ProportionModel,
    items: &[&TrainItem<'_>],
    mode: LossMode,
) -> (Option<f64>, Vec<f64>) {
    let n = model.net.params.len();
    let per: Vec<Option<(f64, Vec<f64>)>> = items
        .par_iter()
        .map(|it| {
            let mut g = vec![0.0; n];
            sample_loss_grad(model, it.image, &it.mask_d, it.interval, mode, 1.0, &mut g).map(|l| (l, g))
        })
        .collect();
    let valid = per.iter().flatten().count();
    let mut grad = vec![0.0; n];
    if valid == 0 {
        return (None, grad);
    }
    let scale = 1.0 / valid as f64;
    let mut loss = 0.0;
    for (l, g) in per.into_iter().flatten() {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += scale * b;
        }
    }
    (Some(loss * scale), grad)
}

fn mean_loss(model: &ProportionModel, items: &[&TrainItem<'_>], mode: LossMode) -> Option<f64> {
    let losses: Vec<Option<f64>> = items
        .par_iter()
        .map(|it| {
            let (s_p, s_n) = masked_sums(&model.maps(it.image), &it.mask_d);
            ratio(s_p, s_n).map(|r_hat| loss_for_interval(&it.interval.interval(), r_hat, mode).loss)
        })
        .collect();
    let valid: Vec<f64> = losses.into_iter().flatten().collect();
    (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub val_fraction: f64,
    pub downsample: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for PropTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            optimizer: OptimizerConfig::momentum(0.5),
            patience: 30,
            val_fraction: 0.2,
            downsample: 2,
            seed: 0,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub stopped_early: bool,
}

pub fn write_train_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut s = String::from("epoch,train_loss,val_loss,stopped_early\n");
    for e in log {
        let val = e.val_loss.map(|v| format!("{v:.12e}")).unwrap_or_default();
        s.push_str(&format!("{},{:.12e},{},{}\n", e.epoch, e.train_loss, val, e.stopped_early));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Minibatch training on interval labels with early stopping on a held-out
/// split. Returns the parameters with the best validation loss.
pub fn train_proportion(
    items: &[TrainItem<'_>],
    mode: LossMode,
    cfg: &PropTrainConfig,
) -> Result<(ProportionModel, Vec<EpochLog>)> {
    if items.is_empty() {
        return Err(Error::Config("proportion training needs at least one sample".into()));
    }
    if cfg.downsample == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("downsample and batch_size must be >= 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| train_inner(items, mode, cfg))
}

fn train_inner(
    items: &[TrainItem<'_>],
    mode: LossMode,
    cfg: &PropTrainConfig,
) -> Result<(ProportionModel, Vec<EpochLog>)> {
    let mut model = ProportionModel::init(cfg.downsample, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E0F);
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if items.len() >= 2 {
        ((items.len() as f64 * cfg.val_fraction).round() as usize).min(items.len() - 1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let val: Vec<&TrainItem> = val_idx.iter().map(|&i| &items[i]).collect();
    let mut train_idx = train_idx.to_vec();

    let mut opt = Optimizer::new(cfg.optimizer, model.net.params.len());
    let mut best = (f64::INFINITY, model.net.params.clone());
    let mut since_best = 0;
    let mut log = Vec::new();
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let batch: Vec<&TrainItem> = chunk.iter().map(|&i| &items[i]).collect();
            let (loss, grad) = batch_loss_grad(&model, &batch, mode);
            if let Some(l) = loss {
                total += l;
                batches += 1;
                opt.step(&mut model.net.params, &grad);
            }
        }
        let train_loss = if batches > 0 { total / batches as f64 } else { 0.0 };
        let val_loss = mean_loss(&model, &val, mode);
        // without a validation split, track the training loss instead
        let monitored = val_loss.unwrap_or(train_loss);
        if monitored < best.0 {
            best = (monitored, model.net.params.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        let stop = since_best >= cfg.patience;
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            stopped_early: stop,
        });
        if stop {
            break;
        }
    }
    if !log.is_empty() {
        model.net.params = best.1;
    }
    Ok((model, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSidecar {
    pub s_p: f64,
    pub s_n: f64,
    pub r_hat: f64,
    pub degenerate: bool,
}

fn to_rgb(grid: &ImageGrid, f: impl Fn(usize) -> [u8; 3]) -> Vec<u8> {
    let n = grid.plane_len();
    (0..n).flat_map(f).collect()
}

fn unit_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `mask.ppm` (image resolution), `positive.ppm` (red),
/// `negative.ppm` (blue), `overlay.ppm` (masked maps, red over blue) and
/// `estimate.json` into `out`. Map images are upscaled by the downsample
/// factor.
pub fn export_visualization(estimate: &ProportionEstimate, out: &Path) -> Result<EstimateSidecar> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let d = estimate.downsample;
    let maps = estimate.maps.upscale(d);
    let masked = estimate.masked_maps().upscale(d);
    let mask = &estimate.pixel_mask;
    let (h, w) = (maps.height(), maps.width());
    let peak = maps.values().iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
    let (p, n, mp, mn) = (maps.plane(0), maps.plane(1), masked.plane(0), masked.plane(1));

    let write = |name: &str, rgb: Vec<u8>| crate::pnm::write_rgb8(&out.join(name), w, h, rgb);
    crate::pnm::write_rgb8(
        &out.join("mask.ppm"),
        mask.width(),
        mask.height(),
        to_rgb(mask, |i| [unit_byte(mask.values()[i]); 3]),
    )?;
    write("positive.ppm", to_rgb(&maps, |i| [unit_byte(p[i] / peak), 0, 0]))?;
    write("negative.ppm", to_rgb(&maps, |i| [0, 0, unit_byte(n[i] / peak)]))?;
    write(
        "overlay.ppm",
        to_rgb(&maps, |i| [unit_byte(mp[i] / peak), 0, unit_byte(mn[i] / peak)]),
    )?;

    let sidecar = EstimateSidecar {
        s_p: estimate.s_p,
        s_n: estimate.s_n,
        r_hat: estimate.r_hat,
        degenerate: estimate.degenerate,
    };
    let path = out.join("estimate.json");
    let bytes = serde_json::to_vec_pretty(&sidecar).map_err(|e| Error::json(&path, e))?;
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(sidecar)
}
