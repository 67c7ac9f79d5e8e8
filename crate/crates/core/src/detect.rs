//! Stage one: heatmap cell detection, tumor/non-tumor classification at the
//! detected positions, and the tumor mask built from those detections.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader};
use crate::dataset::{CellClass, CellRecord, Sample};
use crate::error::{Error, Result};
use crate::eval::greedy_match;
use crate::grid::ImageGrid;
use crate::nn::{sigmoid, Activation, LayerSpec, Network, Topology};
use crate::optim::{Optimizer, OptimizerConfig};

/// Clamp applied to classifier scores before taking logs.
pub const SCORE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub row: usize,
    pub col: usize,
    pub tumor_score: f64,
}

impl Detection {
    pub fn is_tumor(&self) -> bool {
        self.tumor_score > 0.5
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectConfig {
    /// Ground-truth heatmap Gaussian scale (generator `cell_radius / 2`).
    pub sigma: f64,
    pub threshold: f64,
    pub nms_radius: f64,
    /// Mask disk radius.
    pub alpha: f64,
    /// Detections within this distance of a ground-truth cell inherit its label.
    pub label_match_radius: f64,
    pub detector_epochs: usize,
    pub classifier_epochs: usize,
    pub detector_lr: f64,
    pub classifier_lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            threshold: 0.3,
            nms_radius: 2.5,
            alpha: 2.0,
            label_match_radius: 3.0,
            detector_epochs: 60,
            classifier_epochs: 30,
            detector_lr: 0.01,
            classifier_lr: 0.005,
            batch_size: 4,
            seed: 0,
        }
    }
}

/// `H(q) = max_c exp(-|q - c|^2 / (2 sigma^2))`; 0 with no cells.
pub fn render_gt_heatmap(cells: &[CellRecord], height: usize, width: usize, sigma: f64) -> ImageGrid {
    assert!(sigma > 0.0, "sigma must be positive");
    let mut h = ImageGrid::zeros(height, width, 1);
    let reach = (4.0 * sigma).ceil() as isize;
    let inv = 1.0 / (2.0 * sigma * sigma);
    for c in cells {
        let (r0, c0) = (c.row as isize, c.col as isize);
        for r in (r0 - reach).max(0)..(r0 + reach + 1).min(height as isize) {
            for cc in (c0 - reach).max(0)..(c0 + reach + 1).min(width as isize) {
                let d2 = ((r - r0).pow(2) + (cc - c0).pow(2)) as f64;
                let v = (-d2 * inv).exp();
                if v > h.get(r as usize, cc as usize, 0) {
                    h.set(r as usize, cc as usize, 0, v);
                }
            }
        }
    }
    h
}

/// Summed squared error and its gradient `2 (H_hat - H)`.
pub fn detection_loss(target: &ImageGrid, predicted: &ImageGrid) -> Result<(f64, ImageGrid)> {
    if !target.same_shape(predicted) {
        return Err(Error::shape(
            format!("{:?}", target.shape()),
            format!("{:?}", predicted.shape()),
        ));
    }
    let mut grad = predicted.clone();
    let mut loss = 0.0;
    for (g, &t) in grad.values_mut().iter_mut().zip(target.values()) {
        let d = *g - t;
        loss += d * d;
        *g = 2.0 * d;
    }
    Ok((loss, grad))
}

/// Local maxima (>= every 8-neighbour) at or above `threshold`, accepted
/// greedily by descending value with ties broken by `(row, col)`. A
/// candidate closer than `nms_radius` to an accepted peak is suppressed.
pub fn find_peaks(heatmap: &ImageGrid, threshold: f64, nms_radius: f64) -> Vec<(usize, usize)> {
    let (h, w) = (heatmap.height(), heatmap.width());
    let mut cand = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let v = heatmap.get(r, c, 0);
            if v < threshold {
                continue;
            }
            let mut is_max = true;
            'n: for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if (dr, dc) == (0, 0) || rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                        continue;
                    }
                    if heatmap.get(rr as usize, cc as usize, 0) > v {
                        is_max = false;
                        break 'n;
                    }
                }
            }
            if is_max {
                cand.push((v, r, c));
            }
        }
    }
    cand.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let r2 = nms_radius * nms_radius;
    let mut peaks: Vec<(usize, usize)> = Vec::new();
    for (_, r, c) in cand {
        let clear = peaks.iter().all(|&(pr, pc)| {
            let d2 = (pr as f64 - r as f64).powi(2) + (pc as f64 - c as f64).powi(2);
            d2 >= r2
        });
        if clear {
            peaks.push((r, c));
        }
    }
    peaks
}

/// Binary mask: 1 within distance `< alpha` of any tumor detection.
pub fn build_mask(detections: &[Detection], height: usize, width: usize, alpha: f64) -> ImageGrid {
    assert!(alpha > 0.0, "alpha must be positive");
    let mut m = ImageGrid::zeros(height, width, 1);
    let reach = alpha.ceil() as isize;
    let a2 = alpha * alpha;
    for d in detections.iter().filter(|d| d.is_tumor()) {
        let (r0, c0) = (d.row as isize, d.col as isize);
        for r in (r0 - reach).max(0)..(r0 + reach + 1).min(height as isize) {
            for c in (c0 - reach).max(0)..(c0 + reach + 1).min(width as isize) {
                if (((r - r0).pow(2) + (c - c0).pow(2)) as f64) < a2 {
                    m.set(r as usize, c as usize, 0, 1.0);
                }
            }
        }
    }
    m
}

/// Mask from ground-truth cells, bypassing stage one.
pub fn oracle_mask(cells: &[CellRecord], height: usize, width: usize, alpha: f64) -> ImageGrid {
    let dets: Vec<Detection> = cells
        .iter()
        .map(|c| Detection {
            row: c.row,
            col: c.col,
            tumor_score: if c.class.is_tumor() { 1.0 } else { 0.0 },
        })
        .collect();
    build_mask(&dets, height, width, alpha)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BceOutput {
    pub loss: f64,
    /// Gradient with respect to the logits behind `scores`.
    pub grad_logits: Vec<f64>,
    /// Set when there was nothing to average over.
    pub empty: bool,
}

/// Mean binary cross-entropy of scores against 0/1 labels.
pub fn classifier_loss(scores: &[f64], labels: &[f64]) -> Result<BceOutput> {
    if scores.len() != labels.len() {
        return Err(Error::shape(labels.len(), scores.len()));
    }
    if scores.is_empty() {
        return Ok(BceOutput {
            loss: 0.0,
            grad_logits: Vec::new(),
            empty: true,
        });
    }
    let n = scores.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(scores.len());
    for (&s, &y) in scores.iter().zip(labels) {
        let p = s.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        grad.push((s - y) / n);
    }
    Ok(BceOutput {
        loss: loss / n,
        grad_logits: grad,
        empty: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub net: Network,
}

impl DetectorModel {
    /// Four conv layers around one pool/upsample pair, sigmoid output.
    pub fn topology() -> Topology {
        Topology {
            input_channels: 3,
            layers: vec![
                LayerSpec::conv(3, 8, 3),
                LayerSpec::act(Activation::Tanh),
                LayerSpec::AvgPool { factor: 2 },
                LayerSpec::conv(8, 8, 3),
                LayerSpec::act(Activation::Tanh),
                LayerSpec::Upsample { factor: 2 },
                LayerSpec::conv(8, 8, 3),
                LayerSpec::act(Activation::Tanh),
                LayerSpec::conv(8, 1, 3),
                LayerSpec::act(Activation::Sigmoid),
            ],
        }
    }

    pub fn init(seed: u64) -> Self {
        let mut net = Network::init(Self::topology(), seed);
        // start from a mostly-empty heatmap
        net.last_bias_mut().expect("conv layer")[0] = -3.0;
        Self { net }
    }

    pub fn heatmap(&self, image: &ImageGrid) -> ImageGrid {
        self.net.forward(image)
    }

    pub fn save(&self, path: &Path, cfg: &DetectConfig) -> Result<()> {
        save_network(path, "detector", &self.net, cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let net = load_network(path, "detector", Self::topology())?;
        Ok(Self { net })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    /// Full-image feature extractor.
    pub features: Network,
    /// Per-position linear head: feature weights followed by the bias.
    pub head: Vec<f64>,
}

pub const FEATURE_WIDTH: usize = 16;

impl ClassifierModel {
    /// Three 3x3 conv layers of widths 8, 16, 16.
    pub fn feature_topology() -> Topology {
        Topology {
            input_channels: 3,
            layers: vec![
                LayerSpec::conv(3, 8, 3),
                LayerSpec::act(Activation::Tanh),
                LayerSpec::conv(8, 16, 3),
                LayerSpec::act(Activation::Tanh),
                LayerSpec::conv(16, FEATURE_WIDTH, 3),
                LayerSpec::act(Activation::Tanh),
            ],
        }
    }

    pub fn init(seed: u64) -> Self {
        let features = Network::init(Self::feature_topology(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
        let bound = (6.0 / (FEATURE_WIDTH + 1) as f64).sqrt();
        let mut head: Vec<f64> = (0..FEATURE_WIDTH)
            .map(|_| rand::Rng::random_range(&mut rng, -bound..bound))
            .collect();
        head.push(0.0);
        Self { features, head }
    }

    pub fn zeros() -> Self {
        Self {
            features: Network::zeros(Self::feature_topology()),
            head: vec![0.0; FEATURE_WIDTH + 1],
        }
    }

    pub fn param_count(&self) -> usize {
        self.features.params.len() + self.head.len()
    }

    fn logit(&self, feats: &ImageGrid, row: usize, col: usize) -> f64 {
        let mut z = self.head[FEATURE_WIDTH];
        for k in 0..FEATURE_WIDTH {
            z += self.head[k] * feats.get(row, col, k);
        }
        z
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.features.params.clone();
        p.extend_from_slice(&self.head);
        p
    }

    pub fn set_flat_params(&mut self, p: &[f64]) {
        let n = self.features.params.len();
        self.features.params.copy_from_slice(&p[..n]);
        self.head.copy_from_slice(&p[n..]);
    }

    pub fn save(&self, path: &Path, cfg: &DetectConfig) -> Result<()> {
        let header = CheckpointHeader {
            kind: "classifier".into(),
            topology: serde_json::json!({
                "features": Self::feature_topology(),
                "head_inputs": FEATURE_WIDTH,
            }),
            seed: cfg.seed,
            hyperparams: serde_json::to_value(cfg).expect("config serializes"),
            param_count: self.param_count(),
        };
        write_checkpoint(path, &header, &self.flat_params())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, params) = read_checkpoint(path)?;
        let mut m = Self::zeros();
        if header.kind != "classifier" || params.len() != m.param_count() {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                reason: format!("expected a classifier with {} parameters", m.param_count()),
            });
        }
        m.set_flat_params(&params);
        Ok(m)
    }
}

pub(crate) fn save_network<C: Serialize>(path: &Path, kind: &str, net: &Network, cfg: &C) -> Result<()> {
    let hyper = serde_json::to_value(cfg).expect("config serializes");
    let seed = hyper.get("seed").and_then(|s| s.as_u64()).unwrap_or(0);
    let header = CheckpointHeader {
        kind: kind.into(),
        topology: serde_json::to_value(&net.topology).expect("topology serializes"),
        seed,
        hyperparams: hyper,
        param_count: net.params.len(),
    };
    write_checkpoint(path, &header, &net.params)
}

pub(crate) fn load_network(path: &Path, kind: &str, expected: Topology) -> Result<Network> {
    let (header, params) = read_checkpoint(path)?;
    let topo: Topology = serde_json::from_value(header.topology).map_err(|e| Error::json(path, e))?;
    if header.kind != kind || topo != expected || params.len() != expected.param_count() {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("not a {kind} checkpoint with the expected topology"),
        });
    }
    Ok(Network {
        topology: topo,
        params,
    })
}

/// Scores each position from one full-image feature map, in input order.
pub fn classify_cells(model: &ClassifierModel, image: &ImageGrid, positions: &[(usize, usize)]) -> Vec<Detection> {
    if positions.is_empty() {
        return Vec::new();
    }
    let feats = model.features.forward(image);
    positions
        .iter()
        .map(|&(row, col)| Detection {
            row,
            col,
            tumor_score: sigmoid(model.logit(&feats, row, col)),
        })
        .collect()
}

/// Training log: one mean loss per epoch.
pub type LossLog = Vec<f64>;

/// Writes a loss log as CSV with header `epoch,loss`.
pub fn write_loss_log(path: &Path, log: &[f64]) -> Result<()> {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in log.iter().enumerate() {
        s.push_str(&format!("{i},{l:.12e}\n"));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn annotated<'a>(samples: &[&'a Sample]) -> Result<Vec<(&'a ImageGrid, &'a [CellRecord])>> {
    let out: Vec<_> = samples
        .iter()
        .filter_map(|s| s.cells.as_deref().map(|c| (&s.image, c)))
        .collect();
    if out.is_empty() {
        return Err(Error::Config(
            "stage-one training needs at least one sample with cell annotations".into(),
        ));
    }
    Ok(out)
}

fn batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}

/// Trains the heatmap regressor on the annotated samples.
pub fn train_detector(samples: &[&Sample], cfg: &DetectConfig) -> Result<(DetectorModel, LossLog)> {
    let data = annotated(samples)?;
    let targets: Vec<ImageGrid> = data
        .iter()
        .map(|(img, cells)| render_gt_heatmap(cells, img.height(), img.width(), cfg.sigma))
        .collect();
    let mut model = DetectorModel::init(cfg.seed);
    let mut opt = Optimizer::new(OptimizerConfig::adam(cfg.detector_lr), model.net.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xDE7EC7);
    let mut log = Vec::with_capacity(cfg.detector_epochs);
    for _ in 0..cfg.detector_epochs {
        let mut epoch_loss = 0.0;
        for batch in batches(data.len(), cfg.batch_size, &mut rng) {
            let mut grad = vec![0.0; model.net.params.len()];
            let scale = 1.0 / batch.len() as f64;
            for &i in &batch {
                let trace = model.net.forward_trace(data[i].0);
                let (loss, mut g) = detection_loss(&targets[i], trace.output())?;
                epoch_loss += loss;
                g.values_mut().iter_mut().for_each(|v| *v *= scale);
                model.net.backward(&trace, &g, &mut grad, false);
            }
            opt.step(&mut model.net.params, &grad);
        }
        log.push(epoch_loss / data.len() as f64);
    }
    Ok((model, log))
}

/// Detected positions of each annotated sample paired with tumor labels
/// inherited from the nearest ground-truth cell; unmatched detections are
/// dropped.
fn labelled_detections(
    detector: &DetectorModel,
    image: &ImageGrid,
    cells: &[CellRecord],
    cfg: &DetectConfig,
) -> Labelled {
    let peaks = find_peaks(&detector.heatmap(image), cfg.threshold, cfg.nms_radius);
    let p: Vec<(f64, f64)> = peaks.iter().map(|&(r, c)| (r as f64, c as f64)).collect();
    let g: Vec<(f64, f64)> = cells.iter().map(|c| (c.row as f64, c.col as f64)).collect();
    let mut pairs = greedy_match(&p, &g, cfg.label_match_radius);
    pairs.sort_unstable();
    pairs
        .into_iter()
        .map(|(i, j)| (peaks[i], if cells[j].class.is_tumor() { 1.0 } else { 0.0 }))
        .collect()
}

/// Trains the tumor classifier with BCE at the frozen detector's outputs.
pub fn train_classifier(
    samples: &[&Sample],
    detector: &DetectorModel,
    cfg: &DetectConfig,
) -> Result<(ClassifierModel, LossLog)> {
    let data = annotated(samples)?;
    let labelled: Vec<_> = data
        .iter()
        .map(|(img, cells)| labelled_detections(detector, img, cells, cfg))
        .collect();
    fit_classifier(&data, &labelled, cfg)
}

/// Trains the tumor classifier with BCE at the annotated cell positions.
pub fn train_classifier_on_cells(samples: &[&Sample], cfg: &DetectConfig) -> Result<(ClassifierModel, LossLog)> {
    let data = annotated(samples)?;
    let labelled: Vec<_> = data
        .iter()
        .map(|(_, cells)| {
            cells
                .iter()
                .map(|c| ((c.row, c.col), if c.class.is_tumor() { 1.0 } else { 0.0 }))
                .collect()
        })
        .collect();
    fit_classifier(&data, &labelled, cfg)
}

type Labelled = Vec<((usize, usize), f64)>;

fn fit_classifier(
    data: &[(&ImageGrid, &[CellRecord])],
    labelled: &[Labelled],
    cfg: &DetectConfig,
) -> Result<(ClassifierModel, LossLog)> {
    let mut model = ClassifierModel::init(cfg.seed.wrapping_add(1));
    let n_feat = model.features.params.len();
    let mut params = model.flat_params();
    let mut opt = Optimizer::new(OptimizerConfig::adam(cfg.classifier_lr), params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xC1A55);
    let mut log = Vec::with_capacity(cfg.classifier_epochs);
    for _ in 0..cfg.classifier_epochs {
        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0;
        for batch in batches(data.len(), cfg.batch_size, &mut rng) {
            let traces: Vec<_> = batch
                .iter()
                .map(|&i| model.features.forward_trace(data[i].0))
                .collect();
            let mut scores = Vec::new();
            let mut labels = Vec::new();
            for (t, &i) in traces.iter().zip(&batch) {
                for &((r, c), y) in &labelled[i] {
                    scores.push(sigmoid(model.logit(t.output(), r, c)));
                    labels.push(y);
                }
            }
            let bce = classifier_loss(&scores, &labels)?;
            if bce.empty {
                continue;
            }
            epoch_loss += bce.loss;
            epoch_batches += 1;
            let mut grad = vec![0.0; params.len()];
            let mut k = 0;
            for (t, &i) in traces.iter().zip(&batch) {
                let feats = t.output();
                let mut gfeat = ImageGrid::zeros(feats.height(), feats.width(), FEATURE_WIDTH);
                for &((r, c), _) in &labelled[i] {
                    let gz = bce.grad_logits[k];
                    k += 1;
                    for f in 0..FEATURE_WIDTH {
                        grad[n_feat + f] += gz * feats.get(r, c, f);
                        let v = gfeat.get(r, c, f) + gz * model.head[f];
                        gfeat.set(r, c, f, v);
                    }
                    grad[n_feat + FEATURE_WIDTH] += gz;
                }
                model.features.backward(t, &gfeat, &mut grad[..n_feat], false);
            }
            opt.step(&mut params, &grad);
            model.set_flat_params(&params);
        }
        log.push(if epoch_batches > 0 {
            epoch_loss / epoch_batches as f64
        } else {
            0.0
        });
    }
    Ok((model, log))
}

/// Trained stage one: detector, classifier and the settings that tie them
/// to a mask.
#[derive(Debug, Clone)]
pub struct Stage1 {
    pub detector: DetectorModel,
    pub classifier: ClassifierModel,
    pub config: DetectConfig,
}

impl Stage1 {
    pub fn train(samples: &[&Sample], cfg: &DetectConfig) -> Result<(Self, LossLog, LossLog)> {
        let (detector, dlog) = train_detector(samples, cfg)?;
        let (classifier, clog) = train_classifier(samples, &detector, cfg)?;
        Ok((
            Self {
                detector,
                classifier,
                config: cfg.clone(),
            },
            dlog,
            clog,
        ))
    }

    pub fn detect(&self, image: &ImageGrid) -> Vec<Detection> {
        let peaks = find_peaks(
            &self.detector.heatmap(image),
            self.config.threshold,
            self.config.nms_radius,
        );
        classify_cells(&self.classifier, image, &peaks)
    }

    pub fn mask(&self, image: &ImageGrid) -> ImageGrid {
        build_mask(&self.detect(image), image.height(), image.width(), self.config.alpha)
    }
}

/// Accuracy of tumor/non-tumor calls over detections matched to
/// ground truth, with the number of matched detections.
pub fn classification_accuracy(dets: &[Detection], gt: &[CellRecord], radius: f64) -> (usize, usize) {
    let p: Vec<(f64, f64)> = dets.iter().map(|d| (d.row as f64, d.col as f64)).collect();
    let g: Vec<(f64, f64)> = gt.iter().map(|c| (c.row as f64, c.col as f64)).collect();
    let pairs = greedy_match(&p, &g, radius);
    let correct = pairs
        .iter()
        .filter(|&&(i, j)| dets[i].is_tumor() == (gt[j].class != CellClass::NonTumor))
        .count();
    (correct, pairs.len())
}
