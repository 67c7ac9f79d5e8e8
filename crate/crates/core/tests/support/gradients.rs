//! Finite-difference gradient checks. Each suite takes a seed, builds a
//! random instance and returns the largest relative error it saw.

use masked_llp::dataset::IntervalId;
use masked_llp::detect::{classifier_loss, detection_loss, DetectorModel};
use masked_llp::losses::{loss_for_interval, weighted_focal_proportion_loss, ProportionPair};
use masked_llp::nn::{sigmoid, Network};
use masked_llp::propnet::{self, batch_loss_grad, downsample_mask, ProportionModel, TrainItem};
use masked_llp::{ImageGrid, LossMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{central, random_grid, random_mask, rel_err};

pub struct Suite {
    pub name: &'static str,
    pub run: fn(u64) -> f64,
    pub tolerance: f64,
}

pub const SUITES: [Suite; 5] = [
    Suite {
        name: "detection MSE",
        run: detection_mse,
        tolerance: 1e-6,
    },
    Suite {
        name: "classifier BCE",
        run: classifier_bce,
        tolerance: 1e-5,
    },
    Suite {
        name: "proportion losses",
        run: proportion_losses,
        tolerance: 1e-5,
    },
    Suite {
        name: "proportion model parameters",
        run: proportion_model,
        tolerance: 1e-4,
    },
    Suite {
        name: "detector network parameters",
        run: detector_network,
        tolerance: 1e-4,
    },
];

pub const STAGE_ONE_STEP: f64 = 1e-4;
pub const LOSS_STEP: f64 = 1e-6;
const FLOOR: f64 = 1e-8;

pub fn detection_mse(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (rng.random_range(1..8), rng.random_range(1..8));
    let target = random_grid(&mut rng, h, w, 1);
    let pred = random_grid(&mut rng, h, w, 1);
    let (_, grad) = detection_loss(&target, &pred).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..h * w {
        let f = |x: f64| {
            let mut p = pred.clone();
            p.values_mut()[i] = x;
            detection_loss(&target, &p).unwrap().0
        };
        let num = central(f, pred.values()[i], STAGE_ONE_STEP);
        worst = worst.max(rel_err(grad.values()[i], num, FLOOR));
    }
    worst
}

pub fn classifier_bce(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..24);
    let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let labels: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
    let scores: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let out = classifier_loss(&scores, &labels).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let f = |z: f64| {
            let mut s = scores.clone();
            s[i] = sigmoid(z);
            classifier_loss(&s, &labels).unwrap().loss
        };
        let num = central(f, logits[i], STAGE_ONE_STEP);
        worst = worst.max(rel_err(out.grad_logits[i], num, FLOOR));
    }
    worst
}

/// `(r, r_hat, gamma)` with `r_hat` in `[1e-3, 1 - 1e-3]` (where the
/// central-difference truncation error, about `h^2 / (3 r_hat^2)`, stays far
/// below tolerance) and at least `1e-3` from `r`.
pub fn random_triple(rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    let r = match rng.random_range(0..6) {
        0 => 0.0,
        1 => 1.0,
        2 => IntervalId::ALL[rng.random_range(0..5)].interval().midpoint,
        _ => rng.random::<f64>(),
    };
    let r_hat = loop {
        let q = rng.random_range(1e-3..1.0 - 1e-3);
        if (q - r).abs() >= 1e-3 {
            break q;
        }
    };
    let gamma = match rng.random_range(0..3) {
        0 => 0.0,
        1 => 2.0,
        _ => rng.random_range(0.0..5.0),
    };
    (r, r_hat, gamma)
}

/// 100 random triples plus the three scheduled modes at a random interval.
pub fn proportion_losses(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (r, q, gamma) = random_triple(&mut rng);
        let a = weighted_focal_proportion_loss(ProportionPair::new(r, q), gamma).grad;
        let f = |x: f64| weighted_focal_proportion_loss(ProportionPair::new(r, x), gamma).loss;
        worst = worst.max(rel_err(a, central(f, q, LOSS_STEP), FLOOR));
    }
    let iv = IntervalId::ALL[rng.random_range(0..5)].interval();
    for mode in [LossMode::Prop, LossMode::FocalProp, LossMode::Wfl] {
        let q = loop {
            let q = rng.random_range(1e-3..1.0 - 1e-3);
            if (q - iv.midpoint).abs() >= 1e-3 {
                break q;
            }
        };
        let a = loss_for_interval(&iv, q, mode).grad;
        let f = |x: f64| loss_for_interval(&iv, x, mode).loss;
        worst = worst.max(rel_err(a, central(f, q, LOSS_STEP), FLOOR));
    }
    worst
}

/// Mean batch loss recomputed through the public forward pass only.
fn forward_batch_loss(model: &ProportionModel, batch: &[(ImageGrid, ImageGrid, IntervalId)], mode: LossMode) -> f64 {
    batch
        .iter()
        .map(|(img, mask, iv)| {
            let est = propnet::forward(model, img, mask).unwrap();
            loss_for_interval(&iv.interval(), est.r_hat, mode).loss
        })
        .sum::<f64>()
        / batch.len() as f64
}

/// Two 32x32 samples, random masks, intervals and loss mode.
pub fn proportion_model(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ProportionModel::init(2, seed);
    for b in model.net.params.iter_mut() {
        *b += rng.random_range(-0.05..0.05);
    }
    let mode = [LossMode::Prop, LossMode::FocalProp, LossMode::Wfl][rng.random_range(0..3)];
    let batch: Vec<(ImageGrid, ImageGrid, IntervalId)> = (0..2)
        .map(|_| {
            (
                random_grid(&mut rng, 32, 32, 3),
                random_mask(&mut rng, 32, 32, 0.3),
                IntervalId::ALL[rng.random_range(0..5)],
            )
        })
        .collect();
    let items: Vec<TrainItem> = batch
        .iter()
        .map(|(img, mask, iv)| TrainItem {
            image: img,
            mask_d: downsample_mask(mask, 2),
            interval: *iv,
        })
        .collect();
    let refs: Vec<&TrainItem> = items.iter().collect();
    let (_, grad) = batch_loss_grad(&model, &refs, mode);
    let mut worst: f64 = 0.0;
    for k in 0..model.net.params.len() {
        let x0 = model.net.params[k];
        let f = |x: f64| {
            let mut m = model.clone();
            m.net.params[k] = x;
            forward_batch_loss(&m, &batch, mode)
        };
        worst = worst.max(rel_err(grad[k], central(f, x0, STAGE_ONE_STEP), FLOOR));
    }
    worst
}

/// Detector encoder-decoder on a small odd-sized image against a random
/// target heatmap.
pub fn detector_network(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (rng.random_range(3..8), rng.random_range(3..8));
    let net: Network = DetectorModel::init(seed).net;
    let img = random_grid(&mut rng, h, w, 3);
    let target = random_grid(&mut rng, h, w, 1);
    let trace = net.forward_trace(&img);
    let (_, g) = detection_loss(&target, trace.output()).unwrap();
    let mut grad = vec![0.0; net.params.len()];
    net.backward(&trace, &g, &mut grad, false);
    let mut worst: f64 = 0.0;
    // every parameter of the last two layers plus a random sample elsewhere
    let n = net.params.len();
    let mut idx: Vec<usize> = (n - 600..n).collect();
    idx.extend((0..100).map(|_| rng.random_range(0..n - 600)));
    for k in idx {
        let f = |x: f64| {
            let mut m = net.clone();
            m.params[k] = x;
            detection_loss(&target, &m.forward(&img)).unwrap().0
        };
        worst = worst.max(rel_err(grad[k], central(f, net.params[k], STAGE_ONE_STEP), FLOOR));
    }
    worst
}
