//! Randomized invariant checks. Each returns `Err` with the failing case.
//! Runners are seeded so that repeated runs see the same cases.

use masked_llp::dataset::{interval_of, tumor_proportion, CellClass, CellRecord, IntervalId};
use masked_llp::detect::{
    build_mask, classifier_loss, detection_loss, find_peaks, oracle_mask, render_gt_heatmap, Detection,
};
use masked_llp::eval::{bucketize_predictions, macro_metrics, point_metrics, Confusion, K};
use masked_llp::losses::{
    loss_for_interval, proportion_loss, weighted_focal_proportion_loss, ProportionPair, EPS,
};
use masked_llp::nn::sigmoid;
use masked_llp::propnet::{
    self, sample_loss_grad, train_proportion, PropTrainConfig, ProportionEstimate, ProportionModel, TrainItem,
};
use masked_llp::synthgen::{generate_sample, GenConfig};
use masked_llp::{load_dataset, save_dataset, ImageGrid, LossMode, Sample};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradients::{self, STAGE_ONE_STEP};
use super::{central, random_cells, random_grid, random_mask, rel_err};

pub type Check = fn() -> Result<(), String>;

/// Every invariant, named by module.
pub const ALL: [(&str, Check); 24] = [
    ("dataset: interval_of(midpoint) is the bucket", midpoint_round_trip),
    ("dataset: buckets partition [0, 1]", buckets_partition),
    ("dataset: save then load is lossless", dataset_round_trip),
    ("synthgen: generation is a pure function of its config", generation_is_pure),
    ("synthgen: positive fraction equals true_r exactly", generation_is_exact),
    ("synthgen: cells keep min_separation", generation_separation),
    ("detect: heatmap in [0, 1], 1 only at cell centres", heatmap_range),
    ("detect: peaks form a packing", peaks_are_packing),
    ("detect: adding a tumor detection never unsets the mask", mask_monotone),
    ("detect: masks are binary", mask_binary),
    ("detect: gradients match finite differences", stage_one_gradients),
    ("losses: non-negative", losses_non_negative),
    ("losses: zero exactly at r_hat = r", losses_zero_set),
    ("losses: reduction identities", losses_reduce),
    ("losses: gradients match finite differences", loss_gradients),
    ("losses: focal damping", focal_damping),
    ("propnet: r_hat range", r_hat_range),
    ("propnet: growing the mask toward positive pixels never lowers r_hat", mask_growth),
    ("propnet: scale invariance", scale_invariance),
    ("propnet: frozen mask contract", frozen_mask),
    ("propnet: fixed seed and threads give identical parameters", training_determinism),
    ("eval: metrics in [0, 1] and F1 <= max(P, R)", metric_ranges),
    ("eval: swapping prediction and truth swaps precision and recall", detection_symmetry),
    ("eval: bucketizing midpoints is the identity; totals match", bucketize_identity),
];

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

pub fn midpoint_round_trip() -> Result<(), String> {
    for id in IntervalId::ALL {
        let got = interval_of(id.interval().midpoint).map_err(|e| e.to_string())?;
        if got != id {
            return Err(format!("{id}: midpoint maps to {got}"));
        }
    }
    Ok(())
}

/// 1000 cases of 100 uniform draws each, plus bucket edges.
pub fn buckets_partition() -> Result<(), String> {
    let edges = [0.0, 0.01, 0.25, 0.5, 0.75, 1.0];
    for r in edges.iter().flat_map(|&e| [e, f64::max(e - 1e-12, 0.0), f64::min(e + 1e-12, 1.0)]) {
        let n = IntervalId::ALL.iter().filter(|id| id.contains(r)).count();
        if n != 1 {
            return Err(format!("r={r} lies in {n} buckets"));
        }
    }
    run(1000, any::<u64>(), |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let r: f64 = rng.random();
            let n = IntervalId::ALL.iter().filter(|id| id.contains(r)).count();
            prop_assert_eq!(n, 1, "r={}", r);
            prop_assert!(IntervalId::ALL[interval_of(r).unwrap().index()].contains(r));
        }
        Ok(())
    })
}

fn small_sample(seed: u64, id: usize) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (rng.random_range(1..9), rng.random_range(1..9));
    let channels = if rng.random::<bool>() { 3 } else { 1 };
    let vals = (0..h * w * channels)
        .map(|_| masked_llp::pnm::quantize16(rng.random()))
        .collect();
    let image = ImageGrid::from_planar(h, w, channels, vals).unwrap();
    let n = rng.random_range(1..10);
    let mut cells = random_cells(&mut rng, n, h, w);
    cells.push(CellRecord {
        row: 0,
        col: 0,
        class: CellClass::NegTumor,
    });
    let true_r = tumor_proportion(&cells).unwrap();
    let annotated = rng.random::<bool>();
    Sample {
        id: format!("x{id:03}"),
        image,
        cells: annotated.then(|| cells.clone()),
        oracle_cells: rng.random::<bool>().then_some(cells),
        interval: interval_of(true_r).unwrap(),
        true_r,
    }
}

pub fn dataset_round_trip() -> Result<(), String> {
    run(200, (any::<u64>(), 1usize..4), |(seed, n)| {
        let samples: Vec<Sample> = (0..n).map(|i| small_sample(seed.wrapping_add(i as u64), i)).collect();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &samples).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        prop_assert_eq!(back, samples);
        Ok(())
    })
}

fn gen_config() -> impl Strategy<Value = GenConfig> {
    (any::<u64>(), 40usize..65, 1usize..30, 0usize..10, 0.0..=1.0f64, 0.0..=1.0f64).prop_map(
        |(seed, grid, nt, nn, r, conf)| {
            let mut c = GenConfig {
                seed,
                grid_size: grid,
                n_tumor: nt,
                n_nontumor: nn,
                target_r: r,
                ..GenConfig::default()
            };
            c.appearance.confusability = conf;
            c
        },
    )
}

fn generated(cfg: &GenConfig) -> Option<Sample> {
    // crowded configurations may legitimately fail to place every cell
    generate_sample(cfg).ok()
}

pub fn generation_is_pure() -> Result<(), String> {
    run(300, gen_config(), |cfg| {
        prop_assert_eq!(generated(&cfg), generated(&cfg));
        Ok(())
    })
}

pub fn generation_is_exact() -> Result<(), String> {
    run(1000, gen_config(), |cfg| {
        let Some(s) = generated(&cfg) else { return Ok(()) };
        let cells = s.oracle_cells.as_deref().unwrap();
        let pos = cells.iter().filter(|c| c.class == CellClass::PosTumor).count();
        let tumor = cells.iter().filter(|c| c.class.is_tumor()).count();
        prop_assert_eq!(tumor, cfg.n_tumor);
        prop_assert_eq!(pos as f64 / tumor as f64, s.true_r);
        prop_assert_eq!(interval_of(s.true_r).unwrap(), s.interval);
        prop_assert!(s.validate().is_ok());
        Ok(())
    })
}

pub fn generation_separation() -> Result<(), String> {
    run(1000, gen_config(), |cfg| {
        let Some(s) = generated(&cfg) else { return Ok(()) };
        let cells = s.oracle_cells.unwrap();
        for (i, a) in cells.iter().enumerate() {
            for b in &cells[i + 1..] {
                let d = ((a.row as f64 - b.row as f64).powi(2) + (a.col as f64 - b.col as f64).powi(2)).sqrt();
                prop_assert!(d >= cfg.min_separation, "{:?} {:?} at {}", a, b, d);
            }
        }
        Ok(())
    })
}

pub fn heatmap_range() -> Result<(), String> {
    run(1000, (any::<u64>(), 0usize..12, 0.5..3.0f64), |(seed, n, sigma)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (rng.random_range(1..24), rng.random_range(1..24));
        let cells = random_cells(&mut rng, n, h, w);
        let map = render_gt_heatmap(&cells, h, w, sigma);
        for r in 0..h {
            for c in 0..w {
                let v = map.get(r, c, 0);
                prop_assert!((0.0..=1.0).contains(&v));
                let centre = cells.iter().any(|x| (x.row, x.col) == (r, c));
                prop_assert_eq!(v == 1.0, centre, "({}, {}) = {}", r, c, v);
            }
        }
        Ok(())
    })
}

pub fn peaks_are_packing() -> Result<(), String> {
    run(1000, (any::<u64>(), 0.05..0.95f64, 1.0..6.0f64), |(seed, threshold, radius)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (rng.random_range(1..20), rng.random_range(1..20));
        let mut map = random_grid(&mut rng, h, w, 1);
        // coarse values create ties and plateaus
        if rng.random::<bool>() {
            map.values_mut().iter_mut().for_each(|v| *v = (*v * 4.0).round() / 4.0);
        }
        let peaks = find_peaks(&map, threshold, radius);
        for (i, a) in peaks.iter().enumerate() {
            prop_assert!(map.get(a.0, a.1, 0) >= threshold);
            for b in &peaks[i + 1..] {
                let d2 = (a.0 as f64 - b.0 as f64).powi(2) + (a.1 as f64 - b.1 as f64).powi(2);
                prop_assert!(d2.sqrt() >= radius, "{:?} {:?}", a, b);
            }
        }
        Ok(())
    })
}

fn random_detections(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> Vec<Detection> {
    (0..n)
        .map(|_| Detection {
            row: rng.random_range(0..h),
            col: rng.random_range(0..w),
            tumor_score: rng.random(),
        })
        .collect()
}

pub fn mask_monotone() -> Result<(), String> {
    run(1000, (any::<u64>(), 0usize..10, 0.3..5.0f64), |(seed, n, alpha)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (rng.random_range(1..24), rng.random_range(1..24));
        let mut dets = random_detections(&mut rng, n, h, w);
        let before = build_mask(&dets, h, w, alpha);
        dets.insert(
            rng.random_range(0..=dets.len()),
            Detection {
                row: rng.random_range(0..h),
                col: rng.random_range(0..w),
                tumor_score: rng.random_range(0.5001..1.0),
            },
        );
        let after = build_mask(&dets, h, w, alpha);
        for (a, b) in before.values().iter().zip(after.values()) {
            prop_assert!(b >= a);
        }
        prop_assert!(after.sum() >= before.sum());
        Ok(())
    })
}

pub fn mask_binary() -> Result<(), String> {
    run(1000, (any::<u64>(), 0usize..15, 0.3..5.0f64), |(seed, n, alpha)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (rng.random_range(1..24), rng.random_range(1..24));
        let dets = random_detections(&mut rng, n, h, w);
        prop_assert!(build_mask(&dets, h, w, alpha).is_binary());
        let cells = random_cells(&mut rng, n, h, w);
        prop_assert!(oracle_mask(&cells, h, w, alpha).is_binary());
        Ok(())
    })
}

/// MSE and BCE on 1000 random instances, detector parameters on 20.
pub fn stage_one_gradients() -> Result<(), String> {
    run(1000, any::<u64>(), |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (rng.random_range(1..6), rng.random_range(1..6));
        let target = random_grid(&mut rng, h, w, 1);
        let pred = random_grid(&mut rng, h, w, 1);
        let (_, g) = detection_loss(&target, &pred).unwrap();
        for i in 0..h * w {
            let f = |x: f64| {
                let mut p = pred.clone();
                p.values_mut()[i] = x;
                detection_loss(&target, &p).unwrap().0
            };
            let e = rel_err(g.values()[i], central(f, pred.values()[i], STAGE_ONE_STEP), 1e-8);
            prop_assert!(e <= 1e-4, "mse pixel {}: {}", i, e);
        }
        let n = rng.random_range(1..10);
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
        let s: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
        let out = classifier_loss(&s, &y).unwrap();
        for i in 0..n {
            let f = |v: f64| {
                let mut s2 = s.clone();
                s2[i] = sigmoid(v);
                classifier_loss(&s2, &y).unwrap().loss
            };
            let e = rel_err(out.grad_logits[i], central(f, z[i], STAGE_ONE_STEP), 1e-8);
            prop_assert!(e <= 1e-4, "bce logit {}: {}", i, e);
        }
        Ok(())
    })?;
    run(20, any::<u64>(), |seed| {
        let e = gradients::detector_network(seed);
        prop_assert!(e <= 1e-4, "detector parameters: {}", e);
        Ok(())
    })
}

fn modes() -> impl Strategy<Value = LossMode> {
    prop_oneof![Just(LossMode::Prop), Just(LossMode::FocalProp), Just(LossMode::Wfl)]
}

pub fn losses_non_negative() -> Result<(), String> {
    run(
        1000,
        (0.0..=1.0f64, EPS..=1.0 - EPS, 0.0..6.0f64, 0usize..5, modes()),
        |(r, q, gamma, b, mode)| {
            let p = ProportionPair::new(r, q);
            prop_assert!(proportion_loss(p).loss >= 0.0);
            prop_assert!(weighted_focal_proportion_loss(p, gamma).loss >= 0.0);
            prop_assert!(loss_for_interval(&IntervalId::ALL[b].interval(), q, mode).loss >= 0.0);
            Ok(())
        },
    )
}

pub fn losses_zero_set() -> Result<(), String> {
    run(1000, (0.0..=1.0f64, 0.0..6.0f64, 0usize..5, modes(), 1e-6..1.0f64), |(r, gamma, b, mode, gap)| {
        // the clamp moves r_hat = 0 or 1 off r, so r is kept inside it
        let r = r.clamp(EPS, 1.0 - EPS);
        prop_assert_eq!(weighted_focal_proportion_loss(ProportionPair::new(r, r), gamma).loss, 0.0);
        let iv = IntervalId::ALL[b].interval();
        prop_assert_eq!(loss_for_interval(&iv, iv.midpoint, mode).loss, 0.0);
        let q = if r + gap <= 1.0 - EPS { r + gap } else { r - gap };
        if (EPS..=1.0 - EPS).contains(&q) {
            prop_assert!(weighted_focal_proportion_loss(ProportionPair::new(r, q), gamma).loss > 0.0);
        }
        Ok(())
    })
}

pub fn losses_reduce() -> Result<(), String> {
    run(1000, (0.0..=1.0f64, 0.0..=1.0f64, 0usize..5, 0.0..1.0f64), |(r, q, b, u)| {
        let p = ProportionPair::new(r, q);
        let kl = proportion_loss(p);
        let w0 = weighted_focal_proportion_loss(p, 0.0);
        prop_assert!((w0.loss - kl.loss).abs() <= 1e-12 && (w0.grad - kl.grad).abs() <= 1e-12);
        let iv = IntervalId::ALL[b].interval();
        let wfl_uniform = loss_for_interval(&iv.with_gamma(2.0), u, LossMode::Wfl);
        let focal = loss_for_interval(&iv, u, LossMode::FocalProp);
        prop_assert!((wfl_uniform.loss - focal.loss).abs() <= 1e-12);
        prop_assert!((wfl_uniform.grad - focal.grad).abs() <= 1e-12);
        Ok(())
    })
}

/// 1000 cases of 10 triples.
pub fn loss_gradients() -> Result<(), String> {
    run(1000, any::<u64>(), |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10 {
            let (r, q, gamma) = gradients::random_triple(&mut rng);
            let a = weighted_focal_proportion_loss(ProportionPair::new(r, q), gamma).grad;
            let f = |x: f64| weighted_focal_proportion_loss(ProportionPair::new(r, x), gamma).loss;
            let e = rel_err(a, central(f, q, gradients::LOSS_STEP), 1e-8);
            prop_assert!(e <= 1e-5, "r={} r_hat={} gamma={}: {}", r, q, gamma, e);
        }
        Ok(())
    })
}

pub fn focal_damping() -> Result<(), String> {
    run(1000, (0.0..=1.0f64, EPS..=1.0 - EPS), |(r, q)| {
        let p = ProportionPair::new(r, q);
        let kl = proportion_loss(p).loss;
        let w = weighted_focal_proportion_loss(p, 2.0).loss;
        prop_assert!(w <= kl);
        if kl > 0.0 {
            let gap2 = (r - q).powi(2);
            prop_assert!((w / kl - gap2).abs() <= 1e-12 * gap2.max(1e-300) + 1e-15);
        }
        Ok(())
    })
}

pub fn r_hat_range() -> Result<(), String> {
    run(300, (any::<u64>(), 1usize..4, 0.0..1.0f64), |(seed, d, density)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (rng.random_range(2..20), rng.random_range(2..20));
        let model = ProportionModel::init(d, seed);
        let img = random_grid(&mut rng, h, w, 3);
        let mask = random_mask(&mut rng, h, w, density);
        let est = propnet::forward(&model, &img, &mask).unwrap();
        prop_assert!(est.r_hat > 0.0 && est.r_hat < 1.0 && !est.degenerate);
        let empty = propnet::forward(&model, &img, &ImageGrid::zeros(h, w, 1)).unwrap();
        prop_assert!(empty.degenerate && empty.r_hat == 0.5);
        Ok(())
    })
}

fn positive_maps(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageGrid {
    let mut maps = random_grid(rng, h, w, 2);
    maps.values_mut().iter_mut().for_each(|v| *v += 1e-3);
    maps
}

pub fn mask_growth() -> Result<(), String> {
    run(1000, (any::<u64>(), 0.05..0.9f64), |(seed, density)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (rng.random_range(1..16), rng.random_range(1..16));
        let maps = positive_maps(&mut rng, h, w);
        let mask = random_mask(&mut rng, h, w, density);
        let before = ProportionEstimate::from_maps(maps.clone(), mask.clone(), 1);
        let mut grown = mask.clone();
        for i in 0..h * w {
            let (p, n) = (maps.plane(0)[i], maps.plane(1)[i]);
            if p > before.r_hat * (p + n) && rng.random::<bool>() {
                grown.values_mut()[i] = 1.0;
            }
        }
        let after = ProportionEstimate::from_maps(maps, grown, 1);
        prop_assert!(after.r_hat >= before.r_hat - 1e-15, "{} < {}", after.r_hat, before.r_hat);
        Ok(())
    })
}

pub fn scale_invariance() -> Result<(), String> {
    run(1000, (any::<u64>(), -6.0..6.0f64), |(seed, log_c)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (rng.random_range(1..16), rng.random_range(1..16));
        let maps = positive_maps(&mut rng, h, w);
        let mask = random_mask(&mut rng, h, w, 0.5);
        let c = 10f64.powf(log_c);
        let mut scaled = maps.clone();
        scaled.values_mut().iter_mut().for_each(|v| *v *= c);
        let a = ProportionEstimate::from_maps(maps, mask.clone(), 1).r_hat;
        let b = ProportionEstimate::from_maps(scaled, mask, 1).r_hat;
        prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
        Ok(())
    })
}

/// The gradient from a stored mask equals the gradient from a freshly built
/// one, and covers exactly the proportion model's parameters.
pub fn frozen_mask() -> Result<(), String> {
    run(100, any::<u64>(), |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (rng.random_range(4..20), rng.random_range(4..20));
        let model = ProportionModel::init(2, seed);
        let img = random_grid(&mut rng, h, w, 3);
        let cells = random_cells(&mut rng, 6, h, w);
        let stored = serde_json::to_string(&oracle_mask(&cells, h, w, 2.0).into_values()).unwrap();
        let stored: Vec<f64> = serde_json::from_str(&stored).unwrap();
        let stored = ImageGrid::from_planar(h, w, 1, stored).unwrap();
        let iv = IntervalId::ALL[rng.random_range(0..5)];
        let n = model.net.params.len();
        let (mut g1, mut g2) = (vec![0.0; n], vec![0.0; n]);
        let l1 = sample_loss_grad(&model, &img, &propnet::downsample_mask(&stored, 2), iv, LossMode::Wfl, 1.0, &mut g1);
        let fresh = oracle_mask(&cells, h, w, 2.0);
        let l2 = sample_loss_grad(&model, &img, &propnet::downsample_mask(&fresh, 2), iv, LossMode::Wfl, 1.0, &mut g2);
        prop_assert_eq!(l1, l2);
        prop_assert_eq!(g1, g2);
        Ok(())
    })
}

pub fn training_determinism() -> Result<(), String> {
    let samples: Vec<Sample> = (0..6)
        .map(|i| {
            generate_sample(&GenConfig {
                seed: i,
                grid_size: 32,
                n_tumor: 8,
                n_nontumor: 2,
                target_r: i as f64 / 5.0,
                ..GenConfig::default()
            })
            .unwrap()
        })
        .collect();
    let masks: Vec<ImageGrid> = samples
        .iter()
        .map(|s| oracle_mask(s.oracle_cells.as_deref().unwrap(), 32, 32, 2.0))
        .collect();
    let items: Vec<TrainItem> = samples
        .iter()
        .zip(&masks)
        .map(|(s, m)| TrainItem::new(s, m, 2).unwrap())
        .collect();
    run(5, (any::<u64>(), 1usize..4), |(seed, threads)| {
        let cfg = PropTrainConfig {
            epochs: 3,
            batch_size: 2,
            seed,
            threads,
            ..PropTrainConfig::default()
        };
        let (a, la) = train_proportion(&items, LossMode::Wfl, &cfg).unwrap();
        let (b, lb) = train_proportion(&items, LossMode::Wfl, &cfg).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(la, lb);
        Ok(())
    })
}

fn confusion_from(counts: Vec<u64>) -> Confusion {
    let mut c = Confusion::default();
    for (i, v) in counts.into_iter().enumerate() {
        c.0[i / K][i % K] = v;
    }
    c
}

pub fn metric_ranges() -> Result<(), String> {
    run(1000, prop::collection::vec(0u64..20, K * K), |counts| {
        let m = macro_metrics(&confusion_from(counts));
        for v in [m.m_recall, m.m_precision, m.m_f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        for k in 0..K {
            let (p, r, f) = (m.per_interval_precision[k], m.per_interval_recall[k], m.per_interval_f1[k]);
            prop_assert!([p, r, f].iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(f <= p.max(r) + 1e-15);
        }
        Ok(())
    })
}

fn points() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0u8..12, 0u8..12).prop_map(|(r, c)| (r as f64, c as f64)), 0..12)
}

pub fn detection_symmetry() -> Result<(), String> {
    run(1000, (points(), points(), 0.5..4.0f64), |(a, b, radius)| {
        let ab = point_metrics(&a, &b, radius);
        let ba = point_metrics(&b, &a, radius);
        prop_assert_eq!(ab.precision, ba.recall);
        prop_assert_eq!(ab.recall, ba.precision);
        prop_assert_eq!(ab.f1, ba.f1);
        Ok(())
    })
}

pub fn bucketize_identity() -> Result<(), String> {
    run(1000, prop::collection::vec((0usize..5, 0.0..=1.0f64), 0..50), |draws| {
        let truths: Vec<IntervalId> = draws.iter().map(|&(b, _)| IntervalId::ALL[b]).collect();
        let mids: Vec<f64> = truths.iter().map(|t| t.interval().midpoint).collect();
        let c = bucketize_predictions(&mids, &truths).unwrap();
        for i in 0..K {
            for j in 0..K {
                if i != j {
                    prop_assert_eq!(c.0[i][j], 0);
                }
            }
        }
        prop_assert_eq!(c.total() as usize, draws.len());
        let r_hats: Vec<f64> = draws.iter().map(|&(_, r)| r).collect();
        let c = bucketize_predictions(&r_hats, &truths).unwrap();
        prop_assert_eq!(c.total() as usize, draws.len());
        for (k, id) in IntervalId::ALL.iter().enumerate() {
            prop_assert_eq!(c.row_sum(k) as usize, truths.iter().filter(|t| *t == id).count());
        }
        Ok(())
    })
}
