//! Binary runner, small fixtures and command-line invariants.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use masked_llp::detect::DetectConfig;
use masked_llp::optim::OptimizerConfig;
use masked_llp::pipeline::MaskMode;
use masked_llp::propnet::PropTrainConfig;
use masked_llp::synthgen::{benchmark_samples, BenchmarkProfile};
use masked_llp::{save_dataset, LossMode, Sample};
use masked_llp_cli::config::RunConfig;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

pub type Check = fn() -> Result<(), String>;

pub const ALL: [(&str, Check); 3] = [
    ("cli: config parse, serialize, parse is the identity", config_round_trip),
    ("cli: exit codes 0 / 1 / 2", exit_codes),
    ("cli: commands are idempotent", idempotent_commands),
];

/// Epoch flags that keep a training run to a few seconds.
pub const TINY: [&str; 8] = [
    "--epochs",
    "2",
    "--detector-epochs",
    "3",
    "--classifier-epochs",
    "3",
    "--batch-size",
    "4",
];

pub fn masked_llp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_masked-llp"))
        .args(args)
        .env_remove("MASKED_LLP_SEED")
        .output()
        .expect("spawn masked-llp")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Writes every annotated easy sample plus a handful of unannotated ones.
pub fn small_dataset(dir: &Path, unannotated: usize) -> Vec<Sample> {
    let all = benchmark_samples(BenchmarkProfile::Easy, 1).unwrap();
    let (with, without): (Vec<Sample>, Vec<Sample>) = all.into_iter().partition(|s| s.cells.is_some());
    let mut subset = with;
    subset.extend(without.into_iter().step_by(7).take(unannotated));
    save_dataset(dir, &subset).unwrap();
    subset
}

/// Every file under `dir`, relative path to bytes.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![any::<f64>().prop_filter("finite", |v| v.is_finite()), 0.0..10.0]
}

fn opt_path() -> impl Strategy<Value = Option<PathBuf>> {
    proptest::option::of("[a-z0-9_/. -]{0,24}".prop_map(PathBuf::from))
}

fn optimizer() -> impl Strategy<Value = OptimizerConfig> {
    prop_oneof![
        (finite(), finite()).prop_map(|(lr, momentum)| OptimizerConfig::Momentum { lr, momentum }),
        (finite(), finite(), finite(), finite()).prop_map(|(lr, beta1, beta2, eps)| OptimizerConfig::Adam {
            lr,
            beta1,
            beta2,
            eps
        }),
    ]
}

fn detect() -> impl Strategy<Value = DetectConfig> {
    (
        (finite(), finite(), finite(), finite(), finite()),
        (any::<usize>(), any::<usize>(), finite(), finite(), any::<usize>(), any::<u64>()),
    )
        .prop_map(
            |(
                (sigma, threshold, nms_radius, alpha, label_match_radius),
                (detector_epochs, classifier_epochs, detector_lr, classifier_lr, batch_size, seed),
            )| DetectConfig {
                sigma,
                threshold,
                nms_radius,
                alpha,
                label_match_radius,
                detector_epochs,
                classifier_epochs,
                detector_lr,
                classifier_lr,
                batch_size,
                seed,
            },
        )
}

fn proportion() -> impl Strategy<Value = PropTrainConfig> {
    (
        any::<usize>(),
        any::<usize>(),
        optimizer(),
        any::<usize>(),
        finite(),
        any::<usize>(),
        any::<u64>(),
        any::<usize>(),
    )
        .prop_map(
            |(epochs, batch_size, optimizer, patience, val_fraction, downsample, seed, threads)| PropTrainConfig {
                epochs,
                batch_size,
                optimizer,
                patience,
                val_fraction,
                downsample,
                seed,
                threads,
            },
        )
}

fn run_config() -> impl Strategy<Value = RunConfig> {
    (
        (opt_path(), opt_path(), opt_path()),
        prop_oneof![
            Just(BenchmarkProfile::Easy),
            Just(BenchmarkProfile::Imbalanced),
            Just(BenchmarkProfile::Distractor)
        ],
        any::<u64>(),
        prop_oneof![Just(LossMode::Prop), Just(LossMode::FocalProp), Just(LossMode::Wfl)],
        prop_oneof![Just(MaskMode::Masked), Just(MaskMode::Unmasked), Just(MaskMode::OracleMask)],
        any::<usize>(),
        detect(),
        proportion(),
    )
        .prop_map(
            |((dataset, output, checkpoints), profile, seed, loss_mode, mask_mode, folds, detect, proportion)| {
                RunConfig {
                    dataset,
                    output,
                    checkpoints,
                    profile,
                    seed,
                    loss_mode,
                    mask_mode,
                    folds,
                    detect,
                    proportion,
                }
            },
        )
}

pub fn config_round_trip() -> Result<(), String> {
    runner(1000)
        .run(&run_config(), |c| {
            let text = serde_json::to_string(&c).unwrap();
            let back = RunConfig::from_json(&text).map_err(TestCaseError::fail)?;
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(serde_json::to_string(&back).unwrap(), text);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn expect(args: &[&str], want: i32) -> Result<(), String> {
    let out = masked_llp(args);
    if code(&out) == want {
        Ok(())
    } else {
        Err(format!(
            "{args:?}: exit {} (want {want})\n{}",
            code(&out),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

pub fn exit_codes() -> Result<(), String> {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = dir.join("out");
    let o = path(&out);
    expect(&["plot-losses", "--out", o], 0)?;
    expect(&["--help"], 0)?;
    expect(&[], 2)?;
    expect(&["frobnicate"], 2)?;
    expect(&["generate", "--profile", "hard", "--out", o], 2)?;
    expect(&["generate"], 2)?;
    expect(&["eval", "--folds", "1", "--out", o], 2)?;
    expect(&["train", "--threshold", "1.5", "--out", o], 2)?;

    let bad_key = dir.join("bad.json");
    fs::write(&bad_key, r#"{"seed": 1, "learning_rate": 0.1}"#).unwrap();
    expect(&["train", "--config", path(&bad_key), "--out", o], 2)?;

    // runtime failures
    let missing = dir.join("missing");
    expect(&["train", "--dataset", path(&missing), "--out", o], 1)?;
    let unannotated = dir.join("unannotated");
    let samples: Vec<Sample> = benchmark_samples(BenchmarkProfile::Easy, 1)
        .unwrap()
        .into_iter()
        .filter(|s| s.cells.is_none())
        .take(6)
        .collect();
    save_dataset(&unannotated, &samples).unwrap();
    let mut args = vec!["train", "--dataset", path(&unannotated), "--out", o];
    args.extend(TINY);
    expect(&args, 1)?;
    let mut args = vec!["eval", "--dataset", path(&unannotated), "--folds", "2", "--out", o];
    args.extend(TINY);
    expect(&args, 1)
}

fn same_twice(label: &str, run: impl Fn(&Path)) -> Result<(), String> {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    run(&out);
    let first = snapshot(&out);
    fs::remove_dir_all(&out).unwrap();
    run(&out);
    let second = snapshot(&out);
    if first.is_empty() {
        return Err(format!("{label}: wrote nothing"));
    }
    if first != second {
        let differ: Vec<_> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
        return Err(format!("{label}: outputs differ: {differ:?}"));
    }
    Ok(())
}

fn succeed(args: &[&str]) {
    let out = masked_llp(args);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

pub fn idempotent_commands() -> Result<(), String> {
    let data = tempfile::tempdir().unwrap();
    small_dataset(data.path(), 8);
    let ds = path(data.path());
    same_twice("generate", |d| succeed(&["generate", "--profile", "distractor", "--seed", "2", "--out", path(d)]))?;
    same_twice("plot-losses", |d| succeed(&["plot-losses", "--out", path(d)]))?;
    same_twice("train", |d| {
        let mut args = vec!["train", "--dataset", ds, "--seed", "4", "--out", path(d)];
        args.extend(TINY);
        succeed(&args);
    })?;
    same_twice("eval", |d| {
        let mut args = vec!["eval", "--dataset", ds, "--mask-mode", "oracle-mask", "--folds", "2", "--out", path(d)];
        args.extend(TINY);
        succeed(&args);
    })
}
