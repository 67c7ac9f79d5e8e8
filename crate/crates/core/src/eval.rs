//! Interval-level evaluation: confusion matrices, per-interval recall,
//! macro precision/recall/F1, point-detection metrics, and k-fold
//! cross-validation.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{interval_of, CellRecord, IntervalId, Sample};
use crate::detect::Detection;
use crate::error::{Error, Result};
use crate::pipeline::{self, PipelineConfig};

pub const K: usize = 5;

/// Rows are true intervals, columns predicted intervals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion(pub [[u64; K]; K]);

impl Confusion {
    pub fn add(&mut self, truth: IntervalId, predicted: IntervalId) {
        self.0[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.0[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.0.iter().map(|row| row[j]).sum()
    }

    pub fn merge(&mut self, other: &Confusion) {
        for i in 0..K {
            for j in 0..K {
                self.0[i][j] += other.0[i][j];
            }
        }
    }
}

/// Buckets each estimate and tallies it against its true interval.
pub fn bucketize_predictions(r_hats: &[f64], truths: &[IntervalId]) -> Result<Confusion> {
    if r_hats.len() != truths.len() {
        return Err(Error::shape(truths.len(), r_hats.len()));
    }
    let mut c = Confusion::default();
    for (&r, &t) in r_hats.iter().zip(truths) {
        c.add(t, interval_of(r)?);
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub m_recall: f64,
    pub m_precision: f64,
    pub m_f1: f64,
    pub per_interval_recall: [f64; K],
    pub per_interval_precision: [f64; K],
    pub per_interval_f1: [f64; K],
}

#[inline]
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[inline]
fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Unweighted means over the five intervals. Empty rows or columns give
/// recall or precision 0 for that interval.
pub fn macro_metrics(c: &Confusion) -> MacroMetrics {
    let mut rec = [0.0; K];
    let mut prec = [0.0; K];
    let mut f = [0.0; K];
    for k in 0..K {
        rec[k] = ratio(c.0[k][k], c.row_sum(k));
        prec[k] = ratio(c.0[k][k], c.col_sum(k));
        f[k] = f1(prec[k], rec[k]);
    }
    let mean = |v: &[f64; K]| v.iter().sum::<f64>() / K as f64;
    MacroMetrics {
        m_recall: mean(&rec),
        m_precision: mean(&prec),
        m_f1: mean(&f),
        per_interval_recall: rec,
        per_interval_precision: prec,
        per_interval_f1: f,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

fn point_cmp(a: (f64, f64), b: (f64, f64)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1))
}

/// One-to-one greedy matching of points in ascending distance order.
/// Equal distances are ordered by the pair's points (smaller point first),
/// so swapping the two sets yields the mirrored matching. Pairs farther
/// apart than `radius` are never matched. Returns `(pred index, gt index)`
/// pairs.
pub fn greedy_match(pred: &[(f64, f64)], gt: &[(f64, f64)], radius: f64) -> Vec<(usize, usize)> {
    let r2 = radius * radius;
    let mut cand: Vec<(f64, (f64, f64), (f64, f64), usize, usize)> = Vec::new();
    for (i, &p) in pred.iter().enumerate() {
        for (j, &g) in gt.iter().enumerate() {
            let d2 = (p.0 - g.0).powi(2) + (p.1 - g.1).powi(2);
            if d2 <= r2 {
                let (lo, hi) = if point_cmp(p, g).is_le() { (p, g) } else { (g, p) };
                cand.push((d2, lo, hi, i, j));
            }
        }
    }
    cand.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(point_cmp(a.1, b.1))
            .then(point_cmp(a.2, b.2))
            .then((a.3, a.4).cmp(&(b.3, b.4)))
    });
    let mut used_p = vec![false; pred.len()];
    let mut used_g = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (_, _, _, i, j) in cand {
        if !used_p[i] && !used_g[j] {
            used_p[i] = true;
            used_g[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

pub fn detection_metrics(pred: &[Detection], gt: &[CellRecord], match_radius: f64) -> DetectionMetrics {
    let p: Vec<(f64, f64)> = pred.iter().map(|d| (d.row as f64, d.col as f64)).collect();
    let g: Vec<(f64, f64)> = gt.iter().map(|c| (c.row as f64, c.col as f64)).collect();
    point_metrics(&p, &g, match_radius)
}

/// Precision/recall/F1 of point sets under greedy matching.
pub fn point_metrics(pred: &[(f64, f64)], gt: &[(f64, f64)], match_radius: f64) -> DetectionMetrics {
    let tp = greedy_match(pred, gt, match_radius).len();
    let precision = ratio(tp as u64, pred.len() as u64);
    let recall = ratio(tp as u64, gt.len() as u64);
    DetectionMetrics {
        precision,
        recall,
        f1: f1(precision, recall),
        true_positives: tp,
        false_positives: pred.len() - tp,
        false_negatives: gt.len() - tp,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: Confusion,
    pub per_interval_recall: [f64; K],
    pub m_recall: f64,
    pub m_precision: f64,
    pub m_f1: f64,
    pub detection_f1: Option<f64>,
}

impl EvalReport {
    pub fn from_confusion(confusion: Confusion) -> Self {
        let m = macro_metrics(&confusion);
        Self {
            confusion,
            per_interval_recall: m.per_interval_recall,
            m_recall: m.m_recall,
            m_precision: m.m_precision,
            m_f1: m.m_f1,
            detection_f1: None,
        }
    }

    /// The eight numeric columns in table order.
    pub fn columns(&self) -> [f64; 8] {
        let r = &self.per_interval_recall;
        [r[0], r[1], r[2], r[3], r[4], self.m_recall, self.m_precision, self.m_f1]
    }

    pub fn table_header() -> String {
        let mut s = format!("{:<16}", "Method");
        for id in IntervalId::ALL {
            let _ = write!(s, " {:>8}", id.label());
        }
        for h in ["mRecall", "mPrecision", "mF1"] {
            let _ = write!(s, " {:>10}", h);
        }
        s
    }

    pub fn table_row(&self, method: &str) -> String {
        let mut s = format!("{method:<16}");
        let cols = self.columns();
        for v in &cols[..5] {
            let _ = write!(s, " {v:>8.3}");
        }
        for v in &cols[5..] {
            let _ = write!(s, " {v:>10.3}");
        }
        s
    }

    pub fn to_table(&self, method: &str) -> String {
        format!("{}\n{}\n", Self::table_header(), self.table_row(method))
    }
}

/// Per-fold outcome kept alongside the aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_ids: Vec<String>,
    pub r_hats: Vec<f64>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    /// Summed confusion; fold-mean metrics.
    pub aggregate: EvalReport,
    pub folds: Vec<FoldReport>,
}

/// Seeded fold assignment, stratified by interval: each interval's samples
/// are shuffled and dealt round-robin, continuing where the previous interval
/// left off.
pub fn assign_folds(truths: &[IntervalId], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config("cross-validation needs k >= 2".into()));
    }
    if k > truths.len() {
        return Err(Error::Config(format!(
            "k = {k} folds exceeds dataset size {}",
            truths.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; truths.len()];
    let mut next = 0;
    for id in IntervalId::ALL {
        let mut idx: Vec<usize> = (0..truths.len()).filter(|&i| truths[i] == id).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            fold[i] = next % k;
            next += 1;
        }
    }
    Ok(fold)
}

/// Averages fold reports: metrics by unweighted fold mean, confusion by sum.
pub fn aggregate_folds(folds: &[EvalReport]) -> EvalReport {
    let n = folds.len() as f64;
    let mut confusion = Confusion::default();
    let mut rec = [0.0; K];
    let (mut mr, mut mp, mut mf) = (0.0, 0.0, 0.0);
    let mut det = Vec::new();
    for f in folds {
        confusion.merge(&f.confusion);
        for k in 0..K {
            rec[k] += f.per_interval_recall[k];
        }
        mr += f.m_recall;
        mp += f.m_precision;
        mf += f.m_f1;
        if let Some(d) = f.detection_f1 {
            det.push(d);
        }
    }
    rec.iter_mut().for_each(|v| *v /= n);
    EvalReport {
        confusion,
        per_interval_recall: rec,
        m_recall: mr / n,
        m_precision: mp / n,
        m_f1: mf / n,
        detection_f1: (!det.is_empty()).then(|| det.iter().sum::<f64>() / det.len() as f64),
    }
}

/// k-fold cross-validation of the full pipeline.
pub fn cross_validate(samples: &[Sample], k: usize, config: &PipelineConfig) -> Result<CvReport> {
    let truths: Vec<IntervalId> = samples.iter().map(|s| s.interval).collect();
    let fold_of = assign_folds(&truths, k, config.seed)?;
    let mut folds = Vec::with_capacity(k);
    for fold in 0..k {
        let (test, train): (Vec<&Sample>, Vec<&Sample>) =
            samples.iter().enumerate().fold((vec![], vec![]), |(mut te, mut tr), (i, s)| {
                if fold_of[i] == fold {
                    te.push(s);
                } else {
                    tr.push(s);
                }
                (te, tr)
            });
        let out = pipeline::run_fold(&train, &test, config, fold as u64)?;
        let mut report = EvalReport::from_confusion(bucketize_predictions(
            &out.r_hats,
            &test.iter().map(|s| s.interval).collect::<Vec<_>>(),
        )?);
        report.detection_f1 = out.detection_f1;
        folds.push(FoldReport {
            fold,
            test_ids: test.iter().map(|s| s.id.clone()).collect(),
            r_hats: out.r_hats,
            report,
        });
    }
    let aggregate = aggregate_folds(&folds.iter().map(|f| f.report.clone()).collect::<Vec<_>>());
    Ok(CvReport { aggregate, folds })
}
