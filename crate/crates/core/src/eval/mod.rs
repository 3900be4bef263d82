//! Grid-level metrics and the experiment harness: cross-validation,
//! train/test transfer, security sweeps and the architecture study.
//!
//! Visible cells are the positive class. Metrics over a set of frames pool
//! the confusion counts of every cell.

mod crossval;
mod experiments;
mod report;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::FovMask;
use crate::real::Real;
use crate::segnet::ProbMap;

pub use crossval::{crossval, crossval_segnet, fold_split, Candidate, CrossValResult, FoldRow, SearchGrid, SEARCH_GRID};
pub use experiments::{
    attack_label, benchmark, evaluate_learned, parametric_study, security_sweep, spoof_frames, transfer_matrix, Estimator,
    LearnedModel, McdSettings, StudyData, StudyRow, SweepRow, TestSet, Timing, MIN_TIMING_RUNS,
};
pub use report::{read_jsonl, text_table, write_csv, write_jsonl, Tabular};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |mut a, b| {
            a += b;
            a
        })
    }
}

pub fn confusion(pred: &FovMask, gt: &FovMask) -> Result<ConfusionCounts> {
    if pred.spec.resolution != gt.spec.resolution || pred.cells.len() != gt.cells.len() {
        return Err(Error::shape(
            format!("{0}x{0} mask", gt.spec.resolution),
            format!("{0}x{0}", pred.spec.resolution),
        ));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.cells.iter().zip(&gt.cells) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Any 0/0 is reported as 0.
pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
    Metrics { precision, recall, accuracy: ratio(c.tp + c.tn, c.total()), f1 }
}

/// Step-wise area under the precision-recall curve: cells are ranked by
/// descending score and tied scores enter together.
pub fn auprc_scores(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!("{} labels", scores.len()), labels.len()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::invalid("AUPRC needs at least one positive cell"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("AUPRC scores contain NaN"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

pub fn auprc<T: Real>(pm: &ProbMap<T>, gt: &FovMask) -> Result<f64> {
    if pm.spec.resolution != gt.spec.resolution {
        return Err(Error::shape(gt.spec.resolution, pm.spec.resolution));
    }
    let scores: Vec<f64> = pm.values.iter().map(|v| v.f64()).collect();
    auprc_scores(&scores, &gt.cells)
}

/// One evaluated cell of an experiment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub train_set: String,
    pub test_set: String,
    pub variant: String,
    pub model_kind: String,
    pub attack: String,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub auprc: Option<f64>,
}

impl MetricRecord {
    pub fn new(labels: [&str; 5], m: Metrics, auprc: Option<f64>) -> Self {
        let [train_set, test_set, variant, model_kind, attack] = labels.map(str::to_owned);
        Self {
            train_set,
            test_set,
            variant,
            model_kind,
            attack,
            precision: m.precision,
            recall: m.recall,
            accuracy: m.accuracy,
            f1: m.f1,
            auprc,
        }
    }

    pub fn metrics(&self) -> Metrics {
        Metrics { precision: self.precision, recall: self.recall, accuracy: self.accuracy, f1: self.f1 }
    }
}
