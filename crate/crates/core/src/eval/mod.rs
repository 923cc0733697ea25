//! Evaluation: stratified folds, threshold metrics, ROC, calibration,
//! decision curves, rank tests and the reader-study comparison.

mod curves;
mod ranktest;
mod reader;
mod split;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use curves::{
    calibration_bins, decision_curve, roc_auc, roc_curve, threshold_at_specificity, CalibrationBin, DecisionCurve,
    OperatingPoint, RocPoint, SPECIFICITY_TOLERANCE,
};
pub use ranktest::{critical_difference, friedman_nemenyi, RankTestResult};
pub use reader::{
    load_votes, read_votes, reader_comparison, ModelAtReaderSpecificity, ReaderComparison, ReaderResult, StageDetection,
    Votes,
};
pub use split::{stratified_folds, stratified_kfold};

use crate::scalar::{mean, sample_sd};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} labels vs {1} scores")]
    LengthMismatch(usize, usize),
    #[error("both classes are required")]
    SingleClass,
    #[error("no negative records; specificity is undefined")]
    NoNegatives,
    #[error("class of size {size} cannot be split into {k} folds")]
    ClassTooSmall { size: usize, k: usize },
    #[error("need at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("target specificity {0} is outside [0, 1]")]
    UnreachableTarget(f64),
    #[error("rank test needs at least 2 models and 2 folds")]
    RankShape,
    #[error("votes misaligned with records: {0}")]
    Misaligned(String),
    #[error("votes file: {0}")]
    Votes(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn from_predictions(y: &[bool], predicted: &[bool]) -> Result<Self, EvalError> {
        if y.len() != predicted.len() {
            return Err(EvalError::LengthMismatch(y.len(), predicted.len()));
        }
        let mut c = ConfusionCounts::default();
        for (&t, &p) in y.iter().zip(predicted) {
            match (t, p) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        Ok(c)
    }
}

/// Counts with the rule "positive iff prob > threshold".
pub fn confusion(y: &[bool], probs: &[f64], threshold: f64) -> Result<ConfusionCounts, EvalError> {
    if y.len() != probs.len() {
        return Err(EvalError::LengthMismatch(y.len(), probs.len()));
    }
    let predicted: Vec<bool> = probs.iter().map(|&p| p > threshold).collect();
    ConfusionCounts::from_predictions(y, &predicted)
}

/// Threshold metrics. A ratio with a zero denominator is `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv: Option<f64>,
    pub f1: Option<f64>,
    pub roc_auc: Option<f64>,
}

impl MetricSet {
    pub const NAMES: [&'static str; 6] = ["accuracy", "sensitivity", "specificity", "ppv", "f1", "roc_auc"];

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "accuracy" => self.accuracy,
            "sensitivity" => self.sensitivity,
            "specificity" => self.specificity,
            "ppv" => self.ppv,
            "f1" => self.f1,
            "roc_auc" => self.roc_auc,
            _ => None,
        }
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: &ConfusionCounts) -> MetricSet {
    let sensitivity = ratio(c.tp, c.tp + c.fn_);
    let ppv = ratio(c.tp, c.tp + c.fp);
    let f1 = match (ppv, sensitivity) {
        (Some(p), Some(s)) if p + s > 0.0 => Some(2.0 * p * s / (p + s)),
        _ => None,
    };
    MetricSet {
        accuracy: ratio(c.tp + c.tn, c.total()),
        sensitivity,
        specificity: ratio(c.tn, c.tn + c.fp),
        ppv,
        f1,
        roc_auc: None,
    }
}

/// Threshold metrics plus ROC-AUC (absent when a class is missing).
pub fn metric_set(y: &[bool], probs: &[f64], threshold: f64) -> Result<MetricSet, EvalError> {
    let mut m = metrics(&confusion(y, probs, threshold)?);
    m.roc_auc = roc_auc(y, probs).ok();
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; `None` for a single value.
    pub sd: Option<f64>,
    pub n: usize,
}

impl MeanSd {
    /// Summarises the defined values; `None` when there are none.
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Option<Self> {
        let v: Vec<f64> = values.into_iter().flatten().collect();
        Some(Self {
            mean: mean(&v)?,
            sd: sample_sd(&v),
            n: v.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_predictions_give_half_everywhere() {
        let c = confusion(&[true, true, false, false], &[0.9, 0.1, 0.2, 0.8], 0.5).unwrap();
        assert_eq!((c.tp, c.fn_, c.tn, c.fp), (1, 1, 1, 1));
        let m = metrics(&c);
        for v in [m.accuracy, m.sensitivity, m.specificity, m.ppv, m.f1] {
            assert_eq!(v, Some(0.5));
        }
    }

    #[test]
    fn perfect_and_all_negative_predictions() {
        let y = [true, false, true, false];
        let m = metrics(&confusion(&y, &[1.0, 0.0, 0.9, 0.2], 0.5).unwrap());
        assert_eq!((m.sensitivity, m.specificity), (Some(1.0), Some(1.0)));
        let m = metrics(&confusion(&y, &[0.1; 4], 0.5).unwrap());
        assert_eq!(m.ppv, None);
        assert_eq!(m.sensitivity, Some(0.0));
        assert_eq!(m.f1, None);
    }

    #[test]
    fn boundary_probability_is_negative() {
        let c = confusion(&[true], &[0.5], 0.5).unwrap();
        assert_eq!(c.fn_, 1);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(matches!(confusion(&[true], &[0.1, 0.2], 0.5), Err(EvalError::LengthMismatch(1, 2))));
    }

    #[test]
    fn confusion_serialises_fn_field() {
        let s = serde_json::to_string(&ConfusionCounts { tp: 1, fp: 2, tn: 3, fn_: 4 }).unwrap();
        assert_eq!(s, r#"{"tp":1,"fp":2,"tn":3,"fn":4}"#);
    }
}
