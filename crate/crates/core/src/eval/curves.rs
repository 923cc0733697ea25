use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::stats::midranks;

/// Slack when comparing achieved to target specificity, so a target
/// quoted to three decimals (0.667) is met by the fraction it rounds (2/3).
pub const SPECIFICITY_TOLERANCE: f64 = 5e-4;

fn check(y: &[bool], probs: &[f64]) -> Result<(usize, usize), EvalError> {
    if y.len() != probs.len() {
        return Err(EvalError::LengthMismatch(y.len(), probs.len()));
    }
    let pos = y.iter().filter(|&&v| v).count();
    Ok((pos, y.len() - pos))
}

/// Probability that a random positive outscores a random negative, ties ½.
pub fn roc_auc(y: &[bool], probs: &[f64]) -> Result<f64, EvalError> {
    let (n_pos, n_neg) = check(y, probs)?;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let ranks = midranks(probs);
    let r_pos: f64 = ranks.iter().zip(y).filter(|(_, &t)| t).map(|(r, _)| r).sum();
    let u = r_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Records with probability strictly above this are called positive.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// One point per distinct probability (descending) plus a final point
/// below the minimum where everything is positive.
pub fn roc_curve(y: &[bool], probs: &[f64]) -> Result<Vec<RocPoint>, EvalError> {
    let (n_pos, n_neg) = check(y, probs)?;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = probs[order[i]];
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
        while i < order.len() && probs[order[i]] == t {
            if y[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
    }
    let min = probs[order[order.len() - 1]];
    points.push(RocPoint {
        threshold: min - 1.0,
        fpr: 1.0,
        tpr: 1.0,
    });
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_predicted: Option<f64>,
    pub observed: Option<f64>,
}

/// Fixed-width bins `[0, w), [w, 2w), …, [1 − w, 1]`.
pub fn calibration_bins(y: &[bool], probs: &[f64], bin_width: f64) -> Result<Vec<CalibrationBin>, EvalError> {
    check(y, probs)?;
    let n_bins = ((1.0 / bin_width).round() as usize).max(1);
    let edge = |i: usize| i as f64 / n_bins as f64;
    let mut count = vec![0usize; n_bins];
    let mut sum_p = vec![0.0; n_bins];
    let mut pos = vec![0usize; n_bins];
    for (&t, &p) in y.iter().zip(probs) {
        let mut b = ((p * n_bins as f64).floor().max(0.0) as usize).min(n_bins - 1);
        // correct for rounding right at an edge
        if b > 0 && p < edge(b) {
            b -= 1;
        } else if b + 1 < n_bins && p >= edge(b + 1) {
            b += 1;
        }
        count[b] += 1;
        sum_p[b] += p;
        pos[b] += usize::from(t);
    }
    Ok((0..n_bins)
        .map(|b| CalibrationBin {
            lower: edge(b),
            upper: edge(b + 1),
            count: count[b],
            mean_predicted: (count[b] > 0).then(|| sum_p[b] / count[b] as f64),
            observed: (count[b] > 0).then(|| pos[b] as f64 / count[b] as f64),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionCurve {
    pub thresholds: Vec<f64>,
    pub net_benefit_model: Vec<f64>,
    pub net_benefit_treat_all: Vec<f64>,
    pub net_benefit_treat_none: Vec<f64>,
    pub prevalence: f64,
}

pub fn decision_curve(y: &[bool], probs: &[f64], thresholds: &[f64]) -> Result<DecisionCurve, EvalError> {
    let (n_pos, _) = check(y, probs)?;
    let n = y.len() as f64;
    let pi = n_pos as f64 / n;
    let mut model = Vec::with_capacity(thresholds.len());
    let mut all = Vec::with_capacity(thresholds.len());
    for &pt in thresholds {
        let odds = pt / (1.0 - pt);
        let (mut tp, mut fp) = (0usize, 0usize);
        for (&t, &p) in y.iter().zip(probs) {
            if p > pt {
                if t {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        model.push(tp as f64 / n - fp as f64 / n * odds);
        all.push(pi - (1.0 - pi) * odds);
    }
    Ok(DecisionCurve {
        thresholds: thresholds.to_vec(),
        net_benefit_model: model,
        net_benefit_treat_all: all,
        net_benefit_treat_none: vec![0.0; thresholds.len()],
        prevalence: pi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub specificity: f64,
    /// `None` when there are no positives.
    pub sensitivity: Option<f64>,
}

/// Smallest threshold (rule: positive iff prob > threshold) whose
/// specificity reaches `target`. Candidates are every distinct probability
/// and one value below the minimum.
pub fn threshold_at_specificity(y: &[bool], probs: &[f64], target: f64) -> Result<OperatingPoint, EvalError> {
    let (n_pos, n_neg) = check(y, probs)?;
    if !(0.0..=1.0).contains(&target) {
        return Err(EvalError::UnreachableTarget(target));
    }
    if n_neg == 0 {
        return Err(EvalError::NoNegatives);
    }
    let mut cands: Vec<f64> = probs.to_vec();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let below = cands[0] - 1.0;
    let at = |t: f64| {
        let tn = y.iter().zip(probs).filter(|(&v, &p)| !v && p <= t).count();
        let tp = y.iter().zip(probs).filter(|(&v, &p)| v && p > t).count();
        OperatingPoint {
            threshold: t,
            specificity: tn as f64 / n_neg as f64,
            sensitivity: (n_pos > 0).then(|| tp as f64 / n_pos as f64),
        }
    };
    for t in std::iter::once(below).chain(cands) {
        let op = at(t);
        if op.specificity >= target - SPECIFICITY_TOLERANCE {
            return Ok(op);
        }
    }
    unreachable!("the largest candidate has specificity 1")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_small_cases() {
        assert_eq!(roc_auc(&[false, true], &[0.2, 0.8]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[false, true, true], &[0.3; 3]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[false, true, false, true], &[0.4, 0.3, 0.2, 0.8]).unwrap(), 0.75);
        assert!(matches!(roc_auc(&[true, true], &[0.1, 0.2]), Err(EvalError::SingleClass)));
    }

    #[test]
    fn roc_runs_from_origin_to_corner() {
        let pts = roc_curve(&[false, true, false, true], &[0.4, 0.3, 0.2, 0.8]).unwrap();
        assert_eq!((pts[0].fpr, pts[0].tpr), (0.0, 0.0));
        let last = pts.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        assert_eq!(pts.len(), 5);
    }

    #[test]
    fn calibration_bin_of_two() {
        let bins = calibration_bins(&[true, false], &[0.75, 0.72], 0.1).unwrap();
        assert_eq!(bins.len(), 10);
        assert_eq!(bins[7].count, 2);
        assert_eq!(bins[7].observed, Some(0.5));
        assert_eq!(bins[0].count, 0);
        assert_eq!(bins[0].observed, None);
    }

    #[test]
    fn calibration_edges() {
        let bins = calibration_bins(&[true, true, false, true], &[1.0, 0.3, 0.0, 0.7], 0.1).unwrap();
        assert_eq!(bins[9].count, 1);
        assert_eq!(bins[3].count, 1);
        assert_eq!(bins[7].count, 1);
        assert_eq!(bins[0].count, 1);
    }

    #[test]
    fn decision_curve_examples() {
        let dc = decision_curve(&[true, false, false, false], &[0.9, 0.1, 0.1, 0.1], &[0.2, 0.25]).unwrap();
        assert!((dc.net_benefit_model[0] - 0.25).abs() < 1e-15);
        assert!((dc.net_benefit_treat_all[0] - 0.0625).abs() < 1e-15);
        assert!(dc.net_benefit_treat_all[1].abs() < 1e-12);
        assert_eq!(dc.net_benefit_treat_none, vec![0.0, 0.0]);
    }

    #[test]
    fn specificity_threshold_examples() {
        let y = [false, false, false, true];
        let p = [0.1, 0.2, 0.3, 0.9];
        let op = threshold_at_specificity(&y, &p, 0.667).unwrap();
        assert_eq!(op.threshold, 0.2);
        assert!((op.specificity - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(op.sensitivity, Some(1.0));
        let op = threshold_at_specificity(&y, &p, 0.0).unwrap();
        assert!(op.threshold < 0.1);
        assert_eq!(op.sensitivity, Some(1.0));
        assert!(threshold_at_specificity(&y, &p, 1.1).is_err());
        assert!(matches!(threshold_at_specificity(&[true], &[0.4], 0.5), Err(EvalError::NoNegatives)));
    }
}
