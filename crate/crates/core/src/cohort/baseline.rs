use serde::{Deserialize, Serialize};

use super::{Cohort, CohortError, Feature, Label};
use crate::scalar::percentile_sorted;
use crate::stats::{chi_squared_test, rank_sum_test};

/// Bonferroni-adjusted two-sided significance level.
pub const SIGNIFICANCE_THRESHOLD: f64 = 0.0002;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowSummary {
    /// Medians and IQRs over observed values; rank-sum test.
    Continuous { lc: ClassSummary, non_lc: ClassSummary },
    /// Positive-category counts and percentages; chi-squared test.
    Categorical {
        lc_count: usize,
        lc_percent: f64,
        non_lc_count: usize,
        non_lc_percent: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub feature: Feature,
    pub summary: RowSummary,
    pub statistic: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineTable {
    pub n_lc: usize,
    pub n_non_lc: usize,
    pub rows: Vec<BaselineRow>,
}

pub fn summarize_baseline(cohort: &Cohort) -> Result<BaselineTable, CohortError> {
    let n_lc = cohort.positives();
    let n_non = cohort.len() - n_lc;
    if n_lc < 2 || n_non < 2 {
        return Err(CohortError::SingleClass { min: 2 });
    }
    let rows = Feature::ALL
        .iter()
        .map(|&f| {
            if f.is_binary() {
                categorical_row(cohort, f, n_lc, n_non)
            } else {
                continuous_row(cohort, f)
            }
        })
        .collect();
    Ok(BaselineTable {
        n_lc,
        n_non_lc: n_non,
        rows,
    })
}

fn class_values(cohort: &Cohort, f: Feature, label: Label) -> Vec<f64> {
    cohort
        .records
        .iter()
        .filter(|r| r.label == label)
        .filter_map(|r| r.value(f))
        .collect()
}

fn summary(values: &[f64]) -> ClassSummary {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return ClassSummary {
            median: f64::NAN,
            q1: f64::NAN,
            q3: f64::NAN,
            n: 0,
        };
    }
    ClassSummary {
        median: percentile_sorted(&v, 0.5),
        q1: percentile_sorted(&v, 0.25),
        q3: percentile_sorted(&v, 0.75),
        n: v.len(),
    }
}

fn continuous_row(cohort: &Cohort, f: Feature) -> BaselineRow {
    let lc = class_values(cohort, f, Label::Lc);
    let non = class_values(cohort, f, Label::NonLc);
    let test = if lc.is_empty() || non.is_empty() {
        crate::stats::TestOutcome {
            statistic: 0.0,
            p_value: 1.0,
        }
    } else {
        rank_sum_test(&lc, &non)
    };
    BaselineRow {
        feature: f,
        summary: RowSummary::Continuous {
            lc: summary(&lc),
            non_lc: summary(&non),
        },
        statistic: test.statistic,
        p_value: test.p_value,
        significant: test.p_value < SIGNIFICANCE_THRESHOLD,
    }
}

fn categorical_row(cohort: &Cohort, f: Feature, n_lc: usize, n_non: usize) -> BaselineRow {
    let count = |label| {
        cohort
            .records
            .iter()
            .filter(|r| r.label == label && r.value(f) == Some(1.0))
            .count()
    };
    let (a, c) = (count(Label::Lc), count(Label::NonLc));
    let test = chi_squared_test(&[
        vec![a as u64, (n_lc - a) as u64],
        vec![c as u64, (n_non - c) as u64],
    ]);
    BaselineRow {
        feature: f,
        summary: RowSummary::Categorical {
            lc_count: a,
            lc_percent: 100.0 * a as f64 / n_lc as f64,
            non_lc_count: c,
            non_lc_percent: 100.0 * c as f64 / n_non as f64,
        },
        statistic: test.statistic,
        p_value: test.p_value,
        significant: test.p_value < SIGNIFICANCE_THRESHOLD,
    }
}
