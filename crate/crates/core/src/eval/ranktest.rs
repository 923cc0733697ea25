//! Friedman test over models × folds with Nemenyi post-hoc comparisons.

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::stats::{chi_squared_sf, midranks, studentized_range_cdf, studentized_range_quantile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTestResult {
    pub friedman_statistic: f64,
    pub friedman_p_value: f64,
    /// Mean within-fold rank per model; rank 1 is the highest score.
    pub average_ranks: Vec<f64>,
    /// Symmetric, unit diagonal.
    pub nemenyi_p_values: Vec<Vec<f64>>,
    pub critical_difference: f64,
    pub alpha: f64,
}

impl RankTestResult {
    pub fn significant_pairs(&self) -> Vec<(usize, usize)> {
        let k = self.average_ranks.len();
        let mut out = Vec::new();
        for i in 0..k {
            for j in i + 1..k {
                if self.nemenyi_p_values[i][j] < self.alpha {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// `q_α(k, ∞)/√2 · sqrt(k(k+1)/(6N))`.
pub fn critical_difference(k: usize, n_folds: usize, alpha: f64) -> f64 {
    let q = studentized_range_quantile(alpha, k) / std::f64::consts::SQRT_2;
    q * ((k * (k + 1)) as f64 / (6.0 * n_folds as f64)).sqrt()
}

/// `scores[model][fold]`, higher is better.
pub fn friedman_nemenyi(scores: &[Vec<f64>], alpha: f64) -> Result<RankTestResult, EvalError> {
    let k = scores.len();
    let n = scores.first().map_or(0, Vec::len);
    if k < 2 || n < 2 || scores.iter().any(|r| r.len() != n) {
        return Err(EvalError::RankShape);
    }
    let mut rank_sum = vec![0.0; k];
    let mut tie_term = 0.0;
    for f in 0..n {
        // rank 1 = best, so rank the negated scores
        let col: Vec<f64> = (0..k).map(|m| -scores[m][f]).collect();
        for (m, r) in midranks(&col).into_iter().enumerate() {
            rank_sum[m] += r;
        }
        let mut sorted = col.clone();
        sorted.sort_by(f64::total_cmp);
        let mut i = 0;
        while i < k {
            let mut j = i;
            while j < k && sorted[j] == sorted[i] {
                j += 1;
            }
            let t = (j - i) as f64;
            tie_term += t * t * t - t;
            i = j;
        }
    }
    let (kf, nf) = (k as f64, n as f64);
    let average_ranks: Vec<f64> = rank_sum.iter().map(|s| s / nf).collect();
    let ss: f64 = average_ranks.iter().map(|r| r * r).sum();
    let raw = 12.0 * nf / (kf * (kf + 1.0)) * (ss - kf * (kf + 1.0).powi(2) / 4.0);
    let correction = 1.0 - tie_term / (nf * (kf * kf * kf - kf));
    let (stat, p) = if correction <= 1e-12 {
        (0.0, 1.0)
    } else {
        let s = (raw / correction).max(0.0);
        (s, chi_squared_sf(s, kf - 1.0))
    };

    let se = (kf * (kf + 1.0) / (6.0 * nf)).sqrt();
    let mut pv = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let z = (average_ranks[i] - average_ranks[j]).abs() / se;
            let p = (1.0 - studentized_range_cdf(z * std::f64::consts::SQRT_2, k)).clamp(0.0, 1.0);
            pv[i][j] = p;
            pv[j][i] = p;
        }
    }
    Ok(RankTestResult {
        friedman_statistic: stat,
        friedman_p_value: p,
        average_ranks,
        nemenyi_p_values: pv,
        critical_difference: critical_difference(k, n, alpha),
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_models_have_no_significant_pair() {
        let s = vec![vec![0.7, 0.8, 0.75]; 4];
        let r = friedman_nemenyi(&s, 0.05).unwrap();
        assert_eq!(r.friedman_statistic, 0.0);
        assert_eq!(r.friedman_p_value, 1.0);
        assert!(r.significant_pairs().is_empty());
    }

    #[test]
    fn critical_difference_five_by_five() {
        assert!((critical_difference(5, 5, 0.05) - 2.728).abs() <= 1e-3);
    }

    #[test]
    fn dominant_model_beats_the_worst() {
        // model m scores 1 - m/10 in every fold: fixed ranks 1..5
        let s: Vec<Vec<f64>> = (0..5).map(|m| (0..20).map(|f| 1.0 - m as f64 / 10.0 + f as f64 * 1e-3).collect()).collect();
        let r = friedman_nemenyi(&s, 0.05).unwrap();
        assert_eq!(r.average_ranks[0], 1.0);
        assert_eq!(r.average_ranks[4], 5.0);
        assert!(r.nemenyi_p_values[0][4] < 0.05);
        assert!(r.significant_pairs().contains(&(0, 4)));
        // Friedman statistic without ties: 12N/(k(k+1)) Σ R² − 3N(k+1)
        let expect = 12.0 * 20.0 / 30.0 * 55.0 - 3.0 * 20.0 * 6.0;
        assert!((r.friedman_statistic - expect).abs() < 1e-9);
    }
}
