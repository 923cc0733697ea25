//! Distribution functions and nonparametric test primitives.
//!
//! Everything here works in `f64`; the special functions come from `statrs`.

use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;

use crate::scalar::total_cmp;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Two-sided p-value of a standard normal statistic.
pub fn normal_two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / SQRT_2).clamp(0.0, 1.0)
}

/// Upper tail of the chi-squared distribution.
pub fn chi_squared_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df)
        .map(|d| d.sf(x))
        .unwrap_or(f64::NAN)
        .clamp(0.0, 1.0)
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| total_cmp(&values[a], &values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Sizes of tie groups in `values`.
fn tie_groups(values: &[f64]) -> Vec<usize> {
    let mut v = values.to_vec();
    v.sort_by(total_cmp);
    let mut groups = Vec::new();
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        groups.push(j - i + 1);
        i = j + 1;
    }
    groups
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
}

/// Wilcoxon rank-sum (Mann-Whitney) test, normal approximation with tie
/// correction and no continuity correction. The reported statistic is the
/// standardised z of U for the first sample.
pub fn rank_sum_test(a: &[f64], b: &[f64]) -> TestOutcome {
    let n1 = a.len() as f64;
    let n2 = b.len() as f64;
    let pooled: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    let ranks = midranks(&pooled);
    let r1: f64 = ranks[..a.len()].iter().sum();
    let u1 = r1 - n1 * (n1 + 1.0) / 2.0;
    let n = n1 + n2;
    let tie_term: f64 = tie_groups(&pooled)
        .into_iter()
        .map(|t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum();
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 || !var.is_finite() {
        return TestOutcome {
            statistic: 0.0,
            p_value: 1.0,
        };
    }
    let z = (u1 - n1 * n2 / 2.0) / var.sqrt();
    TestOutcome {
        statistic: z,
        p_value: normal_two_sided_p(z),
    }
}

/// Pearson chi-squared test of independence on an r x c table of counts.
/// Rows or columns with zero total are dropped; a table that degenerates to a
/// single row or column gives statistic 0 and p = 1.
pub fn chi_squared_test(table: &[Vec<u64>]) -> TestOutcome {
    let rows: Vec<&Vec<u64>> = table.iter().filter(|r| r.iter().sum::<u64>() > 0).collect();
    let ncols = table.first().map_or(0, |r| r.len());
    let cols: Vec<usize> = (0..ncols)
        .filter(|&j| rows.iter().map(|r| r[j]).sum::<u64>() > 0)
        .collect();
    if rows.len() < 2 || cols.len() < 2 {
        return TestOutcome {
            statistic: 0.0,
            p_value: 1.0,
        };
    }
    let total: f64 = rows.iter().flat_map(|r| cols.iter().map(|&j| r[j] as f64)).sum();
    let row_tot: Vec<f64> = rows
        .iter()
        .map(|r| cols.iter().map(|&j| r[j] as f64).sum())
        .collect();
    let col_tot: Vec<f64> = cols
        .iter()
        .map(|&j| rows.iter().map(|r| r[j] as f64).sum())
        .collect();
    let mut stat = 0.0;
    for (i, r) in rows.iter().enumerate() {
        for (jj, &j) in cols.iter().enumerate() {
            let expected = row_tot[i] * col_tot[jj] / total;
            let d = r[j] as f64 - expected;
            stat += d * d / expected;
        }
    }
    let df = ((rows.len() - 1) * (cols.len() - 1)) as f64;
    TestOutcome {
        statistic: stat,
        p_value: chi_squared_sf(stat, df),
    }
}

/// CDF of the studentized range for `k` groups and infinite degrees of
/// freedom: `k * ∫ φ(z) [Φ(z) - Φ(z - q)]^(k-1) dz`, by composite Simpson.
pub fn studentized_range_cdf(q: f64, k: usize) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    if k < 2 {
        return 1.0;
    }
    let (lo, hi) = (-9.0_f64, 9.0_f64);
    let steps = 4000;
    let h = (hi - lo) / steps as f64;
    let f = |z: f64| normal_pdf(z) * (normal_cdf(z) - normal_cdf(z - q)).powi(k as i32 - 1);
    let mut acc = f(lo) + f(hi);
    for s in 1..steps {
        let z = lo + s as f64 * h;
        acc += if s % 2 == 1 { 4.0 } else { 2.0 } * f(z);
    }
    (k as f64 * acc * h / 3.0).clamp(0.0, 1.0)
}

/// Upper quantile `q` with `P(Q <= q) = 1 - alpha`, by bisection.
pub fn studentized_range_quantile(alpha: f64, k: usize) -> f64 {
    let target = 1.0 - alpha;
    let (mut lo, mut hi) = (0.0_f64, 20.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if studentized_range_cdf(mid, k) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Spearman rank correlation (Pearson on midranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    pearson(&midranks(a), &midranks(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midranks_average_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn chi_squared_independent_table_is_zero() {
        let out = chi_squared_test(&[vec![10, 10], vec![10, 10]]);
        assert_eq!(out.statistic, 0.0);
        assert!((out.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chi_squared_known_value() {
        // (ad - bc)^2 n / (r1 r2 c1 c2) = (20*30-10*40)^2 * 100 / (30*70*60*40)
        let out = chi_squared_test(&[vec![20, 10], vec![40, 30]]);
        let expected = (20.0_f64 * 30.0 - 10.0 * 40.0).powi(2) * 100.0 / (30.0 * 70.0 * 60.0 * 40.0);
        assert!((out.statistic - expected).abs() < 1e-12);
        assert!((out.p_value - erfc((expected / 2.0).sqrt())).abs() < 1e-9);
    }

    #[test]
    fn rank_sum_identical_samples_give_unit_p() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let out = rank_sum_test(&a, &a);
        assert!(out.statistic.abs() < 1e-12);
        assert!((out.p_value - 1.0).abs() < 1e-12);
        let c = [5.0; 6];
        assert_eq!(rank_sum_test(&c, &c).p_value, 1.0);
    }

    #[test]
    fn rank_sum_small_case_by_hand() {
        // a = {1,2}, b = {3,4,5}: U1 = 0, mean 3, var = 2*3*6/12 = 3
        let out = rank_sum_test(&[1.0, 2.0], &[3.0, 4.0, 5.0]);
        assert!((out.statistic + 3.0 / 3.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn studentized_range_reference_quantiles() {
        // df = inf table values: k=2 -> 2.772, k=3 -> 3.314, k=5 -> 3.858
        assert!((studentized_range_quantile(0.05, 2) - 2.7718).abs() < 1e-3);
        assert!((studentized_range_quantile(0.05, 3) - 3.3145).abs() < 1e-3);
        assert!((studentized_range_quantile(0.05, 5) - 3.8582).abs() < 1e-3);
    }

    #[test]
    fn studentized_range_k2_is_scaled_normal() {
        // For k = 2, Q = |Z1 - Z2| so P(Q <= q) = 2 Φ(q / √2) - 1.
        for q in [0.5, 1.0, 2.0, 3.5] {
            let exact = 2.0 * normal_cdf(q / SQRT_2) - 1.0;
            assert!((studentized_range_cdf(q, 2) - exact).abs() < 1e-9);
        }
    }

    #[test]
    fn spearman_perfect_monotone() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [1.0, 8.0, 27.0, 64.0];
        assert!((spearman(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }
}
