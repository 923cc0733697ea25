//! Shapley attributions with an interventional value function: `v(S)` is
//! the mean model output when the features in `S` take the query's values
//! and the rest come from each background row in turn.
//!
//! `exact_shapley` enumerates all `2^d` coalitions. `kernel_shap` solves the
//! Shapley-kernel weighted regression over a coalition sample, with the
//! efficiency condition as an equality constraint; given every coalition it
//! reproduces the exact values.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::MeanSd;
use crate::matrix::{FeatureSchema, Matrix};
use crate::models::Predictor;
use crate::scalar::{total_cmp, Scalar};
use crate::seed;

pub const EXACT_MAX_FEATURES: usize = 15;
/// Coalitions are bit masks.
pub const KERNEL_MAX_FEATURES: usize = 63;
pub const DEFAULT_BACKGROUND_ROWS: usize = 100;
pub const DEFAULT_COALITIONS: usize = 512;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("{d} features exceeds the exact enumeration bound of {max}; use kernel_shap")]
    TooManyFeatures { d: usize, max: usize },
    #[error("kernel_shap supports at most {max} features, got {d}")]
    KernelTooWide { d: usize, max: usize },
    #[error("background set is empty")]
    EmptyBackground,
    #[error("nothing to explain")]
    EmptySample,
    #[error("model has no features")]
    NoFeatures,
    #[error("query has {got} features, background has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("{given} coalitions is below the minimum of d + 2 = {min}")]
    TooFewCoalitions { given: usize, min: usize },
    #[error("singular regression over {0} coalitions; increase n_coalitions")]
    Singular(usize),
    #[error("ranking must list each of the {0} features exactly once")]
    Ranking(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation<T> {
    /// `v(∅)`: mean output over the background.
    pub base_value: T,
    pub phi: Vec<T>,
    pub model_output: T,
    pub feature_values: Vec<T>,
}

impl<T: Scalar> ShapExplanation<T> {
    /// `|base + Σφ − f(x)|`.
    pub fn efficiency_gap(&self) -> T {
        (self.base_value + self.phi.iter().copied().sum::<T>() - self.model_output).abs()
    }

    /// Keyed by feature name. `raw_values` replaces the model-space query
    /// values, e.g. with unscaled cohort values; NaN becomes null.
    pub fn force_plot(&self, schema: &FeatureSchema, raw_values: Option<&[f64]>) -> ForcePlot {
        let values: Vec<f64> = match raw_values {
            Some(v) => v.to_vec(),
            None => self.feature_values.iter().map(|v| v.to_f64_lossy()).collect(),
        };
        ForcePlot {
            id: None,
            base_value: self.base_value.to_f64_lossy(),
            phi: schema.names.iter().cloned().zip(self.phi.iter().map(|p| p.to_f64_lossy())).collect(),
            model_output: self.model_output.to_f64_lossy(),
            feature_values: schema
                .names
                .iter()
                .cloned()
                .zip(values.into_iter().map(|v| v.is_finite().then_some(v)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcePlot {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub base_value: f64,
    pub phi: BTreeMap<String, f64>,
    pub model_output: f64,
    pub feature_values: BTreeMap<String, Option<f64>>,
}

fn check_inputs<T: Scalar>(query: &[T], background: &Matrix<T>) -> Result<usize, ExplainError> {
    if background.nrows() == 0 {
        return Err(ExplainError::EmptyBackground);
    }
    if query.len() != background.ncols() {
        return Err(ExplainError::Dimension {
            expected: background.ncols(),
            got: query.len(),
        });
    }
    if query.is_empty() {
        return Err(ExplainError::NoFeatures);
    }
    Ok(query.len())
}

/// One batch call per coalition. Returns `(v(S), f(x))`; the second is only
/// meaningful for the full coalition.
fn coalition_value<T: Scalar, P: Predictor<T> + ?Sized>(model: &P, query: &[T], background: &Matrix<T>, mask: u64) -> (T, T) {
    let mut z = background.clone();
    for r in 0..z.nrows() {
        let row = z.row_mut(r);
        for (j, v) in row.iter_mut().enumerate() {
            if mask >> j & 1 == 1 {
                *v = query[j];
            }
        }
    }
    let out = model.predict_proba_batch(&z);
    let n = T::from_count(out.len());
    (out.iter().copied().sum::<T>() / n, out[0])
}

fn full_mask(d: usize) -> u64 {
    if d == 64 {
        u64::MAX
    } else {
        (1u64 << d) - 1
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `s!(d−s−1)!/d!`, the weight of a coalition of size `s` in `φ_i`.
fn shapley_weight(d: usize, s: usize) -> f64 {
    1.0 / (d as f64 * binomial(d - 1, s))
}

pub fn exact_shapley<T: Scalar, P: Predictor<T> + ?Sized>(
    model: &P,
    query: &[T],
    background: &Matrix<T>,
) -> Result<ShapExplanation<T>, ExplainError> {
    let d = check_inputs(query, background)?;
    if d > EXACT_MAX_FEATURES {
        return Err(ExplainError::TooManyFeatures {
            d,
            max: EXACT_MAX_FEATURES,
        });
    }
    let full = full_mask(d);
    let values: Vec<(T, T)> = (0..=full)
        .into_par_iter()
        .map(|mask| coalition_value(model, query, background, mask))
        .collect();
    let weights: Vec<T> = (0..d).map(|s| T::lit(shapley_weight(d, s))).collect();
    let phi = (0..d)
        .map(|i| {
            let bit = 1u64 << i;
            (0..=full)
                .filter(|m| m & bit == 0)
                .map(|m| weights[m.count_ones() as usize] * (values[(m | bit) as usize].0 - values[m as usize].0))
                .sum()
        })
        .collect();
    Ok(ShapExplanation {
        base_value: values[0].0,
        phi,
        model_output: values[full as usize].1,
        feature_values: query.to_vec(),
    })
}

/// Coalitions (excluding ∅ and the full set) with regression weights.
/// Sizes are enumerated completely from the outside in while the budget
/// covers them; the remainder is sampled in complementary pairs.
fn kernel_coalitions(d: usize, budget: usize, seed: u64) -> Vec<(u64, f64)> {
    let full = full_mask(d);
    if d < 64 && (budget as u128) >= 1u128 << d {
        return (1..full)
            .map(|m| {
                let s = m.count_ones() as usize;
                (m, (d - 1) as f64 / (binomial(d, s) * (s * (d - s)) as f64))
            })
            .collect();
    }
    let mut left = budget - 2;
    let n_sizes = d / 2; // sizes 1..=n_sizes, each paired with d − s unless s = d − s
    let paired = |s: usize| s != d - s;
    let mut size_mass: Vec<f64> = (1..=n_sizes)
        .map(|s| {
            let k = (d - 1) as f64 / (s * (d - s)) as f64;
            if paired(s) {
                2.0 * k
            } else {
                k
            }
        })
        .collect();
    let total: f64 = size_mass.iter().sum();
    for m in &mut size_mass {
        *m /= total;
    }

    let mut out = Vec::new();
    let mut enumerated_mass = 0.0;
    let mut first_sampled = 0;
    for (si, &mass) in size_mass.iter().enumerate() {
        let s = si + 1;
        let count = binomial(d, s) * if paired(s) { 2.0 } else { 1.0 };
        let share = mass / (1.0 - enumerated_mass);
        if (left as f64) * share < count - 1e-8 {
            break;
        }
        let w = mass / count;
        for subset in index_subsets(d, s) {
            out.push((subset, w));
            if paired(s) {
                out.push((full ^ subset, w));
            }
        }
        left -= count as usize;
        enumerated_mass += mass;
        first_sampled = s;
    }
    if first_sampled == n_sizes || left == 0 {
        return out;
    }

    let rest = &size_mass[first_sampled..];
    let rest_total: f64 = rest.iter().sum();
    let mut rng = seed::rng(seed);
    let mut counts: HashMap<u64, usize> = HashMap::new();
    let mut order: Vec<u64> = Vec::new();
    let mut draws = 0usize;
    let max_draws = 100 * left.max(1);
    while counts.len() < left && draws < max_draws {
        let mut u = rng.random::<f64>() * rest_total;
        let mut si = rest.len() - 1;
        for (i, &m) in rest.iter().enumerate() {
            if u < m {
                si = i;
                break;
            }
            u -= m;
        }
        let s = first_sampled + si + 1;
        let mask = index::sample(&mut rng, d, s).iter().fold(0u64, |m, j| m | 1 << j);
        let mut add = |m: u64| {
            let c = counts.entry(m).or_insert(0);
            if *c == 0 {
                order.push(m);
            }
            *c += 1;
            draws += 1;
        };
        add(mask);
        if paired(s) {
            add(full ^ mask);
        }
    }
    let per_draw = (1.0 - enumerated_mass) / draws as f64;
    out.extend(order.into_iter().map(|m| (m, counts[&m] as f64 * per_draw)));
    out
}

/// All `s`-subsets of `0..d` as masks, in lexicographic order.
fn index_subsets(d: usize, s: usize) -> Vec<u64> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..s).collect();
    loop {
        out.push(idx.iter().fold(0u64, |m, &j| m | 1 << j));
        let mut i = s;
        while i > 0 && idx[i - 1] == d - s + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..s {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Gaussian elimination with partial pivoting; `None` when a pivot is
/// negligible relative to the largest diagonal entry.
fn solve<T: Scalar>(mut a: Vec<Vec<T>>, mut b: Vec<T>) -> Option<Vec<T>> {
    let n = b.len();
    let scale = (0..n).map(|i| a[i][i].abs()).fold(T::zero(), T::max);
    let eps = T::lit(1e-12) * scale.max(T::min_positive_value());
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| total_cmp(&a[i][col].abs(), &a[j][col].abs()))?;
        if a[p][col].abs() <= eps {
            return None;
        }
        a.swap(col, p);
        b.swap(col, p);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != T::zero() {
                for c in col..n {
                    let v = a[col][c];
                    a[r][c] -= f * v;
                }
                let v = b[col];
                b[r] -= f * v;
            }
        }
    }
    let mut x = vec![T::zero(); n];
    for r in (0..n).rev() {
        let s: T = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

pub fn kernel_shap<T: Scalar, P: Predictor<T> + ?Sized>(
    model: &P,
    query: &[T],
    background: &Matrix<T>,
    n_coalitions: usize,
    seed: u64,
) -> Result<ShapExplanation<T>, ExplainError> {
    let d = check_inputs(query, background)?;
    if d > KERNEL_MAX_FEATURES {
        return Err(ExplainError::KernelTooWide {
            d,
            max: KERNEL_MAX_FEATURES,
        });
    }
    if n_coalitions < d + 2 {
        return Err(ExplainError::TooFewCoalitions {
            given: n_coalitions,
            min: d + 2,
        });
    }
    let full = full_mask(d);
    let (base, _) = coalition_value(model, query, background, 0);
    let (v_full, output) = coalition_value(model, query, background, full);
    let delta = v_full - base;
    if d == 1 {
        return Ok(ShapExplanation {
            base_value: base,
            phi: vec![delta],
            model_output: output,
            feature_values: query.to_vec(),
        });
    }

    let coalitions = kernel_coalitions(d, n_coalitions, seed);
    let values: Vec<T> = coalitions
        .par_iter()
        .map(|&(m, _)| coalition_value(model, query, background, m).0)
        .collect();

    // φ_last = Δ − Σ_{i<last} φ_i; regress on the remaining d − 1.
    let last = d - 1;
    let mut a = vec![vec![T::zero(); last]; last];
    let mut b = vec![T::zero(); last];
    let mut z = vec![T::zero(); last];
    for (&(m, w), &v) in coalitions.iter().zip(&values) {
        let w = T::lit(w);
        let has_last = m >> last & 1 == 1;
        let shift = if has_last { T::one() } else { T::zero() };
        for (i, zi) in z.iter_mut().enumerate() {
            *zi = if m >> i & 1 == 1 { T::one() } else { T::zero() } - shift;
        }
        let target = v - base - shift * delta;
        for i in 0..last {
            if z[i] == T::zero() {
                continue;
            }
            let wz = w * z[i];
            b[i] += wz * target;
            for j in 0..last {
                a[i][j] += wz * z[j];
            }
        }
    }
    let mut phi = solve(a, b).ok_or(ExplainError::Singular(coalitions.len() + 2))?;
    let rest: T = phi.iter().copied().sum();
    phi.push(delta - rest);
    Ok(ShapExplanation {
        base_value: base,
        phi,
        model_output: output,
        feature_values: query.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ShapMethod {
    Exact,
    Kernel { n_coalitions: usize, seed: u64 },
}

impl ShapMethod {
    pub fn explain<T: Scalar, P: Predictor<T> + ?Sized>(
        &self,
        model: &P,
        query: &[T],
        background: &Matrix<T>,
    ) -> Result<ShapExplanation<T>, ExplainError> {
        match *self {
            ShapMethod::Exact => exact_shapley(model, query, background),
            ShapMethod::Kernel { n_coalitions, seed } => kernel_shap(model, query, background, n_coalitions, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapSummary<T> {
    pub base_value: T,
    pub mean_abs_phi: Vec<T>,
    /// Feature indices by descending mean |φ|, ties by index.
    pub ranking: Vec<usize>,
    /// `phi[row][feature]`, signed.
    pub phi: Vec<Vec<T>>,
}

/// Explains every sample row; kernel seeds are derived per row so the
/// result does not depend on scheduling.
pub fn shap_summary<T: Scalar, P: Predictor<T> + ?Sized>(
    model: &P,
    sample: &Matrix<T>,
    background: &Matrix<T>,
    method: ShapMethod,
) -> Result<ShapSummary<T>, ExplainError> {
    if sample.nrows() == 0 {
        return Err(ExplainError::EmptySample);
    }
    let explanations: Vec<ShapExplanation<T>> = (0..sample.nrows())
        .into_par_iter()
        .map(|r| {
            let m = match method {
                ShapMethod::Kernel { n_coalitions, seed } => ShapMethod::Kernel {
                    n_coalitions,
                    seed: seed::derive_seed(seed, &format!("row-{r}")),
                },
                m => m,
            };
            m.explain(model, sample.row(r), background)
        })
        .collect::<Result<_, _>>()?;
    let d = sample.ncols();
    let n = T::from_count(explanations.len());
    let mean_abs_phi: Vec<T> = (0..d)
        .map(|j| explanations.iter().map(|e| e.phi[j].abs()).sum::<T>() / n)
        .collect();
    let mut ranking: Vec<usize> = (0..d).collect();
    ranking.sort_by(|&a, &b| total_cmp(&mean_abs_phi[b], &mean_abs_phi[a]).then(a.cmp(&b)));
    Ok(ShapSummary {
        base_value: explanations[0].base_value,
        mean_abs_phi,
        ranking,
        phi: explanations.into_iter().map(|e| e.phi).collect(),
    })
}

/// Stratified row sample for a background set: `round(n·π)` positives,
/// drawn without replacement. Returns all rows when `n` covers them.
pub fn background_indices(y: &[bool], n: usize, seed: u64) -> Vec<usize> {
    if n >= y.len() {
        return (0..y.len()).collect();
    }
    let pos: Vec<usize> = (0..y.len()).filter(|&i| y[i]).collect();
    let neg: Vec<usize> = (0..y.len()).filter(|&i| !y[i]).collect();
    let n_pos = ((n as f64 * pos.len() as f64 / y.len() as f64).round() as usize).min(pos.len());
    let n_neg = (n - n_pos).min(neg.len());
    let mut rng = seed::rng(seed);
    let mut out: Vec<usize> = index::sample(&mut rng, pos.len(), n_pos).iter().map(|i| pos[i]).collect();
    out.extend(index::sample(&mut rng, neg.len(), n_neg).iter().map(|i| neg[i]));
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub n_features: usize,
    /// Kept feature indices, ascending.
    pub features: Vec<usize>,
    pub f1: MeanSd,
}

/// Scores the top-`m` features of `ranking` for `m = d..1`, dropping the
/// least important first. `evaluate` receives the kept indices in
/// ascending order, so `m = d` sees exactly the full feature set.
pub fn feature_ablation<E: From<ExplainError>>(
    ranking: &[usize],
    mut evaluate: impl FnMut(&[usize]) -> Result<MeanSd, E>,
) -> Result<Vec<AblationPoint>, E> {
    let d = ranking.len();
    let mut seen = vec![false; d];
    for &j in ranking {
        if j >= d || std::mem::replace(&mut seen[j], true) {
            return Err(ExplainError::Ranking(d).into());
        }
    }
    if d == 0 {
        return Err(ExplainError::Ranking(0).into());
    }
    (1..=d)
        .rev()
        .map(|m| {
            let mut keep = ranking[..m].to_vec();
            keep.sort_unstable();
            let f1 = evaluate(&keep)?;
            Ok(AblationPoint {
                n_features: m,
                features: keep,
                f1,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn linear(w: Vec<f64>, b: f64) -> impl Fn(&[f64]) -> f64 + Sync {
        move |x: &[f64]| x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b
    }

    #[test]
    fn linear_model_closed_form() {
        let bg = Matrix::from_rows(&[[1.0, -1.0], [-1.0, 1.0]]);
        let e = exact_shapley(&linear(vec![2.0, 0.0], 0.0), &[1.0, 5.0], &bg).unwrap();
        assert_eq!(e.phi, vec![2.0, 0.0]);
        assert_eq!(e.base_value, 0.0);
        assert_eq!(e.model_output, 2.0);
    }

    #[test]
    fn constant_model_has_no_attribution() {
        let bg = Matrix::from_rows(&[[0.3, 1.0, 2.0], [0.1, -1.0, 0.0]]);
        let f = |_: &[f64]| 0.5;
        let e = exact_shapley(&f, &[1.0, 2.0, 3.0], &bg).unwrap();
        assert_eq!(e.phi, vec![0.0; 3]);
        assert_eq!(e.base_value, 0.5);
        let k = kernel_shap(&f, &[1.0, 2.0, 3.0], &bg, 64, 1).unwrap();
        for p in k.phi {
            assert!(p.abs() < 1e-12);
        }
    }

    #[test]
    fn stumps_match_permutation_average() {
        // three depth-one trees, one per feature
        let f = |x: &[f64]| {
            let a = if x[0] <= 0.5 { -0.4 } else { 0.7 };
            let b = if x[1] <= 1.0 { 0.2 } else { -0.3 };
            let c = if x[2] <= -0.2 { 0.1 } else { 0.6 };
            crate::scalar::sigmoid(a + b + c)
        };
        let bg = Matrix::from_rows(&[[0.0, 0.0, 0.0], [1.0, 2.0, -1.0], [0.7, 0.4, 0.3], [0.2, 1.5, -0.5]]);
        let q = [0.9, 0.5, -0.6];
        let e = exact_shapley(&f, &q, &bg).unwrap();
        let v = |mask: [bool; 3]| {
            bg.rows_iter()
                .map(|r| {
                    let z: Vec<f64> = (0..3).map(|j| if mask[j] { q[j] } else { r[j] }).collect();
                    f(&z)
                })
                .sum::<f64>()
                / bg.nrows() as f64
        };
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        for i in 0..3 {
            let mut total = 0.0;
            for p in perms {
                let mut mask = [false; 3];
                for &j in &p {
                    if j == i {
                        break;
                    }
                    mask[j] = true;
                }
                let before = v(mask);
                mask[i] = true;
                total += v(mask) - before;
            }
            assert!((e.phi[i] - total / 6.0).abs() < 1e-12);
        }
    }

    struct Counting<F> {
        inner: F,
        batches: AtomicUsize,
        singles: AtomicUsize,
    }

    impl<F: Fn(&[f64]) -> f64 + Sync> Predictor<f64> for Counting<F> {
        fn predict_proba(&self, x: &[f64]) -> f64 {
            self.singles.fetch_add(1, Ordering::Relaxed);
            (self.inner)(x)
        }

        fn predict_proba_batch(&self, rows: &Matrix<f64>) -> Vec<f64> {
            self.batches.fetch_add(1, Ordering::Relaxed);
            rows.rows_iter().map(|r| (self.inner)(r)).collect()
        }
    }

    #[test]
    fn exact_cost_is_one_evaluation_per_coalition() {
        let m = Counting {
            inner: |x: &[f64]| x[0] * x[3] - x[1],
            batches: AtomicUsize::new(0),
            singles: AtomicUsize::new(0),
        };
        let bg = Matrix::from_rows(&[[0.0; 5], [1.0; 5]]);
        exact_shapley(&m, &[0.5, 1.0, 2.0, 3.0, 4.0], &bg).unwrap();
        assert_eq!(m.batches.load(Ordering::Relaxed), 32);
        assert_eq!(m.singles.load(Ordering::Relaxed), 0);
    }

    #[test]
    fn exact_rejects_wide_inputs() {
        let bg = Matrix::<f64>::zeros(1, 16);
        assert!(matches!(
            exact_shapley(&|_: &[f64]| 0.0, &[0.0; 16], &bg),
            Err(ExplainError::TooManyFeatures { d: 16, .. })
        ));
    }

    #[test]
    fn kernel_full_enumeration_matches_exact() {
        let f = |x: &[f64]| crate::scalar::sigmoid(x[0] * x[1] - 0.5 * x[2] + x[3].sin());
        let bg = Matrix::from_rows(&[[0.1, 0.2, 0.3, 0.4], [-1.0, 0.5, 2.0, 0.0], [0.7, -0.3, 0.2, 1.0]]);
        let q = [1.0, -2.0, 0.5, 0.3];
        let e = exact_shapley(&f, &q, &bg).unwrap();
        let k = kernel_shap(&f, &q, &bg, 16, 9).unwrap();
        for (a, b) in e.phi.iter().zip(&k.phi) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn kernel_symmetric_pair() {
        let f = |x: &[f64]| crate::scalar::sigmoid(x[0] + x[1] + 0.3 * x[2]);
        let bg = Matrix::from_rows(&[[0.0, 0.0, 0.0], [1.0, 1.0, -1.0]]);
        let k = kernel_shap(&f, &[2.0, 2.0, 1.0], &bg, 8, 3).unwrap();
        assert!((k.phi[0] - k.phi[1]).abs() < 1e-6);
        assert!(k.efficiency_gap() < 1e-12);
    }

    #[test]
    fn sampled_kernel_keeps_efficiency_and_is_seeded() {
        let f = |x: &[f64]| crate::scalar::sigmoid(x.iter().enumerate().map(|(j, v)| (j as f64 - 5.0) * v).sum::<f64>() / 10.0);
        let bg = Matrix::from_rows(&[[0.0; 12], [1.0; 12], [-0.5; 12]]);
        let q: Vec<f64> = (0..12).map(|j| (j as f64).cos()).collect();
        let a = kernel_shap(&f, &q, &bg, 200, 5).unwrap();
        let b = kernel_shap(&f, &q, &bg, 200, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.efficiency_gap() < 1e-12);
        assert!(matches!(kernel_shap(&f, &q, &bg, 13, 5), Err(ExplainError::TooFewCoalitions { .. })));
    }

    #[test]
    fn subsets_are_complete() {
        let s = index_subsets(5, 2);
        assert_eq!(s.len(), 10);
        assert!(s.iter().all(|m| m.count_ones() == 2));
        let mut u = s.clone();
        u.dedup();
        assert_eq!(u.len(), 10);
        assert_eq!(index_subsets(4, 4), vec![15]);
    }

    #[test]
    fn summary_ranks_informative_feature_first() {
        let f = |x: &[f64]| crate::scalar::sigmoid(5.0 * x[1]);
        let sample = Matrix::from_rows(&[[0.3, 1.0, 2.0], [0.1, 0.0, -1.0], [0.9, 1.0, 0.0]]);
        let s = shap_summary(&f, &sample, &sample, ShapMethod::Exact).unwrap();
        assert_eq!(s.ranking[0], 1);
        assert_eq!(s.mean_abs_phi[0], 0.0);
        assert_eq!(s.phi.len(), 3);
    }

    #[test]
    fn background_is_stratified() {
        let y: Vec<bool> = (0..400).map(|i| i % 4 == 0).collect();
        let idx = background_indices(&y, 100, 1);
        assert_eq!(idx.len(), 100);
        assert_eq!(idx.iter().filter(|&&i| y[i]).count(), 25);
        assert_eq!(idx, background_indices(&y, 100, 1));
    }

    #[test]
    fn ablation_walks_down_the_ranking() {
        let pts = feature_ablation::<ExplainError>(&[2, 0, 1], |keep| {
            Ok(MeanSd {
                mean: keep.len() as f64,
                sd: None,
                n: 1,
            })
        })
        .unwrap();
        let kept: Vec<Vec<usize>> = pts.iter().map(|p| p.features.clone()).collect();
        assert_eq!(kept, vec![vec![0, 1, 2], vec![0, 2], vec![2]]);
        assert!(feature_ablation::<ExplainError>(&[0, 0], |_| unreachable!()).is_err());
    }
}
