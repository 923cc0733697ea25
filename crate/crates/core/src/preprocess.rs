//! Training-fold transformations: Tukey outlier fences, imputation,
//! standardisation and random undersampling.
//!
//! Everything is fitted on the partition handed to `fit_*` and then frozen;
//! applying a fitted transformer never looks at the data it is applied to
//! beyond the cells being transformed.

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Cohort, Feature};
use crate::matrix::{Dataset, FeatureSchema, Matrix};
use crate::scalar::{percentile_sorted, total_cmp, Scalar};
use crate::seed;

pub const TUKEY_FENCE: f64 = 1.5;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("outlier bounds need at least 4 finite values, got {0}")]
    TooFewValues(usize),
    #[error("feature {0} has no observed values in the fitting data")]
    AllMissing(String),
    #[error("feature {0} is constant in the fitting data and cannot be scaled")]
    ConstantFeature(String),
    #[error("feature {0} has missing cells; scaling needs a complete matrix")]
    Incomplete(String),
    #[error("both classes are required, got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
    #[error("knn imputation needs at least one complete row in the fitting data")]
    NoCompleteRows,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds<T> {
    pub lower: T,
    pub upper: T,
}

impl<T: Scalar> Bounds<T> {
    pub fn contains(&self, v: T) -> bool {
        v >= self.lower && v <= self.upper
    }
}

/// Tukey fences with the standard 1.5 multiplier.
pub fn iqr_bounds<T: Scalar>(values: &[T]) -> Result<Bounds<T>, PreprocessError> {
    iqr_bounds_with(values, T::lit(TUKEY_FENCE))
}

/// `Q1 - m·IQR, Q3 + m·IQR` over the finite entries of `values`.
pub fn iqr_bounds_with<T: Scalar>(values: &[T], multiplier: T) -> Result<Bounds<T>, PreprocessError> {
    let mut v: Vec<T> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.len() < 4 {
        return Err(PreprocessError::TooFewValues(v.len()));
    }
    v.sort_by(total_cmp);
    let q1 = percentile_sorted(&v, T::lit(0.25));
    let q3 = percentile_sorted(&v, T::lit(0.75));
    let iqr = q3 - q1;
    Ok(Bounds {
        lower: q1 - multiplier * iqr,
        upper: q3 + multiplier * iqr,
    })
}

/// Per-column fences; `None` for binary columns, which are never fenced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierBounds<T> {
    pub features: Vec<String>,
    pub bounds: Vec<Option<Bounds<T>>>,
}

impl<T: Scalar> OutlierBounds<T> {
    pub fn fit(x: &Matrix<T>, schema: &FeatureSchema, multiplier: T) -> Result<Self, PreprocessError> {
        if x.ncols() != schema.len() {
            return Err(PreprocessError::Shape(format!("{} columns vs schema of {}", x.ncols(), schema.len())));
        }
        let bounds = (0..x.ncols())
            .map(|j| {
                if schema.binary[j] {
                    Ok(None)
                } else {
                    iqr_bounds_with(&x.observed_column(j), multiplier).map(Some)
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            features: schema.names.clone(),
            bounds,
        })
    }

    /// True when every observed fenced value lies inside its bounds.
    pub fn accepts(&self, row: &[T]) -> bool {
        row.iter().zip(&self.bounds).all(|(&v, b)| match b {
            Some(b) if !v.is_nan() => b.contains(v),
            _ => true,
        })
    }

    /// Row indices kept by the fences, in order.
    pub fn keep_rows(&self, x: &Matrix<T>) -> Vec<usize> {
        (0..x.nrows()).filter(|&i| self.accepts(x.row(i))).collect()
    }
}

/// Drops every record with a continuous value strictly outside its fence.
/// Returns the kept cohort and the number removed.
pub fn remove_outliers(cohort: &Cohort, bounds: &OutlierBounds<f64>) -> Result<(Cohort, usize), PreprocessError> {
    if bounds.bounds.len() != Feature::ALL.len() {
        return Err(PreprocessError::Shape(format!(
            "bounds cover {} features, cohort has {}",
            bounds.bounds.len(),
            Feature::ALL.len()
        )));
    }
    for (f, b) in Feature::ALL.iter().zip(&bounds.bounds) {
        if !f.is_binary() && b.is_none() {
            return Err(PreprocessError::Shape(format!("no bounds for {f}")));
        }
    }
    let keep = bounds.keep_rows(&cohort.to_dataset::<f64>().x);
    Ok((cohort.subset(&keep), cohort.len() - keep.len()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum ImputeStrategy {
    #[default]
    Median,
    Mean,
    Mode,
    Knn { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Imputer<T> {
    /// Per-column fill value (median, mean or mode).
    Fill { strategy: ImputeStrategy, values: Vec<T> },
    /// Mean of the k nearest complete reference rows.
    Knn { k: usize, reference: Matrix<T> },
}

pub fn fit_imputer<T: Scalar>(
    x: &Matrix<T>,
    schema: &FeatureSchema,
    strategy: ImputeStrategy,
) -> Result<Imputer<T>, PreprocessError> {
    let mut observed = Vec::with_capacity(x.ncols());
    for j in 0..x.ncols() {
        let col = x.observed_column(j);
        if col.is_empty() {
            return Err(PreprocessError::AllMissing(schema.names[j].clone()));
        }
        observed.push(col);
    }
    let fill = |f: fn(Vec<T>) -> T| Imputer::Fill {
        strategy,
        values: observed.iter().cloned().map(f).collect(),
    };
    Ok(match strategy {
        ImputeStrategy::Median => fill(|mut c| {
            c.sort_by(total_cmp);
            percentile_sorted(&c, T::half())
        }),
        ImputeStrategy::Mean => fill(|c| crate::scalar::mean(&c).expect("non-empty column")),
        ImputeStrategy::Mode => fill(mode),
        ImputeStrategy::Knn { k } => {
            if k == 0 {
                return Err(PreprocessError::Shape("knn imputation needs k >= 1".into()));
            }
            let complete: Vec<usize> = (0..x.nrows()).filter(|&i| x.row(i).iter().all(|v| !v.is_nan())).collect();
            if complete.is_empty() {
                return Err(PreprocessError::NoCompleteRows);
            }
            Imputer::Knn {
                k,
                reference: x.select_rows(&complete),
            }
        }
    })
}

/// Most frequent value; ties go to the smallest.
fn mode<T: Scalar>(mut c: Vec<T>) -> T {
    c.sort_by(total_cmp);
    let (mut best, mut best_n) = (c[0], 0);
    let mut i = 0;
    while i < c.len() {
        let mut j = i;
        while j < c.len() && c[j] == c[i] {
            j += 1;
        }
        if j - i > best_n {
            best = c[i];
            best_n = j - i;
        }
        i = j;
    }
    best
}

impl<T: Scalar> Imputer<T> {
    pub fn n_features(&self) -> usize {
        match self {
            Imputer::Fill { values, .. } => values.len(),
            Imputer::Knn { reference, .. } => reference.ncols(),
        }
    }

    /// Fills missing cells; observed cells are copied unchanged.
    pub fn apply(&self, x: &Matrix<T>) -> Result<Matrix<T>, PreprocessError> {
        if x.ncols() != self.n_features() {
            return Err(PreprocessError::Shape(format!(
                "imputer fitted on {} columns, got {}",
                self.n_features(),
                x.ncols()
            )));
        }
        let mut out = x.clone();
        for i in 0..out.nrows() {
            let row = out.row_mut(i);
            if !row.iter().any(|v| v.is_nan()) {
                continue;
            }
            match self {
                Imputer::Fill { values, .. } => {
                    for (v, &fill) in row.iter_mut().zip(values) {
                        if v.is_nan() {
                            *v = fill;
                        }
                    }
                }
                Imputer::Knn { k, reference } => {
                    let nn = knn_reference_rows(reference, row, *k);
                    let denom = T::from_count(nn.len());
                    for j in 0..row.len() {
                        if row[j].is_nan() {
                            row[j] = nn.iter().map(|&r| reference.get(r, j)).sum::<T>() / denom;
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Indices of the `k` reference rows closest to `query` over its observed
/// columns; equal distances keep the lower index.
fn knn_reference_rows<T: Scalar>(reference: &Matrix<T>, query: &[T], k: usize) -> Vec<usize> {
    let mut d: Vec<(T, usize)> = (0..reference.nrows())
        .map(|r| {
            let dist = query
                .iter()
                .zip(reference.row(r))
                .filter(|(q, _)| !q.is_nan())
                .map(|(&q, &v)| (q - v) * (q - v))
                .sum::<T>();
            (dist, r)
        })
        .collect();
    d.sort_by(|a, b| total_cmp(&a.0, &b.0).then(a.1.cmp(&b.1)));
    d.into_iter().take(k).map(|(_, r)| r).collect()
}

pub fn apply_imputer<T: Scalar>(imputer: &Imputer<T>, x: &Matrix<T>) -> Result<Matrix<T>, PreprocessError> {
    imputer.apply(x)
}

/// Standardisation with population statistics. Binary columns carry
/// mean 0 and scale 1, so they pass through untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

pub fn fit_scaler<T: Scalar>(x: &Matrix<T>, schema: &FeatureSchema) -> Result<Scaler<T>, PreprocessError> {
    let n = T::from_count(x.nrows());
    let mut mean = vec![T::zero(); x.ncols()];
    let mut std = vec![T::one(); x.ncols()];
    for j in 0..x.ncols() {
        let col = x.column(j);
        if col.iter().any(|v| v.is_nan()) {
            return Err(PreprocessError::Incomplete(schema.names[j].clone()));
        }
        if schema.binary[j] {
            continue;
        }
        let m = col.iter().copied().sum::<T>() / n;
        let var = col.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / n;
        if !(var > T::zero()) {
            return Err(PreprocessError::ConstantFeature(schema.names[j].clone()));
        }
        mean[j] = m;
        std[j] = var.sqrt();
    }
    Ok(Scaler { mean, std })
}

impl<T: Scalar> Scaler<T> {
    pub fn apply(&self, x: &Matrix<T>) -> Result<Matrix<T>, PreprocessError> {
        if x.ncols() != self.mean.len() {
            return Err(PreprocessError::Shape(format!(
                "scaler fitted on {} columns, got {}",
                self.mean.len(),
                x.ncols()
            )));
        }
        let mut out = x.clone();
        for i in 0..out.nrows() {
            self.apply_row(out.row_mut(i));
        }
        Ok(out)
    }

    pub fn apply_row(&self, row: &mut [T]) {
        for ((v, &m), &s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }
}

pub fn apply_scaler<T: Scalar>(scaler: &Scaler<T>, x: &Matrix<T>) -> Result<Matrix<T>, PreprocessError> {
    scaler.apply(x)
}

/// Indices of a class-balanced subsample: the minority class whole, the
/// majority class sampled without replacement down to the same size.
/// Returned in ascending order.
pub fn undersample_indices(y: &[bool], seed: u64) -> Result<Vec<usize>, PreprocessError> {
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..y.len()).partition(|&i| y[i]);
    if pos.is_empty() || neg.is_empty() {
        return Err(PreprocessError::SingleClass {
            positives: pos.len(),
            negatives: neg.len(),
        });
    }
    let (minority, majority) = if pos.len() <= neg.len() { (pos, neg) } else { (neg, pos) };
    let mut rng = seed::rng(seed);
    let mut keep: Vec<usize> = index::sample(&mut rng, majority.len(), minority.len())
        .into_iter()
        .map(|i| majority[i])
        .chain(minority)
        .collect();
    keep.sort_unstable();
    Ok(keep)
}

pub fn random_undersample<T: Scalar>(
    x: &Matrix<T>,
    y: &[bool],
    seed: u64,
) -> Result<(Matrix<T>, Vec<bool>), PreprocessError> {
    if x.nrows() != y.len() {
        return Err(PreprocessError::Shape(format!("{} rows vs {} labels", x.nrows(), y.len())));
    }
    let keep = undersample_indices(y, seed)?;
    Ok((x.select_rows(&keep), keep.iter().map(|&i| y[i]).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub impute: ImputeStrategy,
    pub balance: bool,
    pub remove_outliers: bool,
    pub outlier_fence: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            impute: ImputeStrategy::Median,
            balance: true,
            remove_outliers: true,
            outlier_fence: TUKEY_FENCE,
        }
    }
}

/// Frozen preprocessing state of one training fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPreprocessor<T> {
    pub schema: FeatureSchema,
    pub outlier_bounds: Option<OutlierBounds<T>>,
    pub imputer: Imputer<T>,
    pub scaler: Scaler<T>,
}

impl<T: Scalar> FittedPreprocessor<T> {
    /// Imputes and scales rows for inference. Outlier fences are a training
    /// filter only and are not applied here.
    pub fn transform(&self, x: &Matrix<T>) -> Result<Matrix<T>, PreprocessError> {
        self.scaler.apply(&self.imputer.apply(x)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("preprocessor serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Output of fitting on a training partition.
#[derive(Debug, Clone)]
pub struct PreparedTrain<T> {
    pub preprocessor: FittedPreprocessor<T>,
    /// Transformed training rows after outlier removal and balancing.
    pub data: Dataset<T>,
    /// Positions in the input partition of the rows in `data`.
    pub rows: Vec<usize>,
    pub outliers_removed: usize,
}

/// Outlier removal, undersampling, imputation and scaling, in that order,
/// all fitted on `train` alone.
pub fn fit_preprocessor<T: Scalar>(
    train: &Dataset<T>,
    config: &PreprocessConfig,
    seed: u64,
) -> Result<PreparedTrain<T>, PreprocessError> {
    let (bounds, mut rows) = if config.remove_outliers {
        let b = OutlierBounds::fit(&train.x, &train.schema, T::lit(config.outlier_fence))?;
        let keep = b.keep_rows(&train.x);
        (Some(b), keep)
    } else {
        (None, (0..train.len()).collect())
    };
    let outliers_removed = train.len() - rows.len();

    if config.balance {
        let y: Vec<bool> = rows.iter().map(|&i| train.y[i]).collect();
        rows = undersample_indices(&y, seed)?.into_iter().map(|i| rows[i]).collect();
    }
    let subset = train.select_rows(&rows);
    let imputer = fit_imputer(&subset.x, &subset.schema, config.impute)?;
    let imputed = imputer.apply(&subset.x)?;
    let scaler = fit_scaler(&imputed, &subset.schema)?;
    let x = scaler.apply(&imputed)?;
    Ok(PreparedTrain {
        preprocessor: FittedPreprocessor {
            schema: train.schema.clone(),
            outlier_bounds: bounds,
            imputer,
            scaler,
        },
        data: Dataset::new(x, subset.y, subset.schema),
        rows,
        outliers_removed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::test_support::record;
    use crate::cohort::{Label, Provenance};

    const NAN: f64 = f64::NAN;

    #[test]
    fn quartile_fences() {
        // Q1 = 2, Q3 = 4 under linear interpolation.
        let b = iqr_bounds(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!((b.lower, b.upper), (-1.0, 7.0));
        let c = iqr_bounds(&[5.0, 5.0, 5.0, 5.0]).unwrap();
        assert_eq!((c.lower, c.upper), (5.0, 5.0));
        assert!(matches!(iqr_bounds(&[1.0, 2.0, NAN, 3.0]), Err(PreprocessError::TooFewValues(3))));
    }

    #[test]
    fn outlier_record_is_dropped() {
        let mut rs: Vec<_> = (0..10)
            .map(|i| record(&format!("r{i}"), if i % 2 == 0 { Label::Lc } else { Label::NonLc }, 60 + i, 10.0 + i as f64))
            .collect();
        let c = Cohort::new(rs.clone(), Provenance::Ingested, None).unwrap();
        let ds = c.to_dataset::<f64>();
        let bounds = OutlierBounds::fit(&ds.x, &ds.schema, TUKEY_FENCE).unwrap();
        assert_eq!(remove_outliers(&c, &bounds).unwrap().1, 0);

        let sodium = Feature::Sodium.lab_index().unwrap();
        let upper = bounds.bounds[Feature::Sodium.index()].unwrap().upper;
        rs[3].labs[sodium] = Some(upper + 1.0);
        let c2 = Cohort::new(rs, Provenance::Ingested, None).unwrap();
        let (kept, removed) = remove_outliers(&c2, &bounds).unwrap();
        assert_eq!(removed, 1);
        assert!(kept.position("r3").is_none());
    }

    #[test]
    fn median_and_knn_imputation() {
        let x = Matrix::from_rows(&[[1.0], [2.0], [NAN], [3.0]]);
        let s = FeatureSchema::continuous(1);
        let imp = fit_imputer(&x, &s, ImputeStrategy::Median).unwrap();
        assert_eq!(imp.apply(&x).unwrap().column(0), vec![1.0, 2.0, 2.0, 3.0]);

        let x = Matrix::from_rows(&[[0.0, 0.0], [10.0, 10.0], [0.0, NAN]]);
        let imp = fit_imputer(&x, &FeatureSchema::continuous(2), ImputeStrategy::Knn { k: 1 }).unwrap();
        assert_eq!(imp.apply(&x).unwrap().get(2, 1), 0.0);
    }

    #[test]
    fn mode_prefers_smallest_on_ties() {
        let x = Matrix::from_rows(&[[3.0], [1.0], [3.0], [1.0], [NAN]]);
        let imp = fit_imputer(&x, &FeatureSchema::continuous(1), ImputeStrategy::Mode).unwrap();
        assert_eq!(imp.apply(&x).unwrap().get(4, 0), 1.0);
    }

    #[test]
    fn complete_matrix_is_untouched() {
        let x = Matrix::from_rows(&[[1.0, 5.0], [2.0, 6.0]]);
        for s in [ImputeStrategy::Mean, ImputeStrategy::Knn { k: 2 }] {
            let imp = fit_imputer(&x, &FeatureSchema::continuous(2), s).unwrap();
            assert_eq!(imp.apply(&x).unwrap(), x);
        }
    }

    #[test]
    fn all_missing_column_is_rejected() {
        let x = Matrix::from_rows(&[[1.0, NAN], [2.0, NAN]]);
        let s = FeatureSchema::new(vec!["a".into(), "b".into()], vec![false, false]);
        match fit_imputer(&x, &s, ImputeStrategy::Median) {
            Err(PreprocessError::AllMissing(f)) => assert_eq!(f, "b"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn scaler_uses_population_sd() {
        let x = Matrix::from_rows(&[[0.0], [2.0]]);
        let sc = fit_scaler(&x, &FeatureSchema::continuous(1)).unwrap();
        assert_eq!(sc.apply(&x).unwrap().column(0), vec![-1.0, 1.0]);
        let shifted = Matrix::from_rows(&[[4.0], [6.0]]);
        assert_eq!(sc.apply(&shifted).unwrap().column(0), vec![3.0, 5.0]);
    }

    #[test]
    fn scaler_names_constant_feature_and_skips_binary() {
        let s = FeatureSchema::new(vec!["age".into(), "sex".into(), "crp".into()], vec![false, true, false]);
        let x = Matrix::from_rows(&[[50.0, 1.0, 3.0], [60.0, 0.0, 3.0]]);
        match fit_scaler(&x, &s) {
            Err(PreprocessError::ConstantFeature(f)) => assert_eq!(f, "crp"),
            other => panic!("{other:?}"),
        }
        let x = Matrix::from_rows(&[[50.0, 1.0, 3.0], [60.0, 0.0, 4.0]]);
        let out = fit_scaler(&x, &s).unwrap().apply(&x).unwrap();
        assert_eq!(out.column(1), vec![1.0, 0.0]);
    }

    #[test]
    fn undersampling_balances_and_keeps_minority() {
        let y: Vec<bool> = (0..100).map(|i| i % 4 == 0).collect();
        let keep = undersample_indices(&y, 3).unwrap();
        assert_eq!(keep.len(), 50);
        assert_eq!(keep.iter().filter(|&&i| y[i]).count(), 25);
        assert!((0..100).filter(|&i| y[i]).all(|i| keep.contains(&i)));
        assert_eq!(keep, undersample_indices(&y, 3).unwrap());

        let balanced: Vec<bool> = (0..20).map(|i| i < 10).collect();
        assert_eq!(undersample_indices(&balanced, 9).unwrap(), (0..20).collect::<Vec<_>>());
        assert!(undersample_indices(&[true, true], 1).is_err());
    }

    #[test]
    fn fitted_preprocessor_round_trips_json() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [2.0, 1.0], [NAN, 1.0], [4.0, 0.0], [3.0, 1.0], [2.5, 0.0]]);
        let schema = FeatureSchema::new(vec!["a".into(), "b".into()], vec![false, true]);
        let ds = Dataset::new(x, vec![true, false, true, false, true, false], schema);
        let p = fit_preprocessor(&ds, &PreprocessConfig::default(), 1).unwrap();
        let back = FittedPreprocessor::<f64>::from_json(&p.preprocessor.to_json()).unwrap();
        assert_eq!(back, p.preprocessor);
        assert_eq!(back.to_json(), p.preprocessor.to_json());
    }
}
