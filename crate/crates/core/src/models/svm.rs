//! Linear SVM with hinge loss, solved in the dual by coordinate descent,
//! plus Platt scaling of its scores.
//!
//! The primal is `½‖w‖² + ½b² + C·Σ max(0, 1 − yᵢ(w·xᵢ + b))`: the bias is
//! handled as the weight of a constant feature, which keeps the dual free of
//! an equality constraint.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_training_data, ClassifierModel, HyperParams, ModelError, Parameters, MODEL_FORMAT_VERSION};
use crate::matrix::Matrix;
use crate::scalar::{sigmoid, softplus, Scalar};
use crate::seed;

pub const PLATT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmParams {
    pub c: f64,
    /// Passes over the data.
    pub max_iter: usize,
    /// Stop when the largest projected-gradient violation in a pass is below this.
    pub tol: f64,
    /// Fit a Platt calibrator on out-of-fold scores.
    pub calibrate: bool,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 49.1,
            max_iter: 2000,
            tol: 1e-4,
            calibrate: true,
        }
    }
}

impl SvmParams {
    pub(crate) fn set(&mut self, name: &str, value: f64) -> Result<(), ModelError> {
        match name {
            "c" | "C" => self.c = value,
            "max_iter" => self.max_iter = value as usize,
            "tol" => self.tol = value,
            _ => return Err(ModelError::InvalidParam(format!("linear_svm has no parameter {name}"))),
        }
        Ok(())
    }

    pub(crate) fn validate(&self) -> Result<(), ModelError> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(ModelError::InvalidParam(format!("C must be positive, got {}", self.c)));
        }
        Ok(())
    }
}

/// `p = sigmoid(a·score + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Platt<T> {
    pub a: T,
    pub b: T,
}

impl<T: Scalar> Platt<T> {
    pub fn probability(&self, score: T) -> T {
        sigmoid(self.a * score + self.b)
    }
}

/// Dual coordinate descent; returns `(w, b)`.
fn solve_dual<T: Scalar>(x: &Matrix<T>, y: &[bool], params: &SvmParams, seed: u64) -> (Vec<T>, T) {
    let (n, d) = (x.nrows(), x.ncols());
    let c = T::lit(params.c);
    let tol = T::lit(params.tol);
    let sign: Vec<T> = y.iter().map(|&v| if v { T::one() } else { -T::one() }).collect();
    let qdiag: Vec<T> = x.rows_iter().map(|r| r.iter().map(|&v| v * v).sum::<T>() + T::one()).collect();
    let mut alpha = vec![T::zero(); n];
    let mut w = vec![T::zero(); d];
    let mut b = T::zero();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(seed);

    for _ in 0..params.max_iter {
        order.shuffle(&mut rng);
        let mut max_violation = T::zero();
        for &i in &order {
            let row = x.row(i);
            let margin = row.iter().zip(&w).map(|(&a, &wj)| a * wj).sum::<T>() + b;
            let g = sign[i] * margin - T::one();
            let pg = if alpha[i] <= T::zero() {
                g.min(T::zero())
            } else if alpha[i] >= c {
                g.max(T::zero())
            } else {
                g
            };
            max_violation = max_violation.max(pg.abs());
            if pg.abs() > T::zero() {
                let old = alpha[i];
                alpha[i] = (old - g / qdiag[i]).max(T::zero()).min(c);
                let delta = (alpha[i] - old) * sign[i];
                if delta != T::zero() {
                    for (wj, &a) in w.iter_mut().zip(row) {
                        *wj += delta * a;
                    }
                    b += delta;
                }
            }
        }
        if max_violation <= tol {
            break;
        }
    }
    (w, b)
}

pub fn train_linear_svm<T: Scalar>(
    x: &Matrix<T>,
    y: &[bool],
    params: &SvmParams,
    seed: u64,
) -> Result<ClassifierModel<T>, ModelError> {
    params.validate()?;
    check_training_data(x, y, true)?;
    let (w, b) = solve_dual(x, y, params, seed);

    let platt = if params.calibrate {
        let scores = out_of_fold_scores(x, y, params, seed)?;
        Some(fit_platt(&scores, y))
    } else {
        None
    };
    Ok(ClassifierModel {
        format_version: MODEL_FORMAT_VERSION,
        hyperparameters: HyperParams::LinearSvm(params.clone()),
        n_features: x.ncols(),
        parameters: Parameters::Linear { weights: w, bias: b },
        platt,
        seed,
    })
}

/// Scores from models that never saw the scored row. Falls back to
/// in-sample scores when a class is too small to split.
fn out_of_fold_scores<T: Scalar>(x: &Matrix<T>, y: &[bool], params: &SvmParams, seed: u64) -> Result<Vec<T>, ModelError> {
    let minority = y.iter().filter(|&&v| v).count().min(y.iter().filter(|&&v| !v).count());
    let k = PLATT_FOLDS.min(minority);
    let score = |w: &[T], b: T, row: &[T]| row.iter().zip(w).map(|(&a, &wj)| a * wj).sum::<T>() + b;
    if k < 2 {
        let (w, b) = solve_dual(x, y, params, seed);
        return Ok(x.rows_iter().map(|r| score(&w, b, r)).collect());
    }
    let folds = crate::eval::stratified_folds(y, k, seed::derive_seed(seed, "platt-folds"))
        .map_err(|e| ModelError::InvalidParam(e.to_string()))?;
    let mut scores = vec![T::zero(); y.len()];
    for (f, val) in folds.iter().enumerate() {
        let mut in_val = vec![false; y.len()];
        for &i in val {
            in_val[i] = true;
        }
        let train: Vec<usize> = (0..y.len()).filter(|&i| !in_val[i]).collect();
        let ty: Vec<bool> = train.iter().map(|&i| y[i]).collect();
        let (w, b) = solve_dual(&x.select_rows(&train), &ty, params, seed.wrapping_add(f as u64 + 1));
        for &i in val {
            scores[i] = score(&w, b, x.row(i));
        }
    }
    Ok(scores)
}

/// Platt's sigmoid fit with smoothed targets, by Newton's method with
/// backtracking.
pub fn fit_platt<T: Scalar>(scores: &[T], y: &[bool]) -> Platt<T> {
    let n_pos = y.iter().filter(|&&v| v).count();
    let n_neg = y.len() - n_pos;
    let t_pos = T::from_count(n_pos + 1) / T::from_count(n_pos + 2);
    let t_neg = T::one() / T::from_count(n_neg + 2);
    let target: Vec<T> = y.iter().map(|&v| if v { t_pos } else { t_neg }).collect();

    let objective = |a: T, b: T| -> T {
        scores
            .iter()
            .zip(&target)
            .map(|(&s, &t)| {
                let z = a * s + b;
                softplus(z) - t * z
            })
            .sum()
    };
    let (mut a, mut b) = (T::zero(), ((T::from_count(n_pos) + T::one()) / (T::from_count(n_neg) + T::one())).ln());
    let mut f = objective(a, b);
    let sigma = T::lit(1e-12);
    for _ in 0..100 {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (T::zero(), T::zero(), sigma, T::zero(), sigma);
        for (&s, &t) in scores.iter().zip(&target) {
            let p = sigmoid(a * s + b);
            let r = p - t;
            let w = p * (T::one() - p);
            ga += r * s;
            gb += r;
            haa += w * s * s;
            hab += w * s;
            hbb += w;
        }
        if ga.abs() < T::lit(1e-10) && gb.abs() < T::lit(1e-10) {
            break;
        }
        let det = haa * hbb - hab * hab;
        let da = -(hbb * ga - hab * gb) / det;
        let db = -(-hab * ga + haa * gb) / det;
        let slope = ga * da + gb * db;
        let mut step = T::one();
        let mut moved = false;
        while step >= T::lit(1e-10) {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf <= f + T::lit(1e-4) * step * slope {
                a = na;
                b = nb;
                f = nf;
                moved = true;
                break;
            }
            step *= T::half();
        }
        if !moved {
            break;
        }
    }
    Platt { a, b }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Predictor;

    #[test]
    fn separable_points_are_fit_exactly() {
        let x = Matrix::from_rows(&[[-2.0, 0.5], [-1.0, -0.5], [-1.5, 1.0], [1.0, 0.2], [2.0, -1.0], [1.5, 0.8]]);
        let y = [false, false, false, true, true, true];
        let m = train_linear_svm(&x, &y, &SvmParams::default(), 3).unwrap();
        for (r, &t) in x.rows_iter().zip(&y) {
            assert_eq!(m.decision_function(r) > 0.0, t);
            assert_eq!(m.predict_proba(r) > 0.5, t);
        }
    }

    #[test]
    fn symmetric_scores_calibrate_to_half_at_zero() {
        let scores: [f64; 8] = [-2.0, -1.0, -0.5, 0.3, 0.5, 1.0, 2.0, -0.3];
        let y = [false, false, false, false, true, true, true, true];
        let p = fit_platt(&scores, &y);
        assert!(p.b.abs() < 1e-9, "b = {}", p.b);
        assert!((p.probability(0.0) - 0.5).abs() < 1e-9);
        assert!(p.a > 0.0);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = Matrix::from_rows(&[[1.0], [2.0]]);
        assert!(matches!(
            train_linear_svm(&x, &[true, true], &SvmParams::default(), 0),
            Err(ModelError::SingleClass)
        ));
    }
}
