//! L2-regularised logistic regression.
//!
//! `C` has the usual inverse-regularisation meaning: the minimised objective
//! is `½‖w‖² + C·Σ logloss`. The optimiser works on that objective divided
//! by `C·n`, which has the same minimiser and better-scaled gradients; the
//! intercept is not penalised.

use serde::{Deserialize, Serialize};

use super::optim::{lbfgs, LbfgsOptions};
use super::{check_training_data, ClassifierModel, HyperParams, ModelError, Parameters, MODEL_FORMAT_VERSION};
use crate::matrix::Matrix;
use crate::scalar::{sigmoid, softplus, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticParams {
    pub c: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            c: 0.3,
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

impl LogisticParams {
    pub(crate) fn set(&mut self, name: &str, value: f64) -> Result<(), ModelError> {
        match name {
            "c" | "C" => self.c = value,
            "max_iter" => self.max_iter = value as usize,
            "tol" => self.tol = value,
            _ => return Err(ModelError::InvalidParam(format!("logistic has no parameter {name}"))),
        }
        Ok(())
    }

    pub(crate) fn validate(&self) -> Result<(), ModelError> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(ModelError::InvalidParam(format!("C must be positive, got {}", self.c)));
        }
        if !(self.tol > 0.0) {
            return Err(ModelError::InvalidParam(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Scaled objective `(1/n)·Σ logloss + ‖w‖²/(2Cn)` and its gradient at
/// `theta = [w_1, …, w_d, b]`.
pub fn logistic_objective<T: Scalar>(x: &Matrix<T>, y: &[bool], c: T, theta: &[T]) -> (T, Vec<T>) {
    let d = x.ncols();
    let n = T::from_count(x.nrows());
    let (w, b) = (&theta[..d], theta[d]);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); d + 1];
    for (row, &yi) in x.rows_iter().zip(y) {
        let z = row.iter().zip(w).map(|(&a, &wj)| a * wj).sum::<T>() + b;
        let t = if yi { T::one() } else { T::zero() };
        loss += softplus(z) - t * z;
        let r = sigmoid(z) - t;
        for (gj, &a) in grad[..d].iter_mut().zip(row) {
            *gj += r * a;
        }
        grad[d] += r;
    }
    let reg = T::one() / (c * n);
    let wsq: T = w.iter().map(|&v| v * v).sum();
    let value = loss / n + reg * wsq * T::half();
    for (gj, &wj) in grad[..d].iter_mut().zip(w) {
        *gj = *gj / n + reg * wj;
    }
    grad[d] /= n;
    (value, grad)
}

pub fn train_logistic<T: Scalar>(x: &Matrix<T>, y: &[bool], params: &LogisticParams) -> Result<ClassifierModel<T>, ModelError> {
    params.validate()?;
    check_training_data(x, y, false)?;
    let c = T::lit(params.c);
    let out = lbfgs(
        |theta: &[T]| logistic_objective(x, y, c, theta),
        vec![T::zero(); x.ncols() + 1],
        LbfgsOptions {
            max_iter: params.max_iter,
            tol: params.tol,
            ..Default::default()
        },
    );
    if !out.converged {
        return Err(ModelError::NotConverged {
            iterations: out.iterations,
            grad_norm: out.grad_norm.to_f64_lossy(),
        });
    }
    let d = x.ncols();
    Ok(ClassifierModel {
        format_version: MODEL_FORMAT_VERSION,
        hyperparameters: HyperParams::Logistic(params.clone()),
        n_features: d,
        parameters: Parameters::Linear {
            weights: out.x[..d].to_vec(),
            bias: out.x[d],
        },
        platt: None,
        seed: 0,
    })
}
