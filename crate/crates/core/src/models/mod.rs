//! The four base learners behind one probability interface.

mod gbdt;
mod logistic;
mod optim;
mod svm;
mod tune;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Dataset;
use crate::scalar::{sigmoid, Scalar};

pub use gbdt::{train_gbdt, train_gbdt_traced, GbdtParams, Growth, Node, Tree};
pub use logistic::{logistic_objective, train_logistic, LogisticParams};
pub use optim::{lbfgs, LbfgsOptions, LbfgsOutcome};
pub use svm::{fit_platt, train_linear_svm, Platt, SvmParams};
pub use tune::{tune, HyperparameterSpace, ParamRange, TuneBudget, TuneResult};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("optimizer did not converge within {iterations} iterations (gradient norm {grad_norm:e})")]
    NotConverged { iterations: usize, grad_norm: f64 },
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("training data has missing or non-finite cells")]
    NonFinite,
    #[error("invalid hyperparameter: {0}")]
    InvalidParam(String),
    #[error("empty training set")]
    Empty,
    #[error("empty hyperparameter search space")]
    EmptySpace,
    #[error("model artifact: {0}")]
    Artifact(String),
}

/// Anything mapping a feature row to a positive-class probability.
pub trait Predictor<T: Scalar>: Sync {
    fn predict_proba(&self, x: &[T]) -> T;

    fn predict_proba_batch(&self, rows: &crate::matrix::Matrix<T>) -> Vec<T> {
        rows.rows_iter().map(|r| self.predict_proba(r)).collect()
    }
}

impl<T: Scalar, F: Fn(&[T]) -> T + Sync> Predictor<T> for F {
    fn predict_proba(&self, x: &[T]) -> T {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Leaf-wise boosted trees (LightGBM-style).
    GbdtLeafwise,
    /// Depth-wise boosted trees (XGBoost-style).
    GbdtDepthwise,
    Logistic,
    LinearSvm,
}

impl ModelKind {
    /// Pool order used by the ensemble and in every report.
    pub const ALL: [ModelKind; 4] = [
        ModelKind::GbdtLeafwise,
        ModelKind::GbdtDepthwise,
        ModelKind::Logistic,
        ModelKind::LinearSvm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::GbdtLeafwise => "gbdt_leafwise",
            ModelKind::GbdtDepthwise => "gbdt_depthwise",
            ModelKind::Logistic => "logistic",
            ModelKind::LinearSvm => "linear_svm",
        }
    }

    /// Short display label used in tables.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::GbdtLeafwise => "LGBM",
            ModelKind::GbdtDepthwise => "XGBoost",
            ModelKind::Logistic => "LR",
            ModelKind::LinearSvm => "SVM",
        }
    }

    pub fn default_params(self) -> HyperParams {
        match self {
            ModelKind::GbdtLeafwise => HyperParams::GbdtLeafwise(GbdtParams::leafwise_default()),
            ModelKind::GbdtDepthwise => HyperParams::GbdtDepthwise(GbdtParams::depthwise_default()),
            ModelKind::Logistic => HyperParams::Logistic(LogisticParams::default()),
            ModelKind::LinearSvm => HyperParams::LinearSvm(SvmParams::default()),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gbdt_leafwise" | "lgbm" | "lightgbm" => Ok(ModelKind::GbdtLeafwise),
            "gbdt_depthwise" | "xgboost" | "xgb" => Ok(ModelKind::GbdtDepthwise),
            "logistic" | "lr" => Ok(ModelKind::Logistic),
            "linear_svm" | "svm" => Ok(ModelKind::LinearSvm),
            other => Err(format!("unknown model kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HyperParams {
    GbdtLeafwise(GbdtParams),
    GbdtDepthwise(GbdtParams),
    Logistic(LogisticParams),
    LinearSvm(SvmParams),
}

impl HyperParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            HyperParams::GbdtLeafwise(_) => ModelKind::GbdtLeafwise,
            HyperParams::GbdtDepthwise(_) => ModelKind::GbdtDepthwise,
            HyperParams::Logistic(_) => ModelKind::Logistic,
            HyperParams::LinearSvm(_) => ModelKind::LinearSvm,
        }
    }

    /// Sets a named numeric hyperparameter.
    pub fn set(&mut self, name: &str, value: f64) -> Result<(), ModelError> {
        match self {
            HyperParams::GbdtLeafwise(p) | HyperParams::GbdtDepthwise(p) => p.set(name, value),
            HyperParams::Logistic(p) => p.set(name, value),
            HyperParams::LinearSvm(p) => p.set(name, value),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            HyperParams::GbdtLeafwise(p) | HyperParams::GbdtDepthwise(p) => p.validate(),
            HyperParams::Logistic(p) => p.validate(),
            HyperParams::LinearSvm(p) => p.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Parameters<T> {
    Linear { weights: Vec<T>, bias: T },
    Trees { base_score: T, learning_rate: T, trees: Vec<Tree<T>> },
}

/// A trained base learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel<T> {
    pub format_version: u32,
    pub hyperparameters: HyperParams,
    pub n_features: usize,
    pub parameters: Parameters<T>,
    pub platt: Option<Platt<T>>,
    pub seed: u64,
}

impl<T: Scalar> ClassifierModel<T> {
    pub fn kind(&self) -> ModelKind {
        self.hyperparameters.kind()
    }

    /// Raw score: `w·x + b` for linear kinds, boosted margin for trees.
    pub fn decision_function(&self, x: &[T]) -> T {
        match &self.parameters {
            Parameters::Linear { weights, bias } => {
                weights.iter().zip(x).map(|(&w, &v)| w * v).sum::<T>() + *bias
            }
            Parameters::Trees {
                base_score,
                learning_rate,
                trees,
            } => *base_score + *learning_rate * trees.iter().map(|t| t.predict(x)).sum::<T>(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let m: Self = serde_json::from_str(text).map_err(|e| ModelError::Artifact(e.to_string()))?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Artifact(format!(
                "unsupported format version {} (expected {MODEL_FORMAT_VERSION})",
                m.format_version
            )));
        }
        Ok(m)
    }
}

impl<T: Scalar> Predictor<T> for ClassifierModel<T> {
    fn predict_proba(&self, x: &[T]) -> T {
        let s = self.decision_function(x);
        match &self.platt {
            Some(p) => p.probability(s),
            None => sigmoid(s),
        }
    }
}

/// Trains the learner named by `params`.
pub fn train<T: Scalar>(params: &HyperParams, data: &Dataset<T>, seed: u64) -> Result<ClassifierModel<T>, ModelError> {
    match params {
        HyperParams::Logistic(p) => train_logistic(&data.x, &data.y, p),
        HyperParams::LinearSvm(p) => train_linear_svm(&data.x, &data.y, p, seed),
        HyperParams::GbdtDepthwise(p) => train_gbdt(&data.x, &data.y, p, Growth::Depthwise),
        HyperParams::GbdtLeafwise(p) => train_gbdt(&data.x, &data.y, p, Growth::Leafwise),
    }
    .map(|mut m| {
        m.seed = seed;
        m
    })
}

pub(crate) fn check_training_data<T: Scalar>(
    x: &crate::matrix::Matrix<T>,
    y: &[bool],
    need_both: bool,
) -> Result<(), ModelError> {
    if x.nrows() != y.len() {
        return Err(ModelError::InvalidParam(format!("{} rows vs {} labels", x.nrows(), y.len())));
    }
    if y.is_empty() {
        return Err(ModelError::Empty);
    }
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite);
    }
    if need_both && (y.iter().all(|&v| v) || y.iter().all(|&v| !v)) {
        return Err(ModelError::SingleClass);
    }
    Ok(())
}
