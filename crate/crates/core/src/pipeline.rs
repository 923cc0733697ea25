//! End-to-end orchestration: cohort, holdout split, stratified folds, and
//! per fold the preprocessing, base models and dynamic ensemble; then the
//! evaluation report and explanations.
//!
//! Every stochastic stage draws its seed from the root seed and a stage
//! label, so adding a stage never shifts the randomness of another.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{load_cohort, stratified_holdout, Cohort, CohortError, CohortSpec, Stage};
use crate::des::{build_des, DesConfig, DesEnsemble, DesError, DesMethod, DEFAULT_K, DEFAULT_MCB_SIMILARITY};
use crate::eval::{
    calibration_bins, confusion, decision_curve, friedman_nemenyi, metrics, reader_comparison, roc_auc, roc_curve,
    stratified_kfold, threshold_at_specificity, CalibrationBin, ConfusionCounts, DecisionCurve, EvalError, MeanSd,
    MetricSet, OperatingPoint, RankTestResult, ReaderComparison, RocPoint, Votes,
};
use crate::explain::{
    background_indices, feature_ablation, kernel_shap, shap_summary, AblationPoint, ExplainError, ForcePlot, ShapMethod,
    DEFAULT_BACKGROUND_ROWS, DEFAULT_COALITIONS,
};
use crate::matrix::{Dataset, Matrix};
use crate::models::{
    train, tune, ClassifierModel, HyperParams, HyperparameterSpace, ModelError, ModelKind, ParamRange, Predictor, TuneBudget,
};
use crate::preprocess::{fit_preprocessor, FittedPreprocessor, PreprocessConfig, PreprocessError};
use crate::seed::{derive_seed, sha256_hex};

pub const DES_NAME: &str = "DES";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("cohort: {0}")]
    Cohort(#[from] CohortError),
    #[error("preprocess (fold {fold}): {source}")]
    Preprocess { fold: usize, source: PreprocessError },
    #[error("train {model} (fold {fold}): {source}")]
    Model {
        fold: usize,
        model: String,
        source: ModelError,
    },
    #[error("des (fold {fold}): {source}")]
    Des { fold: usize, source: DesError },
    #[error("evaluate: {0}")]
    Eval(#[from] EvalError),
    #[error("explain: {0}")]
    Explain(#[from] ExplainError),
    #[error("unknown record id {0:?}")]
    UnknownId(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSource {
    /// Cohort CSV; when absent a synthetic cohort is generated.
    pub path: Option<PathBuf>,
    /// Generator parameters as JSON; the built-in defaults otherwise.
    pub spec: Option<PathBuf>,
    /// Overrides the generator's cohort size.
    pub n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSettings {
    pub enabled: bool,
    pub n_random: usize,
    pub folds: usize,
    /// Search ranges per model; models left out use `default_space`.
    pub spaces: BTreeMap<ModelKind, BTreeMap<String, ParamRange>>,
}

impl Default for TuneSettings {
    fn default() -> Self {
        let b = TuneBudget::default();
        Self {
            enabled: false,
            n_random: b.n_random,
            folds: b.folds,
            spaces: BTreeMap::new(),
        }
    }
}

/// Search ranges bracketing the default hyperparameters.
pub fn default_space(kind: ModelKind) -> BTreeMap<String, ParamRange> {
    use crate::models::ParamRange::*;
    let entries: Vec<(&str, ParamRange)> = match kind {
        ModelKind::Logistic | ModelKind::LinearSvm => vec![("c", LogUniform { low: 1e-3, high: 1e2 })],
        ModelKind::GbdtDepthwise => vec![
            ("learning_rate", LogUniform { low: 0.01, high: 0.3 }),
            ("max_depth", Integer { low: 1, high: 6 }),
            ("min_child_weight", Uniform { low: 1.0, high: 10.0 }),
            ("n_estimators", Integer { low: 100, high: 1000 }),
        ],
        ModelKind::GbdtLeafwise => vec![
            ("learning_rate", LogUniform { low: 0.01, high: 0.3 }),
            ("max_depth", Integer { low: 1, high: 6 }),
            ("num_leaves", Integer { low: 2, high: 64 }),
            ("n_estimators", Integer { low: 50, high: 500 }),
        ],
    };
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesSettings {
    /// Build the ensemble when at least two models are configured.
    pub enabled: bool,
    pub method: DesMethod,
    pub k: usize,
    pub mcb_similarity_threshold: f64,
    /// Share of each balanced training fold held out as DSEL.
    pub dsel_fraction: f64,
}

impl Default for DesSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            method: DesMethod::Ola,
            k: DEFAULT_K,
            mcb_similarity_threshold: DEFAULT_MCB_SIMILARITY,
            dsel_fraction: 0.25,
        }
    }
}

impl DesSettings {
    pub fn config(&self) -> DesConfig {
        DesConfig {
            method: self.method,
            k: self.k,
            mcb_similarity_threshold: self.mcb_similarity_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for DecisionGrid {
    fn default() -> Self {
        Self {
            start: 0.01,
            stop: 0.99,
            step: 0.01,
        }
    }
}

impl DecisionGrid {
    pub fn thresholds(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| ((self.start + i as f64 * self.step) * 1e10).round() / 1e10)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSettings {
    pub threshold: f64,
    pub bin_width: f64,
    pub decision_grid: DecisionGrid,
    /// Reported operating point for every model; none when unset.
    pub target_specificity: Option<f64>,
    pub alpha: f64,
    /// Per-fold metric fed to the rank tests.
    pub rank_metric: String,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            bin_width: 0.1,
            decision_grid: DecisionGrid::default(),
            target_specificity: Some(0.702),
            alpha: 0.05,
            rank_metric: "roc_auc".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSettings {
    /// Fold whose final model is explained.
    pub fold: usize,
    pub background_rows: usize,
    /// Validation rows summarised in the ranking.
    pub sample_rows: usize,
    pub n_coalitions: usize,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        Self {
            fold: 0,
            background_rows: DEFAULT_BACKGROUND_ROWS,
            sample_rows: 100,
            n_coalitions: DEFAULT_COALITIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub cohort: CohortSource,
    pub holdout_n: usize,
    pub folds: usize,
    pub preprocess: PreprocessConfig,
    pub models: Vec<ModelKind>,
    /// Per-model overrides of the default hyperparameters, by name.
    pub hyperparameters: BTreeMap<ModelKind, BTreeMap<String, f64>>,
    pub tune: TuneSettings,
    pub des: DesSettings,
    pub evaluation: EvaluationSettings,
    pub explain: ExplainSettings,
    pub output: PathBuf,
    /// Worker threads; results do not depend on it.
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            cohort: CohortSource::default(),
            holdout_n: 200,
            folds: 5,
            preprocess: PreprocessConfig::default(),
            models: ModelKind::ALL.to_vec(),
            hyperparameters: BTreeMap::new(),
            tune: TuneSettings::default(),
            des: DesSettings::default(),
            evaluation: EvaluationSettings::default(),
            explain: ExplainSettings::default(),
            output: PathBuf::from("out"),
            jobs: 1,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.models.is_empty() {
            return bad("model set is empty".into());
        }
        for (i, m) in self.models.iter().enumerate() {
            if self.models[..i].contains(m) {
                return bad(format!("model {m} listed twice"));
            }
        }
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        for kind in &self.models {
            self.model_params(*kind)?;
        }
        for kind in self.hyperparameters.keys() {
            if !self.models.contains(kind) {
                return bad(format!("hyperparameters given for unused model {kind}"));
            }
        }
        if self.tune.enabled && (self.tune.n_random == 0 || self.tune.folds < 2) {
            return bad("tuning needs n_random >= 1 and folds >= 2".into());
        }
        let d = &self.des;
        if !(d.dsel_fraction > 0.0 && d.dsel_fraction < 1.0) {
            return bad(format!("des.dsel_fraction must be in (0, 1), got {}", d.dsel_fraction));
        }
        if d.k == 0 {
            return bad("des.k must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&d.mcb_similarity_threshold) {
            return bad("des.mcb_similarity_threshold must be in [0, 1]".into());
        }
        let e = &self.evaluation;
        if !(e.threshold > 0.0 && e.threshold < 1.0) {
            return bad(format!("evaluation.threshold must be in (0, 1), got {}", e.threshold));
        }
        if !(e.bin_width > 0.0 && e.bin_width <= 1.0) {
            return bad(format!("evaluation.bin_width must be in (0, 1], got {}", e.bin_width));
        }
        let g = &e.decision_grid;
        if !(g.start > 0.0 && g.stop < 1.0 && g.start <= g.stop && g.step > 0.0) {
            return bad("evaluation.decision_grid must lie inside (0, 1) with a positive step".into());
        }
        if e.target_specificity.is_some_and(|t| !(0.0..=1.0).contains(&t)) {
            return bad("evaluation.target_specificity must be in [0, 1]".into());
        }
        if !(e.alpha > 0.0 && e.alpha < 1.0) {
            return bad("evaluation.alpha must be in (0, 1)".into());
        }
        if !MetricSet::NAMES.contains(&e.rank_metric.as_str()) {
            return bad(format!("unknown rank metric {:?}", e.rank_metric));
        }
        if self.explain.background_rows == 0 || self.explain.sample_rows == 0 {
            return bad("explain row counts must be positive".into());
        }
        if self.explain.fold >= self.folds {
            return bad(format!("explain.fold {} is not below folds {}", self.explain.fold, self.folds));
        }
        Ok(())
    }

    /// Default hyperparameters with the configured overrides applied.
    pub fn model_params(&self, kind: ModelKind) -> Result<HyperParams, PipelineError> {
        let mut p = kind.default_params();
        if let Some(over) = self.hyperparameters.get(&kind) {
            for (name, &v) in over {
                p.set(name, v).map_err(|e| PipelineError::Config(e.to_string()))?;
            }
        }
        p.validate().map_err(|e| PipelineError::Config(format!("{kind}: {e}")))?;
        Ok(p)
    }

    /// Copy with the output location cleared and the thread count reset, so
    /// it serialises the same wherever and however the run happened.
    pub fn portable(&self) -> PipelineConfig {
        PipelineConfig {
            output: PathBuf::new(),
            jobs: 1,
            ..self.clone()
        }
    }

    /// SHA-256 of the settings that influence results; output location and
    /// thread count are left out.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(&self.portable()).expect("config serialises").as_bytes())
    }

    /// Hash of the settings that shape trained artifacts; evaluation and
    /// explanation settings may change without invalidating them.
    pub fn training_hash(&self) -> String {
        let c = PipelineConfig {
            evaluation: EvaluationSettings::default(),
            explain: ExplainSettings::default(),
            ..self.clone()
        };
        c.hash()
    }

    pub fn seed_for(&self, label: &str) -> u64 {
        derive_seed(self.seed, label)
    }

    fn uses_des(&self) -> bool {
        self.des.enabled && self.models.len() >= 2
    }
}

/// Generator parameters: the configured JSON file or the built-in
/// defaults, with the size override applied and validated.
pub fn resolve_cohort_spec(cfg: &PipelineConfig) -> Result<CohortSpec, PipelineError> {
    let mut spec = match &cfg.cohort.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
            CohortSpec::from_json(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?
        }
        None => CohortSpec::default(),
    };
    if let Some(n) = cfg.cohort.n {
        spec.n = n;
    }
    spec.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    Ok(spec)
}

/// Loads the configured cohort file or generates a synthetic one.
pub fn load_cohort_source(cfg: &PipelineConfig) -> Result<Cohort, PipelineError> {
    if let Some(path) = &cfg.cohort.path {
        return Ok(load_cohort(path)?);
    }
    let spec = resolve_cohort_spec(cfg)?;
    Ok(crate::cohort::generate_synthetic(&spec, cfg.seed_for("cohort"))?)
}

/// `(development, holdout)`.
pub fn development_split(cohort: &Cohort, cfg: &PipelineConfig) -> Result<(Cohort, Cohort), PipelineError> {
    Ok(stratified_holdout(cohort, cfg.holdout_n, cfg.seed_for("holdout"))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldStats {
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub outliers_removed: usize,
    /// Training rows after outlier removal and balancing.
    pub n_prepared: usize,
    pub n_base_train: usize,
    pub n_dsel: usize,
}

#[derive(Debug, Clone)]
pub struct FoldModels {
    pub stats: FoldStats,
    /// Development-cohort indices of the validation rows.
    pub val: Vec<usize>,
    pub preprocessor: FittedPreprocessor<f64>,
    pub models: Vec<ClassifierModel<f64>>,
    pub des: Option<DesEnsemble<f64>>,
}

impl FoldModels {
    /// Base models in configured order, then the ensemble.
    pub fn predictors(&self) -> Vec<(String, &dyn Predictor<f64>)> {
        let mut out: Vec<(String, &dyn Predictor<f64>)> = self
            .models
            .iter()
            .map(|m| (m.kind().label().to_string(), m as &dyn Predictor<f64>))
            .collect();
        if let Some(d) = &self.des {
            out.push((DES_NAME.to_string(), d as &dyn Predictor<f64>));
        }
        out
    }

    /// The ensemble when there is one, otherwise the only model.
    pub fn final_model(&self) -> (String, &dyn Predictor<f64>) {
        self.predictors().pop().expect("fold has a model")
    }
}

#[derive(Debug, Clone)]
pub struct TrainedPipeline {
    pub dev: Cohort,
    pub holdout: Cohort,
    /// Cohort feature columns the models see, ascending.
    pub features: Vec<usize>,
    pub dev_data: Dataset<f64>,
    pub holdout_data: Dataset<f64>,
    pub folds: Vec<FoldModels>,
}

fn feature_data(cohort: &Cohort, features: &[usize]) -> Dataset<f64> {
    let all = cohort.to_dataset::<f64>();
    if features.len() == all.x.ncols() {
        all
    } else {
        all.select_cols(features)
    }
}

impl TrainedPipeline {
    pub fn new(dev: Cohort, holdout: Cohort, features: Vec<usize>, folds: Vec<FoldModels>) -> Self {
        let dev_data = feature_data(&dev, &features);
        let holdout_data = feature_data(&holdout, &features);
        Self {
            dev,
            holdout,
            features,
            dev_data,
            holdout_data,
            folds,
        }
    }

    pub fn model_names(&self) -> Vec<String> {
        self.folds[0].predictors().into_iter().map(|(n, _)| n).collect()
    }

    pub fn final_model_name(&self) -> String {
        self.folds[0].final_model().0
    }

    /// Each fold's predictions on its own validation rows, by model name.
    pub fn out_of_fold(&self) -> Result<Vec<BTreeMap<String, Vec<f64>>>, PipelineError> {
        self.folds
            .iter()
            .map(|f| {
                let x = f
                    .preprocessor
                    .transform(&self.dev_data.x.select_rows(&f.val))
                    .map_err(|source| PipelineError::Preprocess {
                        fold: f.stats.fold,
                        source,
                    })?;
                Ok(f.predictors().into_iter().map(|(n, p)| (n, p.predict_proba_batch(&x))).collect())
            })
            .collect()
    }

    /// Holdout probabilities averaged over the fold models.
    pub fn holdout_predictions(&self) -> Result<BTreeMap<String, Vec<f64>>, PipelineError> {
        let mut sums: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for f in &self.folds {
            let x = f
                .preprocessor
                .transform(&self.holdout_data.x)
                .map_err(|source| PipelineError::Preprocess {
                    fold: f.stats.fold,
                    source,
                })?;
            for (name, p) in f.predictors() {
                let probs = p.predict_proba_batch(&x);
                let s = sums.entry(name).or_insert_with(|| vec![0.0; probs.len()]);
                for (a, b) in s.iter_mut().zip(probs) {
                    *a += b;
                }
            }
        }
        let k = self.folds.len() as f64;
        for v in sums.values_mut() {
            for a in v.iter_mut() {
                *a /= k;
            }
        }
        Ok(sums)
    }
}

/// Stratified `(rest, selected)` with `round(frac·n_class)` of each class
/// selected, at least one per non-empty class.
fn stratified_fraction(y: &[bool], frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = crate::seed::rng(seed);
    let mut selected = Vec::new();
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let take = ((frac * idx.len() as f64).round() as usize).clamp(1, idx.len());
        selected.extend_from_slice(&idx[..take]);
    }
    selected.sort_unstable();
    let mut is_sel = vec![false; y.len()];
    for &i in &selected {
        is_sel[i] = true;
    }
    ((0..y.len()).filter(|&i| !is_sel[i]).collect(), selected)
}

pub fn train_fold(
    data: &Dataset<f64>,
    train_idx: &[usize],
    val_idx: &[usize],
    fold: usize,
    cfg: &PipelineConfig,
) -> Result<FoldModels, PipelineError> {
    let seed = |label: &str| cfg.seed_for(&format!("fold-{fold}/{label}"));
    let prepared = fit_preprocessor(&data.select_rows(train_idx), &cfg.preprocess, seed("preprocess"))
        .map_err(|source| PipelineError::Preprocess { fold, source })?;
    let (base, dsel) = if cfg.uses_des() {
        let (rest, sel) = stratified_fraction(&prepared.data.y, cfg.des.dsel_fraction, seed("dsel"));
        (prepared.data.select_rows(&rest), Some(prepared.data.select_rows(&sel)))
    } else {
        (prepared.data.clone(), None)
    };

    let mut models = Vec::with_capacity(cfg.models.len());
    for &kind in &cfg.models {
        let model_err = |source| PipelineError::Model {
            fold,
            model: kind.to_string(),
            source,
        };
        let params = if cfg.tune.enabled {
            let space = HyperparameterSpace {
                base: cfg.model_params(kind)?,
                params: cfg.tune.spaces.get(&kind).cloned().unwrap_or_else(|| default_space(kind)),
            };
            let budget = TuneBudget {
                n_random: cfg.tune.n_random,
                folds: cfg.tune.folds,
            };
            tune(&space, &base, budget, seed(&format!("tune/{kind}"))).map_err(model_err)?.best
        } else {
            cfg.model_params(kind)?
        };
        models.push(train(&params, &base, seed(&format!("model/{kind}"))).map_err(model_err)?);
    }

    let n_dsel = dsel.as_ref().map_or(0, Dataset::len);
    let des = match dsel {
        Some(d) => Some(build_des(models.clone(), d.x, d.y, cfg.des.config()).map_err(|source| PipelineError::Des { fold, source })?),
        None => None,
    };
    Ok(FoldModels {
        stats: FoldStats {
            fold,
            n_train: train_idx.len(),
            n_val: val_idx.len(),
            outliers_removed: prepared.outliers_removed,
            n_prepared: prepared.data.len(),
            n_base_train: base.len(),
            n_dsel,
        },
        val: val_idx.to_vec(),
        preprocessor: prepared.preprocessor,
        models,
        des,
    })
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))
}

/// Holdout split, folds and per-fold training. `features` restricts the
/// cohort columns (ascending indices); `None` keeps all of them.
pub fn train_pipeline(cohort: &Cohort, cfg: &PipelineConfig, features: Option<&[usize]>) -> Result<TrainedPipeline, PipelineError> {
    cfg.validate()?;
    let n_features = crate::cohort::N_FEATURES;
    let features: Vec<usize> = features.map_or_else(|| (0..n_features).collect(), <[usize]>::to_vec);
    if features.is_empty() || features.windows(2).any(|w| w[0] >= w[1]) || features.iter().any(|&j| j >= n_features) {
        return Err(PipelineError::Config("feature subset must be ascending, distinct and in range".into()));
    }
    let (dev, holdout) = development_split(cohort, cfg)?;
    let data = feature_data(&dev, &features);
    let splits = stratified_kfold(&dev, cfg.folds, cfg.seed_for("folds"))?;
    let folds = thread_pool(cfg.jobs)?.install(|| {
        splits
            .par_iter()
            .enumerate()
            .map(|(f, (tr, va))| train_fold(&data, tr, va, f, cfg))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(TrainedPipeline::new(dev, holdout, features, folds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub model: String,
    pub confusion: ConfusionCounts,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub stats: FoldStats,
    pub models: Vec<ModelResult>,
}

/// Fold-averaged confusion counts, rounded to two decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanConfusion {
    pub tp: f64,
    pub fp: f64,
    pub tn: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTests {
    pub metric: String,
    pub models: Vec<String>,
    #[serde(flatten)]
    pub result: RankTestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub n: usize,
    pub positives: usize,
    pub models: Vec<ModelResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub n: usize,
    pub positives: usize,
    pub n_development: usize,
    pub n_holdout: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config_hash: String,
    pub seed: u64,
    pub threshold: f64,
    pub cohort: CohortSummary,
    pub models: Vec<String>,
    pub folds: Vec<FoldReport>,
    /// Model → metric → mean and sample sd over folds.
    pub metrics_mean_sd: BTreeMap<String, BTreeMap<String, MeanSd>>,
    pub mean_confusion: BTreeMap<String, MeanConfusion>,
    /// Curves below are computed on the pooled out-of-fold predictions.
    pub roc_points: BTreeMap<String, Vec<RocPoint>>,
    pub pooled_roc_auc: BTreeMap<String, f64>,
    pub calibration_bins: BTreeMap<String, Vec<CalibrationBin>>,
    pub decision_curve: BTreeMap<String, DecisionCurve>,
    pub operating_points: BTreeMap<String, OperatingPoint>,
    pub rank_tests: Option<RankTests>,
    pub holdout: Option<HoldoutReport>,
    pub reader_comparison: Option<ReaderComparison>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Builds the report. The holdout block is added when `holdout` is set or
/// votes are given; votes must cover exactly the holdout ids.
pub fn evaluate_pipeline(
    trained: &TrainedPipeline,
    cfg: &PipelineConfig,
    holdout: bool,
    votes: Option<&Votes>,
) -> Result<EvaluationReport, PipelineError> {
    let ev = &cfg.evaluation;
    let names = trained.model_names();
    let oof = trained.out_of_fold()?;

    let mut folds = Vec::new();
    let mut per_model: BTreeMap<String, Vec<ModelResult>> = BTreeMap::new();
    for (f, preds) in trained.folds.iter().zip(&oof) {
        let y: Vec<bool> = f.val.iter().map(|&i| trained.dev_data.y[i]).collect();
        let mut models = Vec::new();
        for name in &names {
            let r = model_result(name, &y, &preds[name], ev.threshold)?;
            per_model.entry(name.clone()).or_default().push(r.clone());
            models.push(r);
        }
        folds.push(FoldReport {
            stats: f.stats.clone(),
            models,
        });
    }

    let mut metrics_mean_sd = BTreeMap::new();
    let mut mean_confusion = BTreeMap::new();
    for (name, rs) in &per_model {
        let m: BTreeMap<String, MeanSd> = MetricSet::NAMES
            .iter()
            .filter_map(|&k| MeanSd::of(rs.iter().map(|r| r.metrics.get(k))).map(|v| (k.to_string(), v)))
            .collect();
        metrics_mean_sd.insert(name.clone(), m);
        let n = rs.len() as f64;
        let avg = |g: fn(&ConfusionCounts) -> usize| round2(rs.iter().map(|r| g(&r.confusion) as f64).sum::<f64>() / n);
        mean_confusion.insert(
            name.clone(),
            MeanConfusion {
                tp: avg(|c| c.tp),
                fp: avg(|c| c.fp),
                tn: avg(|c| c.tn),
                fn_: avg(|c| c.fn_),
            },
        );
    }

    let pooled_y: Vec<bool> = trained
        .folds
        .iter()
        .flat_map(|f| f.val.iter().map(|&i| trained.dev_data.y[i]))
        .collect();
    let grid = ev.decision_grid.thresholds();
    let mut roc_points = BTreeMap::new();
    let mut pooled_roc_auc = BTreeMap::new();
    let mut calibration = BTreeMap::new();
    let mut decision = BTreeMap::new();
    let mut operating_points = BTreeMap::new();
    for name in &names {
        let p: Vec<f64> = oof.iter().flat_map(|m| m[name].iter().copied()).collect();
        roc_points.insert(name.clone(), roc_curve(&pooled_y, &p)?);
        pooled_roc_auc.insert(name.clone(), roc_auc(&pooled_y, &p)?);
        calibration.insert(name.clone(), calibration_bins(&pooled_y, &p, ev.bin_width)?);
        decision.insert(name.clone(), decision_curve(&pooled_y, &p, &grid)?);
        if let Some(t) = ev.target_specificity {
            operating_points.insert(name.clone(), threshold_at_specificity(&pooled_y, &p, t)?);
        }
    }

    let rank_tests = if names.len() >= 2 {
        let scores: Vec<Vec<f64>> = names
            .iter()
            .map(|n| per_model[n].iter().map(|r| r.metrics.get(&ev.rank_metric).unwrap_or(f64::NAN)).collect())
            .collect();
        if scores.iter().flatten().all(|v| v.is_finite()) {
            Some(RankTests {
                metric: ev.rank_metric.clone(),
                models: names.clone(),
                result: friedman_nemenyi(&scores, ev.alpha)?,
            })
        } else {
            None
        }
    } else {
        None
    };

    let mut holdout_report = None;
    let mut readers = None;
    if (holdout || votes.is_some()) && !trained.holdout.is_empty() {
        let preds = trained.holdout_predictions()?;
        let y = &trained.holdout_data.y;
        holdout_report = Some(HoldoutReport {
            n: y.len(),
            positives: trained.holdout.positives(),
            models: names
                .iter()
                .map(|n| model_result(n, y, &preds[n], ev.threshold))
                .collect::<Result<_, _>>()?,
        });
        if let Some(v) = votes {
            let aligned = v.align(&trained.holdout.ids())?;
            let stages: Vec<Option<Stage>> = trained.holdout.records.iter().map(|r| r.stage).collect();
            readers = Some(reader_comparison(y, &preds[&trained.final_model_name()], &aligned, Some(&stages))?);
        }
    } else if votes.is_some() {
        return Err(PipelineError::Config("reader comparison needs a non-empty holdout".into()));
    }

    Ok(EvaluationReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        threshold: ev.threshold,
        cohort: CohortSummary {
            n: trained.dev.len() + trained.holdout.len(),
            positives: trained.dev.positives() + trained.holdout.positives(),
            n_development: trained.dev.len(),
            n_holdout: trained.holdout.len(),
        },
        models: names,
        folds,
        metrics_mean_sd,
        mean_confusion,
        roc_points,
        pooled_roc_auc,
        calibration_bins: calibration,
        decision_curve: decision,
        operating_points,
        rank_tests,
        holdout: holdout_report,
        reader_comparison: readers,
    })
}

fn model_result(name: &str, y: &[bool], probs: &[f64], threshold: f64) -> Result<ModelResult, PipelineError> {
    let c = confusion(y, probs, threshold)?;
    let mut m = metrics(&c);
    m.roc_auc = roc_auc(y, probs).ok();
    Ok(ModelResult {
        model: name.to_string(),
        confusion: c,
        metrics: m,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub rank: usize,
    pub mean_abs_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapReport {
    pub model: String,
    pub fold: usize,
    pub method: ShapMethod,
    pub background_rows: usize,
    pub base_value: f64,
    /// Most important first.
    pub ranking: Vec<FeatureImportance>,
    pub sample_ids: Vec<String>,
    /// `phi[sample][feature]` in model column order.
    pub phi: Vec<Vec<f64>>,
    pub features: Vec<String>,
}

/// Background rows: a stratified sample of the explained fold's training
/// partition, preprocessed like model inputs.
fn explain_context(trained: &TrainedPipeline, cfg: &PipelineConfig) -> Result<(usize, Matrix<f64>), PipelineError> {
    let f = cfg.explain.fold;
    let fold = trained
        .folds
        .get(f)
        .ok_or_else(|| PipelineError::Config(format!("no fold {f} to explain")))?;
    let mut in_val = vec![false; trained.dev.len()];
    for &i in &fold.val {
        in_val[i] = true;
    }
    let train_idx: Vec<usize> = (0..trained.dev.len()).filter(|&i| !in_val[i]).collect();
    let y: Vec<bool> = train_idx.iter().map(|&i| trained.dev_data.y[i]).collect();
    let pick: Vec<usize> = background_indices(&y, cfg.explain.background_rows, cfg.seed_for("explain/background"))
        .into_iter()
        .map(|i| train_idx[i])
        .collect();
    let bg = fold
        .preprocessor
        .transform(&trained.dev_data.x.select_rows(&pick))
        .map_err(|source| PipelineError::Preprocess { fold: f, source })?;
    Ok((f, bg))
}

fn kernel_method(cfg: &PipelineConfig, label: &str) -> ShapMethod {
    ShapMethod::Kernel {
        n_coalitions: cfg.explain.n_coalitions,
        seed: cfg.seed_for(label),
    }
}

/// Ranking of the explained fold's final model over a stratified sample of
/// its validation rows.
pub fn explain_summary(trained: &TrainedPipeline, cfg: &PipelineConfig) -> Result<ShapReport, PipelineError> {
    let (f, bg) = explain_context(trained, cfg)?;
    let fold = &trained.folds[f];
    let y: Vec<bool> = fold.val.iter().map(|&i| trained.dev_data.y[i]).collect();
    let pick: Vec<usize> = background_indices(&y, cfg.explain.sample_rows, cfg.seed_for("explain/sample"))
        .into_iter()
        .map(|i| fold.val[i])
        .collect();
    let sample = fold
        .preprocessor
        .transform(&trained.dev_data.x.select_rows(&pick))
        .map_err(|source| PipelineError::Preprocess { fold: f, source })?;
    let (name, model) = fold.final_model();
    let method = kernel_method(cfg, "explain/summary");
    let s = shap_summary(model, &sample, &bg, method)?;
    let names = &trained.dev_data.schema.names;
    Ok(ShapReport {
        model: name,
        fold: f,
        method,
        background_rows: bg.nrows(),
        base_value: s.base_value,
        ranking: s
            .ranking
            .iter()
            .enumerate()
            .map(|(r, &j)| FeatureImportance {
                feature: names[j].clone(),
                rank: r + 1,
                mean_abs_phi: s.mean_abs_phi[j],
            })
            .collect(),
        sample_ids: pick.iter().map(|&i| trained.dev.records[i].id.clone()).collect(),
        phi: s.phi,
        features: names.clone(),
    })
}

/// One force plot per id, looked up in the development and holdout sets.
pub fn force_plots(trained: &TrainedPipeline, cfg: &PipelineConfig, ids: &[String]) -> Result<Vec<ForcePlot>, PipelineError> {
    let (f, bg) = explain_context(trained, cfg)?;
    let fold = &trained.folds[f];
    let (_, model) = fold.final_model();
    ids.iter()
        .map(|id| {
            let raw: Vec<f64> = if let Some(i) = trained.dev.position(id) {
                trained.dev_data.x.row(i).to_vec()
            } else if let Some(i) = trained.holdout.position(id) {
                trained.holdout_data.x.row(i).to_vec()
            } else {
                return Err(PipelineError::UnknownId(id.clone()));
            };
            let x = fold
                .preprocessor
                .transform(&Matrix::from_rows(&[raw.as_slice()]))
                .map_err(|source| PipelineError::Preprocess { fold: f, source })?;
            let e = kernel_shap(model, x.row(0), &bg, cfg.explain.n_coalitions, cfg.seed_for(&format!("explain/id/{id}")))?;
            let mut plot = e.force_plot(&trained.dev_data.schema, Some(&raw));
            plot.id = Some(id.clone());
            Ok(plot)
        })
        .collect()
}

/// Mean ± sd over folds of the final model's F1, retraining on each
/// feature subset of `ranking` (cohort column indices, most important
/// first).
pub fn ablation(cohort: &Cohort, cfg: &PipelineConfig, ranking: &[usize]) -> Result<Vec<AblationPoint>, PipelineError> {
    feature_ablation(ranking, |keep| {
        let trained = train_pipeline(cohort, cfg, Some(keep))?;
        let name = trained.final_model_name();
        let oof = trained.out_of_fold()?;
        let mut f1 = Vec::new();
        for (f, preds) in trained.folds.iter().zip(&oof) {
            let y: Vec<bool> = f.val.iter().map(|&i| trained.dev_data.y[i]).collect();
            f1.push(metrics(&confusion(&y, &preds[&name], cfg.evaluation.threshold)?).f1);
        }
        MeanSd::of(f1).ok_or_else(|| PipelineError::Config("F1 undefined in every fold".into()))
    })
}
