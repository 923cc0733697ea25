//! Two-stage hyperparameter search: random sampling, then a local grid
//! around the random-stage winner. Configurations are scored by mean F1
//! over stratified folds.

use std::collections::BTreeMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, HyperParams, ModelError, Predictor};
use crate::eval::{confusion, metrics, stratified_folds};
use crate::matrix::Dataset;
use crate::scalar::Scalar;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ParamRange {
    Uniform { low: f64, high: f64 },
    LogUniform { low: f64, high: f64 },
    Integer { low: i64, high: i64 },
    Grid { values: Vec<f64> },
}

impl ParamRange {
    fn validate(&self, name: &str) -> Result<(), ModelError> {
        let ok = match self {
            ParamRange::Uniform { low, high } => low <= high,
            ParamRange::LogUniform { low, high } => *low > 0.0 && low <= high,
            ParamRange::Integer { low, high } => low <= high,
            ParamRange::Grid { values } => !values.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidParam(format!("bad search range for {name}")))
        }
    }

    fn sample(&self, rng: &mut seed::Rng) -> f64 {
        match self {
            ParamRange::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            ParamRange::LogUniform { low, high } => (low.ln() + (high.ln() - low.ln()) * rng.random::<f64>()).exp(),
            ParamRange::Integer { low, high } => rng.random_range(*low..=*high) as f64,
            ParamRange::Grid { values } => values[rng.random_range(0..values.len())],
        }
    }

    /// Stage-two candidates around `v`: the full list for explicit grids,
    /// otherwise `v` and its neighbours a tenth of the range away.
    fn neighbourhood(&self, v: f64) -> Vec<f64> {
        let mut out = match self {
            ParamRange::Grid { values } => return values.clone(),
            ParamRange::Uniform { low, high } => {
                let s = 0.1 * (high - low);
                vec![(v - s).max(*low), v, (v + s).min(*high)]
            }
            ParamRange::LogUniform { low, high } => {
                let f = (high / low).powf(0.1);
                vec![(v / f).max(*low), v, (v * f).min(*high)]
            }
            ParamRange::Integer { low, high } => {
                let s = ((0.1 * (high - low) as f64).round() as i64).max(1);
                let v = v as i64;
                vec![(v - s).max(*low) as f64, v as f64, (v + s).min(*high) as f64]
            }
        };
        out.dedup();
        out
    }
}

/// Named parameters to search, applied on top of a base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparameterSpace {
    pub base: HyperParams,
    pub params: BTreeMap<String, ParamRange>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneBudget {
    pub n_random: usize,
    pub folds: usize,
}

impl Default for TuneBudget {
    fn default() -> Self {
        Self { n_random: 20, folds: 2 }
    }
}

pub type Assignment = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: HyperParams,
    pub best_assignment: Assignment,
    pub best_score: f64,
    /// Every distinct configuration scored, in evaluation order.
    pub evaluated: Vec<(Assignment, f64)>,
}

pub fn tune<T: Scalar>(
    space: &HyperparameterSpace,
    data: &Dataset<T>,
    budget: TuneBudget,
    seed: u64,
) -> Result<TuneResult, ModelError> {
    if space.params.is_empty() {
        return Err(ModelError::EmptySpace);
    }
    if budget.n_random == 0 {
        return Err(ModelError::InvalidParam("n_random must be at least 1".into()));
    }
    for (name, r) in &space.params {
        r.validate(name)?;
        space.base.clone().set(name, 0.0)?;
    }
    let folds = stratified_folds(&data.y, budget.folds, seed::derive_seed(seed, "tune-folds"))
        .map_err(|e| ModelError::InvalidParam(e.to_string()))?;

    let mut rng = seed::rng(seed::derive_seed(seed, "tune-sample"));
    let stage1: Vec<Assignment> = (0..budget.n_random)
        .map(|_| space.params.iter().map(|(k, r)| (k.clone(), r.sample(&mut rng))).collect())
        .collect();
    let mut evaluated: Vec<(Assignment, f64)> = Vec::new();
    score_new(space, data, &folds, seed, stage1, &mut evaluated)?;
    let winner = argmax(&evaluated).0.clone();

    let mut stage2: Vec<Assignment> = vec![Assignment::new()];
    for (name, r) in &space.params {
        let cands = r.neighbourhood(winner[name]);
        stage2 = stage2
            .into_iter()
            .flat_map(|a| {
                cands.iter().map(move |&v| {
                    let mut a = a.clone();
                    a.insert(name.clone(), v);
                    a
                })
            })
            .collect();
    }
    score_new(space, data, &folds, seed, stage2, &mut evaluated)?;

    let (best_assignment, best_score) = argmax(&evaluated).clone();
    Ok(TuneResult {
        best: apply(&space.base, &best_assignment)?,
        best_assignment,
        best_score,
        evaluated,
    })
}

/// First entry with the highest score.
fn argmax(evaluated: &[(Assignment, f64)]) -> &(Assignment, f64) {
    let mut best = &evaluated[0];
    for e in evaluated {
        if e.1 > best.1 {
            best = e;
        }
    }
    best
}

fn apply(base: &HyperParams, a: &Assignment) -> Result<HyperParams, ModelError> {
    let mut p = base.clone();
    for (k, &v) in a {
        p.set(k, v)?;
    }
    p.validate()?;
    Ok(p)
}

/// Scores configurations not yet seen, in parallel, appending in order.
fn score_new<T: Scalar>(
    space: &HyperparameterSpace,
    data: &Dataset<T>,
    folds: &[Vec<usize>],
    seed: u64,
    candidates: Vec<Assignment>,
    evaluated: &mut Vec<(Assignment, f64)>,
) -> Result<(), ModelError> {
    let mut fresh: Vec<Assignment> = Vec::new();
    for a in candidates {
        if !evaluated.iter().any(|(e, _)| *e == a) && !fresh.contains(&a) {
            fresh.push(a);
        }
    }
    let scores: Vec<Result<f64, ModelError>> = fresh
        .par_iter()
        .map(|a| cv_f1(&apply(&space.base, a)?, data, folds, seed))
        .collect();
    for (a, s) in fresh.into_iter().zip(scores) {
        evaluated.push((a, s?));
    }
    Ok(())
}

/// Mean F1 at threshold 0.5 over the given validation folds; an undefined
/// F1 counts as 0.
pub fn cv_f1<T: Scalar>(params: &HyperParams, data: &Dataset<T>, folds: &[Vec<usize>], seed: u64) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for (f, val) in folds.iter().enumerate() {
        let mut in_val = vec![false; data.len()];
        for &i in val {
            in_val[i] = true;
        }
        let train_idx: Vec<usize> = (0..data.len()).filter(|&i| !in_val[i]).collect();
        let model = train(params, &data.select_rows(&train_idx), seed.wrapping_add(f as u64))?;
        let probs: Vec<f64> = val.iter().map(|&i| model.predict_proba(data.x.row(i)).to_f64_lossy()).collect();
        let y: Vec<bool> = val.iter().map(|&i| data.y[i]).collect();
        let c = confusion(&y, &probs, 0.5).map_err(|e| ModelError::InvalidParam(e.to_string()))?;
        total += metrics(&c).f1.unwrap_or(0.0);
    }
    Ok(total / folds.len() as f64)
}
