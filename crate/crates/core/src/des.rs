//! Dynamic ensemble selection: per query, rate each pool member on the
//! query's k nearest DSEL rows and predict with the locally competent ones.
//!
//! Every method reduces to a weight per pool member; the output is the
//! weighted mean of member probabilities. OLA, MCB and A Priori put all the
//! weight on one member.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::models::{ClassifierModel, Predictor};
use crate::scalar::{total_cmp, Scalar};

pub const DEFAULT_K: usize = 7;
pub const DEFAULT_MCB_SIMILARITY: f64 = 0.7;
/// Stand-in distance for an exact DSEL match in A Priori weighting.
pub const APRIORI_MIN_DISTANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum DesError {
    #[error("pool needs at least 2 classifiers, got {0}")]
    PoolTooSmall(usize),
    #[error("k = {k} must be between 1 and the DSEL size {dsel}")]
    BadK { k: usize, dsel: usize },
    #[error("DSEL must contain both classes")]
    SingleClassDsel,
    #[error("pool member {index} expects {expected} features, DSEL has {got}")]
    FeatureMismatch { index: usize, expected: usize, got: usize },
    #[error("pool member {0} produced a non-finite probability on DSEL")]
    NonFinite(usize),
    #[error("MCB similarity threshold {0} outside [0, 1]")]
    BadThreshold(f64),
    #[error("{0} DSEL labels for {1} rows")]
    Shape(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DesMethod {
    #[serde(rename = "ola")]
    Ola,
    #[serde(rename = "mcb")]
    Mcb,
    #[serde(rename = "apriori")]
    APriori,
    #[serde(rename = "knora_u")]
    KnoraU,
    #[serde(rename = "knora_e")]
    KnoraE,
}

impl DesMethod {
    pub const ALL: [DesMethod; 5] = [DesMethod::Ola, DesMethod::Mcb, DesMethod::APriori, DesMethod::KnoraU, DesMethod::KnoraE];

    pub fn as_str(self) -> &'static str {
        match self {
            DesMethod::Ola => "ola",
            DesMethod::Mcb => "mcb",
            DesMethod::APriori => "apriori",
            DesMethod::KnoraU => "knora_u",
            DesMethod::KnoraE => "knora_e",
        }
    }
}

impl fmt::Display for DesMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DesMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "ola" => Ok(DesMethod::Ola),
            "mcb" => Ok(DesMethod::Mcb),
            "apriori" | "a_priori" => Ok(DesMethod::APriori),
            "knora_u" | "knorau" => Ok(DesMethod::KnoraU),
            "knora_e" | "knorae" => Ok(DesMethod::KnoraE),
            other => Err(format!("unknown DES method {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesConfig {
    pub method: DesMethod,
    pub k: usize,
    pub mcb_similarity_threshold: f64,
}

impl Default for DesConfig {
    fn default() -> Self {
        Self {
            method: DesMethod::Ola,
            k: DEFAULT_K,
            mcb_similarity_threshold: DEFAULT_MCB_SIMILARITY,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DesEnsemble<T, M = ClassifierModel<T>> {
    pool: Vec<M>,
    dsel_x: Matrix<T>,
    dsel_y: Vec<bool>,
    /// `proba[member][row]` on DSEL.
    proba: Vec<Vec<T>>,
    /// `correct[member][row]`: decision at 0.5 matches the label.
    correct: Vec<Vec<bool>>,
    config: DesConfig,
}

/// Feature width a pool member expects, when it knows it.
pub trait PoolMember<T: Scalar>: Predictor<T> {
    fn n_features(&self) -> Option<usize> {
        None
    }
}

impl<T: Scalar> PoolMember<T> for ClassifierModel<T> {
    fn n_features(&self) -> Option<usize> {
        Some(self.n_features)
    }
}

impl<T: Scalar, F: Fn(&[T]) -> T + Sync> PoolMember<T> for F {}

fn decide<T: Scalar>(p: T) -> bool {
    p > T::half()
}

pub fn build_des<T: Scalar, M: PoolMember<T>>(
    pool: Vec<M>,
    dsel_x: Matrix<T>,
    dsel_y: Vec<bool>,
    config: DesConfig,
) -> Result<DesEnsemble<T, M>, DesError> {
    if pool.len() < 2 {
        return Err(DesError::PoolTooSmall(pool.len()));
    }
    if dsel_x.nrows() != dsel_y.len() {
        return Err(DesError::Shape(dsel_y.len(), dsel_x.nrows()));
    }
    if config.k == 0 || config.k > dsel_y.len() {
        return Err(DesError::BadK {
            k: config.k,
            dsel: dsel_y.len(),
        });
    }
    if dsel_y.iter().all(|&v| v) || dsel_y.iter().all(|&v| !v) {
        return Err(DesError::SingleClassDsel);
    }
    if !(0.0..=1.0).contains(&config.mcb_similarity_threshold) {
        return Err(DesError::BadThreshold(config.mcb_similarity_threshold));
    }
    for (i, m) in pool.iter().enumerate() {
        if let Some(d) = m.n_features() {
            if d != dsel_x.ncols() {
                return Err(DesError::FeatureMismatch {
                    index: i,
                    expected: d,
                    got: dsel_x.ncols(),
                });
            }
        }
    }
    let proba: Vec<Vec<T>> = pool.iter().map(|m| dsel_x.rows_iter().map(|r| m.predict_proba(r)).collect()).collect();
    if let Some(i) = proba.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(DesError::NonFinite(i));
    }
    let correct = proba
        .iter()
        .map(|p| p.iter().zip(&dsel_y).map(|(&v, &y)| decide(v) == y).collect())
        .collect();
    Ok(DesEnsemble {
        pool,
        dsel_x,
        dsel_y,
        proba,
        correct,
        config,
    })
}

impl<T: Scalar, M: PoolMember<T>> DesEnsemble<T, M> {
    pub fn pool(&self) -> &[M] {
        &self.pool
    }

    pub fn config(&self) -> DesConfig {
        self.config
    }

    pub fn dsel(&self) -> (&Matrix<T>, &[bool]) {
        (&self.dsel_x, &self.dsel_y)
    }

    pub fn correctness(&self) -> &[Vec<bool>] {
        &self.correct
    }

    /// The k nearest DSEL rows with their Euclidean distances; equal
    /// distances keep the lower row index.
    pub fn neighbors(&self, query: &[T]) -> Vec<(usize, T)> {
        let mut d: Vec<(T, usize)> = self
            .dsel_x
            .rows_iter()
            .enumerate()
            .map(|(j, r)| (r.iter().zip(query).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>(), j))
            .collect();
        let k = self.config.k;
        let cmp = |a: &(T, usize), b: &(T, usize)| total_cmp(&a.0, &b.0).then(a.1.cmp(&b.1));
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, cmp);
            d.truncate(k);
        }
        d.sort_by(cmp);
        d.into_iter().map(|(s, j)| (j, s.sqrt())).collect()
    }

    /// Fraction of the k nearest DSEL rows each member labels correctly.
    pub fn local_accuracy(&self, query: &[T]) -> Vec<T> {
        let nn = self.neighbors(query);
        self.accuracy_over(&nn.iter().map(|&(j, _)| j).collect::<Vec<_>>())
    }

    fn accuracy_over(&self, rows: &[usize]) -> Vec<T> {
        let n = T::from_count(rows.len());
        self.correct
            .iter()
            .map(|c| T::from_count(rows.iter().filter(|&&j| c[j]).count()) / n)
            .collect()
    }

    /// Per-member weights for `query` under the configured method.
    pub fn selection_weights(&self, query: &[T]) -> Vec<T> {
        let nn = self.neighbors(query);
        let rows: Vec<usize> = nn.iter().map(|&(j, _)| j).collect();
        let m = self.pool.len();
        match self.config.method {
            DesMethod::Ola => one_hot(m, argmax(&self.accuracy_over(&rows))),
            DesMethod::Mcb => {
                let profile: Vec<bool> = self.pool.iter().map(|c| decide(c.predict_proba(query))).collect();
                let thr = T::lit(self.config.mcb_similarity_threshold);
                let similar: Vec<usize> = rows
                    .iter()
                    .copied()
                    .filter(|&j| {
                        let agree = (0..m).filter(|&i| decide(self.proba[i][j]) == profile[i]).count();
                        T::from_count(agree) / T::from_count(m) >= thr
                    })
                    .collect();
                let region = if similar.is_empty() { &rows } else { &similar };
                one_hot(m, argmax(&self.accuracy_over(region)))
            }
            DesMethod::APriori => {
                let floor = T::lit(APRIORI_MIN_DISTANCE);
                let w: Vec<T> = nn.iter().map(|&(_, d)| T::one() / d.max(floor)).collect();
                let total: T = w.iter().copied().sum();
                let comp: Vec<T> = (0..m)
                    .map(|i| {
                        rows.iter()
                            .zip(&w)
                            .map(|(&j, &wj)| {
                                let p = self.proba[i][j];
                                wj * if self.dsel_y[j] { p } else { T::one() - p }
                            })
                            .sum::<T>()
                            / total
                    })
                    .collect();
                one_hot(m, argmax(&comp))
            }
            DesMethod::KnoraU => {
                let counts: Vec<T> = self
                    .correct
                    .iter()
                    .map(|c| T::from_count(rows.iter().filter(|&&j| c[j]).count()))
                    .collect();
                if counts.iter().all(|&c| c == T::zero()) {
                    vec![T::one(); m]
                } else {
                    counts
                }
            }
            DesMethod::KnoraE => {
                for kk in (1..=rows.len()).rev() {
                    let w: Vec<T> = self
                        .correct
                        .iter()
                        .map(|c| if rows[..kk].iter().all(|&j| c[j]) { T::one() } else { T::zero() })
                        .collect();
                    if w.iter().any(|&v| v > T::zero()) {
                        return w;
                    }
                }
                vec![T::one(); m]
            }
        }
    }
}

fn one_hot<T: Scalar>(m: usize, i: usize) -> Vec<T> {
    let mut w = vec![T::zero(); m];
    w[i] = T::one();
    w
}

/// First index of the maximum.
fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl<T: Scalar, M: PoolMember<T>> Predictor<T> for DesEnsemble<T, M> {
    fn predict_proba(&self, x: &[T]) -> T {
        let w = self.selection_weights(x);
        let mut num = T::zero();
        let mut den = T::zero();
        for (m, &wi) in self.pool.iter().zip(&w) {
            if wi > T::zero() {
                num += wi * m.predict_proba(x);
                den += wi;
            }
        }
        num / den
    }
}

/// DSEL snapshot and settings: everything but the pool needed to rebuild
/// an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesSnapshot<T> {
    pub config: DesConfig,
    pub dsel_x: Matrix<T>,
    pub dsel_y: Vec<bool>,
}

impl<T: Scalar, M: PoolMember<T>> DesEnsemble<T, M> {
    pub fn snapshot(&self) -> DesSnapshot<T> {
        DesSnapshot {
            config: self.config,
            dsel_x: self.dsel_x.clone(),
            dsel_y: self.dsel_y.clone(),
        }
    }

    pub fn from_snapshot(pool: Vec<M>, snapshot: DesSnapshot<T>) -> Result<Self, DesError> {
        build_des(pool, snapshot.dsel_x, snapshot.dsel_y, snapshot.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type Member = Box<dyn Fn(&[f64]) -> f64 + Sync>;

    /// Three DSEL rows at distance 1, 2, 3 from the origin, all positive,
    /// plus a far negative row.
    fn dsel() -> (Matrix<f64>, Vec<bool>) {
        (Matrix::from_rows(&[[1.0], [2.0], [3.0], [100.0]]), vec![true, true, true, false])
    }

    fn ensemble(pool: Vec<Member>, method: DesMethod, k: usize) -> DesEnsemble<f64, Member> {
        let (x, y) = dsel();
        build_des(pool, x, y, DesConfig { method, k, ..Default::default() }).unwrap()
    }

    #[test]
    fn competence_counts_neighbors() {
        // A is right everywhere; B only on the row at x = 1
        let a: Member = Box::new(|x| if x[0] < 50.0 { 0.8 } else { 0.1 });
        let b: Member = Box::new(|x| if x[0] < 1.5 { 0.7 } else { 0.2 });
        let e = ensemble(vec![a, b], DesMethod::Ola, 3);
        let c = e.local_accuracy(&[0.0]);
        assert_eq!(c, vec![1.0, 1.0 / 3.0]);
        assert_eq!(e.predict_proba(&[0.0]), 0.8);
        assert_eq!(e.correctness().len(), 2);
        assert_eq!(e.correctness()[0].len(), 4);
    }

    #[test]
    fn knora_u_weights_by_correct_count() {
        let a: Member = Box::new(|x| if x[0] < 50.0 { 0.8 } else { 0.1 });
        let b: Member = Box::new(|x| if x[0] < 1.5 { 0.7 } else { 0.2 });
        let e = ensemble(vec![a, b], DesMethod::KnoraU, 3);
        // query at 0.5 sees rows 1, 2, 3: counts (3, 1); member outputs 0.8 and 0.7
        assert!((e.predict_proba(&[0.5]) - (3.0 * 0.8 + 0.7) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn knora_e_keeps_members_right_on_every_neighbor() {
        let a: Member = Box::new(|x| if x[0] < 50.0 { 0.8 } else { 0.1 });
        let b: Member = Box::new(|x| if x[0] < 1.5 { 0.7 } else { 0.2 });
        let e = ensemble(vec![a, b], DesMethod::KnoraE, 3);
        assert_eq!(e.predict_proba(&[0.0]), 0.8);
    }

    #[test]
    fn knora_e_relaxes_k() {
        // A right on the nearest row only, B right on none of the first three
        let a: Member = Box::new(|x| if x[0] < 1.5 { 0.9 } else { 0.3 });
        let b: Member = Box::new(|_| 0.2);
        let e = ensemble(vec![a, b], DesMethod::KnoraE, 3);
        assert_eq!(e.predict_proba(&[0.0]), 0.9);
    }

    #[test]
    fn neighbor_ties_prefer_lower_index() {
        let (_, y) = dsel();
        let x = Matrix::from_rows(&[[1.0], [-1.0], [3.0], [100.0]]);
        let pool: Vec<Member> = vec![Box::new(|_| 0.6), Box::new(|_| 0.4)];
        let e = build_des(pool, x, y, DesConfig { k: 1, ..Default::default() }).unwrap();
        assert_eq!(e.neighbors(&[0.0])[0].0, 0);
    }

    #[test]
    fn build_errors() {
        let (x, y) = dsel();
        let pool = || -> Vec<Member> { vec![Box::new(|_| 0.6), Box::new(|_| 0.4)] };
        assert!(matches!(
            build_des(pool(), x.clone(), y.clone(), DesConfig { k: 5, ..Default::default() }),
            Err(DesError::BadK { .. })
        ));
        assert!(matches!(
            build_des(pool(), x.clone(), vec![true; 4], DesConfig { k: 2, ..Default::default() }),
            Err(DesError::SingleClassDsel)
        ));
        let one: Vec<Member> = vec![Box::new(|_| 0.6)];
        assert!(matches!(build_des(one, x, y, DesConfig { k: 2, ..Default::default() }), Err(DesError::PoolTooSmall(1))));
    }

    #[test]
    fn method_names_round_trip() {
        for m in DesMethod::ALL {
            assert_eq!(m.as_str().parse::<DesMethod>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.as_str()));
        }
    }
}
