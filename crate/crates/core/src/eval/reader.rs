//! Comparison of a model against human readers' binary votes.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::curves::{threshold_at_specificity, OperatingPoint};
use super::{confusion, metrics, ConfusionCounts, EvalError, MetricSet};
use crate::cohort::Stage;

/// Reader votes, one row of `readers × records`, keyed by record id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Votes {
    pub ids: Vec<String>,
    pub readers: Vec<String>,
    /// `votes[reader][record]`, true = called positive.
    pub votes: Vec<Vec<bool>>,
}

impl Votes {
    /// Reorders the votes to follow `ids`. Every id must be present and
    /// no extra ids may remain.
    pub fn align(&self, ids: &[&str]) -> Result<Votes, EvalError> {
        if ids.len() != self.ids.len() {
            return Err(EvalError::Misaligned(format!(
                "{} records vs {} voted ids",
                ids.len(),
                self.ids.len()
            )));
        }
        let pos: HashMap<&str, usize> = self.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let order = ids
            .iter()
            .map(|id| {
                pos.get(id)
                    .copied()
                    .ok_or_else(|| EvalError::Misaligned(format!("no votes for record {id}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Votes {
            ids: ids.iter().map(|s| s.to_string()).collect(),
            readers: self.readers.clone(),
            votes: self.votes.iter().map(|v| order.iter().map(|&i| v[i]).collect()).collect(),
        })
    }
}

pub fn load_votes(path: impl AsRef<Path>) -> Result<Votes, EvalError> {
    read_votes(BufReader::new(File::open(path)?))
}

/// CSV with header `id, reader_1, …, reader_n` and 0/1 cells.
pub fn read_votes<R: Read>(reader: R) -> Result<Votes, EvalError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("id") || header.len() < 2 {
        return Err(EvalError::Votes("header must be id followed by at least one reader column".into()));
    }
    for (j, name) in header.iter().enumerate().skip(1) {
        if name != format!("reader_{j}") {
            return Err(EvalError::Votes(format!("column {} should be reader_{j}, found {name:?}", j + 1)));
        }
    }
    let n_readers = header.len() - 1;
    let mut ids = Vec::new();
    let mut votes = vec![Vec::new(); n_readers];
    for (row_no, rec) in rdr.records().enumerate() {
        let rec = rec?;
        ids.push(rec.get(0).unwrap_or("").to_string());
        for (r, col) in votes.iter_mut().enumerate() {
            let v = match rec.get(r + 1) {
                Some("1") => true,
                Some("0") => false,
                other => {
                    return Err(EvalError::Votes(format!(
                        "row {}: reader_{} vote {:?} is not 0 or 1",
                        row_no + 1,
                        r + 1,
                        other.unwrap_or("")
                    )))
                }
            };
            col.push(v);
        }
    }
    Ok(Votes {
        ids,
        readers: header.iter().skip(1).map(str::to_string).collect(),
        votes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderResult {
    pub name: String,
    pub confusion: ConfusionCounts,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAtReaderSpecificity {
    pub operating_point: OperatingPoint,
    pub confusion: ConfusionCounts,
    pub metrics: MetricSet,
}

/// Correctly detected positives of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDetection {
    pub stage: Stage,
    pub n: usize,
    pub model: usize,
    pub majority: usize,
    pub readers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderComparison {
    pub readers: Vec<ReaderResult>,
    /// Majority vote across readers; a tie counts as positive.
    pub majority: ReaderResult,
    pub model: ModelAtReaderSpecificity,
    pub per_stage: Vec<StageDetection>,
}

pub fn majority_vote(votes: &[Vec<bool>]) -> Vec<bool> {
    let n = votes.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| 2 * votes.iter().filter(|v| v[i]).count() >= votes.len())
        .collect()
}

fn reader_result(name: &str, y: &[bool], predicted: &[bool]) -> Result<ReaderResult, EvalError> {
    let c = ConfusionCounts::from_predictions(y, predicted)?;
    Ok(ReaderResult {
        name: name.to_string(),
        confusion: c,
        metrics: metrics(&c),
    })
}

/// `votes[reader][record]` must be aligned with `y`, `model_probs` and
/// `stages`.
pub fn reader_comparison(
    y: &[bool],
    model_probs: &[f64],
    votes: &Votes,
    stages: Option<&[Option<Stage>]>,
) -> Result<ReaderComparison, EvalError> {
    if votes.votes.is_empty() {
        return Err(EvalError::Misaligned("no readers".into()));
    }
    if model_probs.len() != y.len() {
        return Err(EvalError::LengthMismatch(y.len(), model_probs.len()));
    }
    for (name, v) in votes.readers.iter().zip(&votes.votes) {
        if v.len() != y.len() {
            return Err(EvalError::Misaligned(format!("{name} has {} votes for {} records", v.len(), y.len())));
        }
    }
    if let Some(s) = stages {
        if s.len() != y.len() {
            return Err(EvalError::Misaligned(format!("{} stages for {} records", s.len(), y.len())));
        }
    }

    let readers = votes
        .readers
        .iter()
        .zip(&votes.votes)
        .map(|(name, v)| reader_result(name, y, v))
        .collect::<Result<Vec<_>, _>>()?;
    let maj = majority_vote(&votes.votes);
    let majority = reader_result("majority", y, &maj)?;
    let target = majority.metrics.specificity.ok_or(EvalError::NoNegatives)?;
    let op = threshold_at_specificity(y, model_probs, target)?;
    let mc = confusion(y, model_probs, op.threshold)?;
    let model_pred: Vec<bool> = model_probs.iter().map(|&p| p > op.threshold).collect();

    let mut per_stage = Vec::new();
    if let Some(stages) = stages {
        for stage in Stage::ALL {
            let idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] && stages[i] == Some(stage)).collect();
            if idx.is_empty() {
                continue;
            }
            let count = |pred: &[bool]| idx.iter().filter(|&&i| pred[i]).count();
            per_stage.push(StageDetection {
                stage,
                n: idx.len(),
                model: count(&model_pred),
                majority: count(&maj),
                readers: votes.votes.iter().map(|v| count(v)).collect(),
            });
        }
    }
    Ok(ReaderComparison {
        readers,
        majority,
        model: ModelAtReaderSpecificity {
            operating_point: op,
            confusion: mc,
            metrics: metrics(&mc),
        },
        per_stage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn votes(v: Vec<Vec<bool>>) -> Votes {
        let n = v[0].len();
        Votes {
            ids: (0..n).map(|i| format!("r{i}")).collect(),
            readers: (1..=v.len()).map(|r| format!("reader_{r}")).collect(),
            votes: v,
        }
    }

    #[test]
    fn perfect_reader() {
        let y = vec![true, false, true, false];
        let r = reader_comparison(&y, &[0.9, 0.1, 0.8, 0.3], &votes(vec![y.clone()]), None).unwrap();
        assert_eq!(r.readers[0].metrics.sensitivity, Some(1.0));
        assert_eq!(r.readers[0].metrics.specificity, Some(1.0));
    }

    #[test]
    fn majority_ties_go_positive() {
        assert_eq!(majority_vote(&[vec![true, false], vec![false, false]]), vec![true, false]);
    }

    #[test]
    fn model_cast_from_majority_matches_it() {
        let y = vec![true, true, false, false, false, true, false];
        let v = vec![
            vec![true, false, false, true, false, true, false],
            vec![true, true, false, true, true, false, false],
            vec![false, true, false, false, true, true, true],
        ];
        let maj = majority_vote(&v);
        let probs: Vec<f64> = maj.iter().map(|&m| if m { 0.9 } else { 0.1 }).collect();
        let r = reader_comparison(&y, &probs, &votes(v), None).unwrap();
        assert_eq!(r.model.confusion, r.majority.confusion);
        assert_eq!(r.model.metrics, r.majority.metrics);
    }

    #[test]
    fn votes_csv_parses_and_aligns() {
        let text = "id,reader_1,reader_2\na,1,0\nb,0,0\n";
        let v = read_votes(text.as_bytes()).unwrap();
        assert_eq!(v.votes, vec![vec![true, false], vec![false, false]]);
        let a = v.align(&["b", "a"]).unwrap();
        assert_eq!(a.votes[0], vec![false, true]);
        assert!(v.align(&["a", "c"]).is_err());
        assert!(read_votes("id,reader_1\na,2\n".as_bytes()).is_err());
        assert!(read_votes("id,doctor\na,1\n".as_bytes()).is_err());
    }
}
