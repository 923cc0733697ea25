use rand::seq::SliceRandom;

use super::EvalError;
use crate::cohort::Cohort;
use crate::seed;

/// Validation index sets of a stratified k-fold split. Each class is
/// shuffled and dealt round-robin; negatives continue where positives
/// stopped so fold sizes differ by at most one.
pub fn stratified_folds(y: &[bool], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, EvalError> {
    if k < 2 {
        return Err(EvalError::TooFewFolds(k));
    }
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) = (0..y.len()).partition(|&i| y[i]);
    for class in [&pos, &neg] {
        if class.len() < k {
            return Err(EvalError::ClassTooSmall { size: class.len(), k });
        }
    }
    let mut rng = seed::rng(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (j, &i) in pos.iter().chain(&neg).enumerate() {
        folds[j % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// `(train, validation)` index pairs over a cohort.
pub fn stratified_kfold(cohort: &Cohort, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>, EvalError> {
    let folds = stratified_folds(&cohort.labels(), k, seed)?;
    Ok(folds
        .into_iter()
        .map(|val| {
            let mut in_val = vec![false; cohort.len()];
            for &i in &val {
                in_val[i] = true;
            }
            ((0..cohort.len()).filter(|&i| !in_val[i]).collect(), val)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divisible_classes_split_evenly() {
        let y: Vec<bool> = (0..100).map(|i| i < 25).collect();
        let folds = stratified_folds(&y, 5, 1).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        for f in &folds {
            assert_eq!(f.iter().filter(|&&i| y[i]).count(), 5);
            assert_eq!(f.len(), 20);
        }
    }

    #[test]
    fn small_class_rejected() {
        let y = [true, true, false, false, false, false];
        assert!(matches!(stratified_folds(&y, 3, 0), Err(EvalError::ClassTooSmall { size: 2, k: 3 })));
    }
}
