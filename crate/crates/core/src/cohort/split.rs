use rand::seq::SliceRandom;

use super::{Cohort, CohortError};
use crate::seed;

/// Class-preserving random holdout. The test set holds
/// `round(holdout_n * prevalence)` positives and the rest negatives; both
/// partitions keep the cohort's row order.
pub fn stratified_holdout(cohort: &Cohort, holdout_n: usize, seed: u64) -> Result<(Cohort, Cohort), CohortError> {
    if holdout_n >= cohort.len() && holdout_n > 0 {
        return Err(CohortError::Holdout(format!(
            "holdout of {holdout_n} from a cohort of {}",
            cohort.len()
        )));
    }
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) =
        (0..cohort.len()).partition(|&i| cohort.records[i].label.is_positive());
    let prevalence = pos.len() as f64 / cohort.len().max(1) as f64;
    let test_pos = (holdout_n as f64 * prevalence).round() as usize;
    let test_neg = holdout_n - test_pos.min(holdout_n);
    if test_pos > pos.len() || test_neg > neg.len() {
        return Err(CohortError::Holdout(format!(
            "need {test_pos} positives and {test_neg} negatives, cohort has {} and {}",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = seed::rng(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let mut in_test = vec![false; cohort.len()];
    for &i in pos[..test_pos].iter().chain(neg[..test_neg].iter()) {
        in_test[i] = true;
    }
    let (test_idx, train_idx): (Vec<usize>, Vec<usize>) = (0..cohort.len()).partition(|&i| in_test[i]);
    Ok((cohort.subset(&train_idx), cohort.subset(&test_idx)))
}
