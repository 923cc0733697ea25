//! Synthetic cohort generator.
//!
//! Per class, latent vectors are drawn from a Gaussian copula with the
//! spec's block correlation. Each latent column is then replaced by its
//! normal scores `Φ⁻¹((rank - ½) / n)` before applying the inverse marginal
//! (normal for age, log-normal for labs, threshold for binary features).
//! Rank replacement keeps the dependence structure while making every class
//! marginal hit its target quantiles, which is what the calibration
//! guarantees rely on.

use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use super::spec::{cholesky_psd, Quantiles};
use super::{Cohort, CohortError, CohortSpec, Feature, Label, PatientRecord, Provenance, Sex, Smoking, Stage, N_FEATURES, N_LABS};
use crate::seed;

/// Upper quartile of the standard normal.
const Z75: f64 = 0.674_489_750_196_081_7;

const SIGNIFICANT_DIGITS: i32 = 4;

pub fn generate_synthetic(spec: &CohortSpec, seed: u64) -> Result<Cohort, CohortError> {
    spec.validate()?;
    let n_lc = (spec.prevalence * spec.n as f64).round() as usize;
    if n_lc == 0 || n_lc == spec.n {
        return Err(CohortError::Spec(format!(
            "prevalence {} leaves one class empty at n = {}",
            spec.prevalence, spec.n
        )));
    }
    let chol = cholesky_psd(&spec.correlation_matrix()?, N_FEATURES)
        .ok_or_else(|| CohortError::Spec("correlation matrix is not positive semi-definite".into()))?;
    let mut rng = seed::rng(seed);

    let mut records = Vec::with_capacity(spec.n);
    records.extend(generate_class(spec, Label::Lc, n_lc, &chol, &mut rng));
    records.extend(generate_class(spec, Label::NonLc, spec.n - n_lc, &chol, &mut rng));
    records.shuffle(&mut rng);

    let width = spec.n.to_string().len().max(3);
    for (i, r) in records.iter_mut().enumerate() {
        r.id = format!("p{:0width$}", i + 1);
    }
    Cohort::new(records, Provenance::Synthetic, Some(seed))
}

fn generate_class(spec: &CohortSpec, label: Label, n: usize, chol: &[f64], rng: &mut seed::Rng) -> Vec<PatientRecord> {
    let d = N_FEATURES;
    let std_normal = Normal::new(0.0, 1.0).expect("standard normal");

    // latent[i * d + j]
    let mut latent = vec![0.0; n * d];
    let mut e = vec![0.0; d];
    for i in 0..n {
        for v in e.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        for r in 0..d {
            let mut s = 0.0;
            for k in 0..=r {
                s += chol[r * d + k] * e[k];
            }
            latent[i * d + r] = s;
        }
    }

    // uniform scores by column rank
    let mut scores = vec![0.0; n * d];
    let mut order: Vec<usize> = (0..n).collect();
    for j in 0..d {
        order.sort_by(|&a, &b| latent[a * d + j].total_cmp(&latent[b * d + j]).then(a.cmp(&b)));
        for (rank, &i) in order.iter().enumerate() {
            scores[i * d + j] = (rank as f64 + 0.5) / n as f64;
        }
    }

    let pick = |q: &super::ContinuousParam| if label == Label::Lc { q.lc } else { q.non_lc };
    let mut records: Vec<PatientRecord> = (0..n)
        .map(|i| {
            let u = &scores[i * d..(i + 1) * d];
            let mut labs = [None; N_LABS];
            let mut age = 0;
            let (mut female, mut ever) = (false, false);
            for f in Feature::ALL {
                let uj = u[f.index()];
                if f.is_binary() {
                    let p = spec.binary_param(f).expect("validated spec");
                    let p = if label == Label::Lc { p.lc } else { p.non_lc };
                    match f {
                        Feature::Sex => female = uj < p,
                        _ => ever = uj < p,
                    }
                    continue;
                }
                let qs = pick(spec.continuous_param(f).expect("validated spec"));
                let z = std_normal.inverse_cdf(uj);
                if f == Feature::Age {
                    age = normal_from_quartiles(qs, z).round().clamp(18.0, 110.0) as u32;
                } else {
                    labs[f.lab_index().expect("lab")] = Some(round_significant(lognormal_from_quartiles(qs, z)));
                }
            }
            PatientRecord {
                id: String::new(),
                age,
                sex: if female { Sex::Female } else { Sex::Male },
                smoking: if ever { Smoking::Ever } else { Smoking::Never },
                labs,
                label,
                stage: None,
            }
        })
        .collect();

    for (f, rate) in &spec.missingness {
        let k = (rate * n as f64).round() as usize;
        let li = f.lab_index().expect("maskable features are labs");
        for i in index::sample(rng, n, k.min(n)) {
            records[i].labs[li] = None;
        }
    }

    if label == Label::Lc {
        let mut stages = allocate_stages(spec, n);
        stages.shuffle(rng);
        for (r, s) in records.iter_mut().zip(stages) {
            r.stage = Some(s);
        }
    }
    records
}

/// Exact stage counts by largest remainder.
fn allocate_stages(spec: &CohortSpec, n: usize) -> Vec<Stage> {
    let probs = spec.stage_distribution.probabilities();
    let raw: Vec<f64> = probs.iter().map(|(_, p)| p * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut short = n - counts.iter().sum::<usize>();
    let mut by_rem: Vec<usize> = (0..4).collect();
    by_rem.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    for &i in by_rem.iter().cycle() {
        if short == 0 {
            break;
        }
        counts[i] += 1;
        short -= 1;
    }
    probs
        .iter()
        .zip(counts)
        .flat_map(|((s, _), c)| std::iter::repeat_n(*s, c))
        .collect()
}

fn normal_from_quartiles(q: Quantiles, z: f64) -> f64 {
    let sigma = (q.q3 - q.q1) / (2.0 * Z75);
    q.median + sigma * z
}

fn lognormal_from_quartiles(q: Quantiles, z: f64) -> f64 {
    let sigma = (q.q3 / q.q1).ln() / (2.0 * Z75);
    (q.median.ln() + sigma * z).exp()
}

fn round_significant(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let p = SIGNIFICANT_DIGITS - 1 - x.abs().log10().floor() as i32;
    if p >= 0 {
        let s = 10f64.powi(p);
        (x * s).round() / s
    } else {
        let s = 10f64.powi(-p);
        (x / s).round() * s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::median;

    #[test]
    fn rounding_to_significant_digits() {
        assert_eq!(round_significant(0.048_734), 0.04873);
        assert_eq!(round_significant(139.26), 139.3);
        assert_eq!(round_significant(12_346.0), 12_350.0);
    }

    #[test]
    fn prevalence_count_is_exact_rounding() {
        let spec = CohortSpec {
            prevalence: 0.25,
            ..CohortSpec::default()
        };
        let c = generate_synthetic(&spec, 1).unwrap();
        assert_eq!(c.len(), 9940);
        assert_eq!(c.positives(), 2485);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = CohortSpec {
            n: 300,
            ..CohortSpec::default()
        };
        assert_eq!(generate_synthetic(&spec, 5).unwrap(), generate_synthetic(&spec, 5).unwrap());
        assert_ne!(generate_synthetic(&spec, 5).unwrap(), generate_synthetic(&spec, 6).unwrap());
    }

    #[test]
    fn smoking_proportion_calibrated_at_5000() {
        let spec = CohortSpec {
            n: 5000,
            ..CohortSpec::default()
        };
        let c = generate_synthetic(&spec, 11).unwrap();
        let lc: Vec<_> = c.records.iter().filter(|r| r.label == Label::Lc).collect();
        let ever = lc.iter().filter(|r| r.smoking == Smoking::Ever).count() as f64 / lc.len() as f64;
        assert!((0.902..=0.942).contains(&ever), "LC ever-smoker proportion {ever}");
    }

    #[test]
    fn missingness_and_stage_constraints_hold() {
        let c = generate_synthetic(&CohortSpec::default(), 2).unwrap();
        for r in &c.records {
            assert!(r.missing_count() <= 3);
            for (f, v) in Feature::labs().iter().zip(r.labs.iter()) {
                if v.is_none() {
                    assert!(f.is_maskable(), "{f} missing");
                }
            }
            assert_eq!(r.stage.is_some(), r.label == Label::Lc);
        }
        let missing_inr = c.records.iter().filter(|r| r.lab(Feature::Inr).is_none()).count();
        assert!(missing_inr > 0);
    }

    #[test]
    fn class_medians_hit_default_targets() {
        let spec = CohortSpec::default();
        let c = generate_synthetic(&spec, 3).unwrap();
        for p in &spec.continuous {
            for (label, target) in [(Label::Lc, p.lc.median), (Label::NonLc, p.non_lc.median)] {
                let vals: Vec<f64> = c
                    .records
                    .iter()
                    .filter(|r| r.label == label)
                    .filter_map(|r| r.value(p.feature))
                    .collect();
                let m = median(&vals).unwrap();
                assert!(((m - target) / target).abs() <= 0.05, "{} {:?}: {m} vs {target}", p.feature, label);
            }
        }
    }
}
