use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CohortError, Feature, Stage, N_FEATURES};

/// Median and quartiles of one continuous feature within one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl Quantiles {
    pub const fn new(median: f64, q1: f64, q3: f64) -> Self {
        Self { median, q1, q3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousParam {
    pub feature: Feature,
    pub lc: Quantiles,
    pub non_lc: Quantiles,
}

/// Positive proportion per class (female for `sex`, ever-smoker for `smoking`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryParam {
    pub feature: Feature,
    pub lc: f64,
    pub non_lc: f64,
}

/// Every pair of features in the set shares the latent correlation `rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationBlock {
    pub features: Vec<Feature>,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageDistribution {
    #[serde(rename = "I")]
    pub i: f64,
    #[serde(rename = "II")]
    pub ii: f64,
    #[serde(rename = "III")]
    pub iii: f64,
    #[serde(rename = "IV")]
    pub iv: f64,
}

impl StageDistribution {
    pub fn probabilities(&self) -> [(Stage, f64); 4] {
        [
            (Stage::I, self.i),
            (Stage::II, self.ii),
            (Stage::III, self.iii),
            (Stage::IV, self.iv),
        ]
    }
}

/// Parameters of the synthetic cohort generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSpec {
    pub n: usize,
    pub prevalence: f64,
    pub continuous: Vec<ContinuousParam>,
    pub binary: Vec<BinaryParam>,
    #[serde(default)]
    pub correlation_blocks: Vec<CorrelationBlock>,
    #[serde(default)]
    pub missingness: BTreeMap<Feature, f64>,
    pub stage_distribution: StageDistribution,
}

pub(crate) const MIN_COHORT: usize = 100;

impl Default for CohortSpec {
    /// Baseline characteristics of the 9,940-patient referral cohort. The
    /// LC sodium and leucocyte quartiles are printed implausibly in the source
    /// table and are replaced with (137, 141) and (7.29, 10.70).
    fn default() -> Self {
        use Feature::*;
        let q = Quantiles::new;
        let c = |feature, lc, non_lc| ContinuousParam { feature, lc, non_lc };
        Self {
            n: 9940,
            prevalence: 2505.0 / 9940.0,
            continuous: vec![
                c(Age, q(75.0, 68.0, 80.0), q(71.0, 59.0, 79.0)),
                c(Alat, q(19.0, 14.0, 26.0), q(22.0, 16.0, 31.0)),
                c(Albumin, q(42.0, 40.0, 45.0), q(43.0, 41.0, 45.0)),
                c(AmylasePancreatic, q(25.0, 19.0, 34.0), q(25.0, 18.0, 33.0)),
                c(AlkalinePhosphatase, q(81.0, 67.0, 99.0), q(74.0, 62.0, 91.0)),
                c(Basophils, q(0.05, 0.02, 0.06), q(0.04, 0.02, 0.06)),
                c(BilirubinTotal, q(7.0, 5.0, 9.0), q(7.0, 5.0, 10.0)),
                c(Crp, q(7.0, 2.3, 22.0), q(3.4, 1.4, 9.3)),
                c(CalciumTotal, q(2.38, 2.31, 2.45), q(2.34, 2.28, 2.41)),
                c(Eosinophils, q(0.14, 0.08, 0.24), q(0.17, 0.10, 0.28)),
                c(Hemoglobin, q(8.5, 7.8, 9.1), q(8.7, 8.1, 9.3)),
                c(Inr, q(1.0, 0.94, 1.08), q(1.0, 0.95, 1.1)),
                c(Potassium, q(4.0, 3.8, 4.3), q(4.0, 3.8, 4.3)),
                c(Creatinine, q(72.0, 61.0, 87.0), q(76.0, 64.0, 90.0)),
                c(Ldh, q(209.0, 182.0, 246.0), q(192.0, 169.0, 220.0)),
                c(Leucocytes, q(8.80, 7.29, 10.70), q(7.62, 6.20, 9.38)),
                c(Lymphocytes, q(1.79, 1.37, 2.34), q(1.84, 1.4, 2.37)),
                c(Monocytes, q(0.73, 0.57, 0.93), q(0.65, 0.51, 0.83)),
                c(Sodium, q(139.0, 137.0, 141.0), q(140.0, 138.0, 142.0)),
                c(Neutrophils, q(5.77, 4.52, 7.42), q(4.66, 3.54, 6.11)),
                c(Platelets, q(301.0, 243.0, 378.0), q(271.0, 224.0, 331.0)),
            ],
            binary: vec![
                BinaryParam {
                    feature: Sex,
                    lc: 0.521,
                    non_lc: 0.440,
                },
                BinaryParam {
                    feature: Smoking,
                    lc: 0.922,
                    non_lc: 0.692,
                },
            ],
            correlation_blocks: vec![
                CorrelationBlock {
                    features: vec![Leucocytes, Lymphocytes],
                    rho: 0.6,
                },
                CorrelationBlock {
                    features: vec![Leucocytes, Neutrophils],
                    rho: 0.6,
                },
                CorrelationBlock {
                    features: vec![Leucocytes, Monocytes],
                    rho: 0.4,
                },
                CorrelationBlock {
                    features: vec![Albumin, Hemoglobin],
                    rho: 0.3,
                },
            ],
            missingness: BTreeMap::from([(AmylasePancreatic, 0.12), (CalciumTotal, 0.08), (Inr, 0.10)]),
            stage_distribution: StageDistribution {
                i: 0.25,
                ii: 0.10,
                iii: 0.22,
                iv: 0.43,
            },
        }
    }
}

impl CohortSpec {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn continuous_param(&self, f: Feature) -> Option<&ContinuousParam> {
        self.continuous.iter().find(|p| p.feature == f)
    }

    pub fn binary_param(&self, f: Feature) -> Option<&BinaryParam> {
        self.binary.iter().find(|p| p.feature == f)
    }

    pub fn validate(&self) -> Result<(), CohortError> {
        let err = |m: String| Err(CohortError::Spec(m));
        if self.n < MIN_COHORT {
            return err(format!(
                "n = {} is below {MIN_COHORT}; calibration guarantees are unattainable",
                self.n
            ));
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return err(format!("prevalence {} outside (0, 1)", self.prevalence));
        }
        for f in Feature::ALL {
            let (cont, bin) = (
                self.continuous.iter().filter(|p| p.feature == f).count(),
                self.binary.iter().filter(|p| p.feature == f).count(),
            );
            let (want_c, want_b) = if f.is_binary() { (0, 1) } else { (1, 0) };
            if cont != want_c || bin != want_b {
                return err(format!(
                    "feature {f} must appear exactly once as a {} parameter",
                    if f.is_binary() { "binary" } else { "continuous" }
                ));
            }
        }
        for p in &self.continuous {
            for (class, qs) in [("lc", p.lc), ("non_lc", p.non_lc)] {
                if !(qs.q1 < qs.median && qs.median < qs.q3) || !qs.q1.is_finite() || !qs.q3.is_finite() {
                    return err(format!("{} {class}: need q1 < median < q3", p.feature));
                }
                if p.feature == Feature::Age {
                    if !(18.0..=110.0).contains(&qs.median) {
                        return err(format!("age {class} median {} outside 18..110", qs.median));
                    }
                } else if qs.q1 <= 0.0 {
                    return err(format!("{} {class}: lab quantiles must be > 0", p.feature));
                }
            }
        }
        for p in &self.binary {
            for v in [p.lc, p.non_lc] {
                if !(0.0..=1.0).contains(&v) {
                    return err(format!("{} proportion {v} outside [0, 1]", p.feature));
                }
            }
        }
        for (f, rate) in &self.missingness {
            if !f.is_maskable() {
                return err(format!("missingness declared for non-maskable feature {f}"));
            }
            if !(0.0..1.0).contains(rate) {
                return err(format!("missingness rate {rate} for {f} outside [0, 1)"));
            }
        }
        let probs = self.stage_distribution.probabilities();
        if probs.iter().any(|(_, p)| *p < 0.0) || (probs.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() > 1e-9 {
            return err("stage distribution must be non-negative and sum to 1".into());
        }
        let corr = self.correlation_matrix()?;
        cholesky_psd(&corr, N_FEATURES)
            .ok_or_else(|| CohortError::Spec("correlation matrix assembled from blocks is not positive semi-definite".into()))?;
        Ok(())
    }

    /// Row-major `N_FEATURES x N_FEATURES` latent correlation matrix;
    /// identity outside declared blocks.
    pub fn correlation_matrix(&self) -> Result<Vec<f64>, CohortError> {
        let d = N_FEATURES;
        let mut m = vec![0.0; d * d];
        let mut set = vec![false; d * d];
        for i in 0..d {
            m[i * d + i] = 1.0;
        }
        for b in &self.correlation_blocks {
            if !(-1.0..=1.0).contains(&b.rho) {
                return Err(CohortError::Spec(format!("block correlation {} outside [-1, 1]", b.rho)));
            }
            for (x, &fa) in b.features.iter().enumerate() {
                for &fb in &b.features[x + 1..] {
                    let (i, j) = (fa.index(), fb.index());
                    if i == j {
                        return Err(CohortError::Spec(format!("feature {fa} repeated in a correlation block")));
                    }
                    if set[i * d + j] && m[i * d + j] != b.rho {
                        return Err(CohortError::Spec(format!("conflicting correlations for ({fa}, {fb})")));
                    }
                    m[i * d + j] = b.rho;
                    m[j * d + i] = b.rho;
                    set[i * d + j] = true;
                    set[j * d + i] = true;
                }
            }
        }
        Ok(m)
    }
}

/// Lower-triangular factor `L` with `L L^T = a` for a symmetric positive
/// semi-definite matrix. Zero pivots (within tolerance) zero their column.
/// Returns `None` when `a` has a negative direction.
pub(crate) fn cholesky_psd(a: &[f64], d: usize) -> Option<Vec<f64>> {
    const TOL: f64 = 1e-10;
    let mut l = vec![0.0; d * d];
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= l[j * d + k] * l[j * d + k];
        }
        if diag < -TOL {
            return None;
        }
        if diag <= TOL {
            // Semi-definite direction: the remaining column must vanish too.
            for i in j + 1..d {
                let mut s = a[i * d + j];
                for k in 0..j {
                    s -= l[i * d + k] * l[j * d + k];
                }
                if s.abs() > 1e-8 {
                    return None;
                }
            }
            continue;
        }
        let ljj = diag.sqrt();
        l[j * d + j] = ljj;
        for i in j + 1..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = s / ljj;
        }
    }
    Some(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_is_valid_and_serializes() {
        let spec = CohortSpec::default();
        spec.validate().unwrap();
        let back = CohortSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn non_psd_blocks_rejected() {
        let spec = CohortSpec {
            correlation_blocks: vec![
                CorrelationBlock {
                    features: vec![Feature::Alat, Feature::Albumin],
                    rho: 0.9,
                },
                CorrelationBlock {
                    features: vec![Feature::Alat, Feature::Crp],
                    rho: 0.9,
                },
                CorrelationBlock {
                    features: vec![Feature::Albumin, Feature::Crp],
                    rho: -0.9,
                },
            ],
            ..CohortSpec::default()
        };
        assert!(matches!(spec.validate(), Err(CohortError::Spec(m)) if m.contains("semi-definite")));
    }

    #[test]
    fn perfectly_correlated_block_is_psd() {
        let spec = CohortSpec {
            correlation_blocks: vec![CorrelationBlock {
                features: vec![Feature::Alat, Feature::Albumin, Feature::Crp],
                rho: 1.0,
            }],
            ..CohortSpec::default()
        };
        spec.validate().unwrap();
    }

    #[test]
    fn small_n_refused() {
        let spec = CohortSpec {
            n: 99,
            ..CohortSpec::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn stage_distribution_must_sum_to_one() {
        let mut spec = CohortSpec::default();
        spec.stage_distribution.iv = 0.5;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn missingness_only_on_maskable() {
        let mut spec = CohortSpec::default();
        spec.missingness.insert(Feature::Sodium, 0.1);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let l = cholesky_psd(&a, 2).unwrap();
        assert!((l[0] * l[0] - 4.0).abs() < 1e-12);
        assert!((l[2] * l[0] - 2.0).abs() < 1e-12);
        assert!((l[2] * l[2] + l[3] * l[3] - 3.0).abs() < 1e-12);
    }
}
