//! Patient data model, CSV ingestion, synthetic cohort generation and the
//! baseline-characteristics table.

mod baseline;
mod generate;
mod io;
mod spec;
mod split;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{Dataset, FeatureSchema, Matrix};
use crate::scalar::Scalar;

pub use baseline::{summarize_baseline, BaselineRow, BaselineTable, ClassSummary, RowSummary, SIGNIFICANCE_THRESHOLD};
pub use generate::generate_synthetic;
pub use io::{load_cohort, read_cohort, save_cohort, write_cohort, CSV_HEADER};
pub use spec::{BinaryParam, CohortSpec, ContinuousParam, CorrelationBlock, Quantiles, StageDistribution};
pub use split::stratified_holdout;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema error: {message} (columns: {})", columns.join(", "))]
    Schema { message: String, columns: Vec<String> },
    #[error("parse error at row {row}, column `{column}`: cannot read {value:?}")]
    Parse { row: usize, column: String, value: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("invalid cohort spec: {0}")]
    Spec(String),
    #[error("cohort needs both classes with at least {min} records each")]
    SingleClass { min: usize },
    #[error("holdout error: {0}")]
    Holdout(String),
}

/// Model input columns, in matrix order: age, sex, smoking, then the 20
/// blood analyses in CSV order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Age,
    /// Encoded 1.0 for female.
    Sex,
    /// Encoded 1.0 for former/current smokers.
    Smoking,
    Alat,
    Albumin,
    AmylasePancreatic,
    AlkalinePhosphatase,
    Basophils,
    BilirubinTotal,
    Crp,
    CalciumTotal,
    Eosinophils,
    Hemoglobin,
    Inr,
    Potassium,
    Creatinine,
    Ldh,
    Leucocytes,
    Lymphocytes,
    Monocytes,
    Sodium,
    Neutrophils,
    Platelets,
}

pub const N_LABS: usize = 20;
pub const N_FEATURES: usize = 23;

impl Feature {
    pub const ALL: [Feature; N_FEATURES] = [
        Feature::Age,
        Feature::Sex,
        Feature::Smoking,
        Feature::Alat,
        Feature::Albumin,
        Feature::AmylasePancreatic,
        Feature::AlkalinePhosphatase,
        Feature::Basophils,
        Feature::BilirubinTotal,
        Feature::Crp,
        Feature::CalciumTotal,
        Feature::Eosinophils,
        Feature::Hemoglobin,
        Feature::Inr,
        Feature::Potassium,
        Feature::Creatinine,
        Feature::Ldh,
        Feature::Leucocytes,
        Feature::Lymphocytes,
        Feature::Monocytes,
        Feature::Sodium,
        Feature::Neutrophils,
        Feature::Platelets,
    ];

    /// Analytes that some clinics did not order; only these go missing in
    /// generated data.
    pub const MASKABLE: [Feature; 3] = [Feature::AmylasePancreatic, Feature::CalciumTotal, Feature::Inr];

    pub fn labs() -> &'static [Feature] {
        &Self::ALL[3..]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Position within the lab array, `None` for demographic columns.
    pub fn lab_index(self) -> Option<usize> {
        self.index().checked_sub(3)
    }

    pub fn is_binary(self) -> bool {
        matches!(self, Feature::Sex | Feature::Smoking)
    }

    pub fn is_maskable(self) -> bool {
        Self::MASKABLE.contains(&self)
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Age => "age",
            Feature::Sex => "sex",
            Feature::Smoking => "smoking",
            Feature::Alat => "alat",
            Feature::Albumin => "albumin",
            Feature::AmylasePancreatic => "amylase_pancreatic",
            Feature::AlkalinePhosphatase => "alkaline_phosphatase",
            Feature::Basophils => "basophils",
            Feature::BilirubinTotal => "bilirubin_total",
            Feature::Crp => "crp",
            Feature::CalciumTotal => "calcium_total",
            Feature::Eosinophils => "eosinophils",
            Feature::Hemoglobin => "hemoglobin",
            Feature::Inr => "inr",
            Feature::Potassium => "potassium",
            Feature::Creatinine => "creatinine",
            Feature::Ldh => "ldh",
            Feature::Leucocytes => "leucocytes",
            Feature::Lymphocytes => "lymphocytes",
            Feature::Monocytes => "monocytes",
            Feature::Sodium => "sodium",
            Feature::Neutrophils => "neutrophils",
            Feature::Platelets => "platelets",
        }
    }

    pub fn from_name(name: &str) -> Option<Feature> {
        Self::ALL.iter().copied().find(|f| f.name() == name)
    }

    /// Schema of the full 23-column model matrix.
    pub fn schema() -> FeatureSchema {
        FeatureSchema::new(
            Self::ALL.iter().map(|f| f.name().to_string()).collect(),
            Self::ALL.iter().map(|f| f.is_binary()).collect(),
        )
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    Female,
    Male,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Smoking {
    Never,
    Ever,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    NonLc,
    Lc,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Lc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    I,
    II,
    III,
    IV,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::I, Stage::II, Stage::III, Stage::IV];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::I => "I",
            Stage::II => "II",
            Stage::III => "III",
            Stage::IV => "IV",
        }
    }
}

impl FromStr for Stage {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "I" => Ok(Stage::I),
            "II" => Ok(Stage::II),
            "III" => Ok(Stage::III),
            "IV" => Ok(Stage::IV),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub age: u32,
    pub sex: Sex,
    pub smoking: Smoking,
    /// Indexed by [`Feature::lab_index`]; `None` is a missing analysis.
    pub labs: [Option<f64>; N_LABS],
    pub label: Label,
    pub stage: Option<Stage>,
}

impl PatientRecord {
    pub fn lab(&self, feature: Feature) -> Option<f64> {
        feature.lab_index().and_then(|i| self.labs[i])
    }

    /// Value of a model column; `None` only for a missing lab.
    pub fn value(&self, feature: Feature) -> Option<f64> {
        match feature {
            Feature::Age => Some(self.age as f64),
            Feature::Sex => Some(if self.sex == Sex::Female { 1.0 } else { 0.0 }),
            Feature::Smoking => Some(if self.smoking == Smoking::Ever { 1.0 } else { 0.0 }),
            lab => self.lab(lab),
        }
    }

    pub fn missing_count(&self) -> usize {
        self.labs.iter().filter(|v| v.is_none()).count()
    }

    pub fn validate(&self) -> Result<(), CohortError> {
        if self.age < 18 {
            return Err(CohortError::Integrity(format!("record {}: age {} below 18", self.id, self.age)));
        }
        for (f, v) in Feature::labs().iter().zip(self.labs.iter()) {
            if let Some(v) = v {
                if !v.is_finite() || *v <= 0.0 {
                    return Err(CohortError::Integrity(format!(
                        "record {}: {} must be finite and > 0, got {v}",
                        self.id, f
                    )));
                }
            }
        }
        if self.stage.is_some() && self.label != Label::Lc {
            return Err(CohortError::Integrity(format!("record {}: stage given for a non-LC record", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Ingested,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub records: Vec<PatientRecord>,
    pub provenance: Provenance,
    pub seed: Option<u64>,
}

impl Cohort {
    /// Validates every record and id uniqueness.
    pub fn new(records: Vec<PatientRecord>, provenance: Provenance, seed: Option<u64>) -> Result<Self, CohortError> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            r.validate()?;
            if !seen.insert(r.id.as_str()) {
                return Err(CohortError::Integrity(format!("duplicate id {}", r.id)));
            }
        }
        Ok(Self {
            records,
            provenance,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.records.iter().filter(|r| r.label.is_positive()).count()
    }

    pub fn prevalence(&self) -> Option<f64> {
        (!self.is_empty()).then(|| self.positives() as f64 / self.len() as f64)
    }

    pub fn labels(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.label.is_positive()).collect()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.id.as_str()).collect()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.id == id)
    }

    pub fn subset(&self, idx: &[usize]) -> Cohort {
        Cohort {
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            provenance: self.provenance,
            seed: self.seed,
        }
    }

    /// 23-column model matrix; missing labs become NaN.
    pub fn to_dataset<T: Scalar>(&self) -> Dataset<T> {
        let mut x = Matrix::zeros(self.len(), N_FEATURES);
        for (i, r) in self.records.iter().enumerate() {
            let row = x.row_mut(i);
            for (j, f) in Feature::ALL.iter().enumerate() {
                row[j] = r.value(*f).map_or(T::nan(), T::lit);
            }
        }
        Dataset::new(x, self.labels(), Feature::schema())
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn record(id: &str, label: Label, age: u32, lab_value: f64) -> PatientRecord {
        PatientRecord {
            id: id.to_string(),
            age,
            sex: Sex::Female,
            smoking: Smoking::Ever,
            labs: [Some(lab_value); N_LABS],
            label,
            stage: if label == Label::Lc { Some(Stage::II) } else { None },
        }
    }
}
