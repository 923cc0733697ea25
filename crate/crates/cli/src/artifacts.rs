//! On-disk layout of a training run: JSON artifacts referenced from one
//! manifest by relative path and SHA-256.

use std::fs;
use std::path::{Path, PathBuf};

use lcdes::cohort::Feature;
use lcdes::des::{DesConfig, DesEnsemble};
use lcdes::models::{ClassifierModel, ModelKind};
use lcdes::pipeline::{development_split, FoldModels, FoldStats, PipelineConfig, TrainedPipeline, DES_NAME};
use lcdes::preprocess::FittedPreprocessor;
use lcdes::seed::sha256_hex;
use lcdes::Matrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const COHORT_CSV: &str = "cohort.csv";
pub const CONFIG_JSON: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRef {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRef {
    /// Model kind, or `des` for the ensemble.
    pub kind: String,
    pub name: String,
    #[serde(flatten)]
    pub artifact: ArtifactRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldEntry {
    pub fold: usize,
    pub stats: FoldStats,
    /// Development-set row indices of the validation fold.
    pub val: Vec<usize>,
    pub preprocessor: ArtifactRef,
    pub models: Vec<ModelRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub training_hash: String,
    pub seed: u64,
    pub features: Vec<String>,
    pub cohort: ArtifactRef,
    pub config: ArtifactRef,
    pub n_model_artifacts: usize,
    pub folds: Vec<FoldEntry>,
}

/// Ensemble state stored next to, not inside, its pool artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesArtifact {
    pub format_version: u32,
    #[serde(flatten)]
    pub config: DesConfig,
    pub pool: Vec<ArtifactRef>,
    pub dsel_x: Matrix<f64>,
    pub dsel_y: Vec<bool>,
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serialises");
    s.push('\n');
    s
}

pub fn write_file(root: &Path, rel: &str, contents: &str) -> Result<ArtifactRef, CliError> {
    let path = root.join(rel);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
    Ok(ArtifactRef {
        path: rel.to_string(),
        sha256: sha256_hex(contents.as_bytes()),
    })
}

pub fn write_json<T: Serialize>(root: &Path, rel: &str, value: &T) -> Result<ArtifactRef, CliError> {
    write_file(root, rel, &to_json(value))
}

/// Reads a referenced file and checks its hash.
pub fn read_verified(root: &Path, r: &ArtifactRef) -> Result<String, CliError> {
    let path = root.join(&r.path);
    let text = read_required(&path)?;
    let found = sha256_hex(text.as_bytes());
    if found != r.sha256 {
        return Err(CliError::Integrity {
            path,
            expected: r.sha256.clone(),
            found,
        });
    }
    Ok(text)
}

pub fn read_required(path: &Path) -> Result<String, CliError> {
    match fs::read_to_string(path) {
        Ok(t) => Ok(t),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(CliError::Missing(path.to_path_buf())),
        Err(e) => Err(CliError::io(path, e)),
    }
}

fn parse<T: DeserializeOwned>(path: &str, text: &str) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Corrupt(PathBuf::from(path), e.to_string()))
}

pub fn save_trained(root: &Path, cfg: &PipelineConfig, trained: &TrainedPipeline, cohort_csv: &str) -> Result<Manifest, CliError> {
    let cohort = write_file(root, COHORT_CSV, cohort_csv)?;
    let config = write_json(root, CONFIG_JSON, &cfg.portable())?;
    let mut folds = Vec::new();
    let mut n_models = 0;
    for f in &trained.folds {
        let dir = format!("folds/fold_{}", f.stats.fold);
        let preprocessor = write_file(root, &format!("{dir}/preprocessor.json"), &format!("{}\n", f.preprocessor.to_json()))?;
        let mut models = Vec::new();
        for m in &f.models {
            let kind = m.kind();
            let artifact = write_file(root, &format!("{dir}/{kind}.json"), &format!("{}\n", m.to_json()))?;
            models.push(ModelRef {
                kind: kind.to_string(),
                name: kind.label().to_string(),
                artifact,
            });
        }
        if let Some(d) = &f.des {
            let snap = d.snapshot();
            let des = DesArtifact {
                format_version: MANIFEST_FORMAT_VERSION,
                config: snap.config,
                pool: models.iter().map(|m| m.artifact.clone()).collect(),
                dsel_x: snap.dsel_x,
                dsel_y: snap.dsel_y,
            };
            models.push(ModelRef {
                kind: "des".into(),
                name: DES_NAME.into(),
                artifact: write_json(root, &format!("{dir}/des.json"), &des)?,
            });
        }
        n_models += models.len();
        folds.push(FoldEntry {
            fold: f.stats.fold,
            stats: f.stats.clone(),
            val: f.val.clone(),
            preprocessor,
            models,
        });
    }
    let manifest = Manifest {
        format_version: MANIFEST_FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        training_hash: cfg.training_hash(),
        seed: cfg.seed,
        features: trained.dev_data.schema.names.clone(),
        cohort,
        config,
        n_model_artifacts: n_models,
        folds,
    };
    write_json(root, MANIFEST, &manifest)?;
    Ok(manifest)
}

pub fn load_manifest(root: &Path) -> Result<Manifest, CliError> {
    let text = read_required(&root.join(MANIFEST))?;
    let m: Manifest = parse(MANIFEST, &text)?;
    if m.format_version != MANIFEST_FORMAT_VERSION {
        return Err(CliError::Corrupt(
            root.join(MANIFEST),
            format!("unsupported manifest version {}", m.format_version),
        ));
    }
    Ok(m)
}

/// The configuration saved by `train`.
pub fn load_saved_config(root: &Path, manifest: &Manifest) -> Result<PipelineConfig, CliError> {
    let text = read_verified(root, &manifest.config)?;
    parse(CONFIG_JSON, &text)
}

/// Rebuilds the trained pipeline, verifying every referenced hash.
pub fn load_trained(root: &Path, cfg: &PipelineConfig, manifest: &Manifest) -> Result<TrainedPipeline, CliError> {
    if cfg.training_hash() != manifest.training_hash {
        return Err(CliError::Config(
            "configuration does not match the trained artifacts (training settings or seed differ)".into(),
        ));
    }
    let csv = read_verified(root, &manifest.cohort)?;
    let cohort = lcdes::cohort::read_cohort(csv.as_bytes()).map_err(|e| CliError::Corrupt(root.join(COHORT_CSV), e.to_string()))?;
    let (dev, holdout) = development_split(&cohort, cfg)?;
    let features = manifest
        .features
        .iter()
        .map(|n| {
            Feature::from_name(n)
                .map(Feature::index)
                .ok_or_else(|| CliError::Corrupt(root.join(MANIFEST), format!("unknown feature {n:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut folds = Vec::new();
    for entry in &manifest.folds {
        let preprocessor: FittedPreprocessor<f64> = parse(&entry.preprocessor.path, &read_verified(root, &entry.preprocessor)?)?;
        let mut models = Vec::new();
        let mut des = None;
        for m in &entry.models {
            let text = read_verified(root, &m.artifact)?;
            if m.kind == "des" {
                let a: DesArtifact = parse(&m.artifact.path, &text)?;
                let pool = a
                    .pool
                    .iter()
                    .map(|r| {
                        ClassifierModel::<f64>::from_json(&read_verified(root, r)?)
                            .map_err(|e| CliError::Corrupt(root.join(&r.path), e.to_string()))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let snapshot = lcdes::des::DesSnapshot {
                    config: a.config,
                    dsel_x: a.dsel_x,
                    dsel_y: a.dsel_y,
                };
                des = Some(DesEnsemble::from_snapshot(pool, snapshot).map_err(|e| CliError::Corrupt(root.join(&m.artifact.path), e.to_string()))?);
            } else {
                let model = ClassifierModel::<f64>::from_json(&text).map_err(|e| CliError::Corrupt(root.join(&m.artifact.path), e.to_string()))?;
                let kind: ModelKind = m.kind.parse().map_err(|e: String| CliError::Corrupt(root.join(MANIFEST), e))?;
                if model.kind() != kind {
                    return Err(CliError::Corrupt(root.join(&m.artifact.path), format!("expected a {kind} model")));
                }
                models.push(model);
            }
        }
        if entry.val.iter().any(|&i| i >= dev.len()) {
            return Err(CliError::Corrupt(root.join(MANIFEST), "validation index outside the development set".into()));
        }
        folds.push(FoldModels {
            stats: entry.stats.clone(),
            val: entry.val.clone(),
            preprocessor,
            models,
            des,
        });
    }
    if folds.is_empty() {
        return Err(CliError::Corrupt(root.join(MANIFEST), "no folds".into()));
    }
    Ok(TrainedPipeline::new(dev, holdout, features, folds))
}
