use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lcdes::cohort::{generate_synthetic, write_cohort};
use lcdes::eval::{load_votes, MeanSd, RankTestResult, ReaderComparison, Votes};
use lcdes::models::ModelKind;
use lcdes::pipeline::{
    ablation, evaluate_pipeline, explain_summary, force_plots, load_cohort_source, resolve_cohort_spec, train_pipeline,
    EvaluationReport, HoldoutReport, PipelineConfig, RankTests, TrainedPipeline,
};
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, load_manifest, load_saved_config, load_trained, write_file, write_json, Manifest};
use crate::{Cli, CliError, Command, GlobalArgs};

pub fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match cli.command {
        Command::Generate { n, spec } => generate(g, n, spec),
        Command::Train { models, cohort } => train(g, models, cohort),
        Command::Evaluate { holdout, votes } => evaluate(g, holdout, votes),
        Command::Explain { ids, ablation } => explain(g, &ids, ablation),
        Command::Compare { votes } => compare(g, votes),
    }
}

fn require_path(p: &Path, what: &str) -> Result<(), CliError> {
    if p.exists() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} {} does not exist", p.display())))
    }
}

fn config_file(g: &GlobalArgs) -> Result<Option<PipelineConfig>, CliError> {
    let Some(path) = &g.config else { return Ok(None) };
    require_path(path, "config file")?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    PipelineConfig::from_toml(&text)
        .map(Some)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn apply_overrides(cfg: &mut PipelineConfig, g: &GlobalArgs) {
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.output = o.clone();
    }
    if let Some(j) = g.jobs {
        cfg.jobs = j;
    }
}

fn fresh_config(g: &GlobalArgs) -> Result<PipelineConfig, CliError> {
    let mut cfg = config_file(g)?.unwrap_or_default();
    apply_overrides(&mut cfg, g);
    Ok(cfg)
}

/// Configuration and artifacts of a finished `train` run. An explicit
/// `--config` must agree with the training settings on record.
fn trained_run(g: &GlobalArgs) -> Result<(PipelineConfig, Manifest, TrainedPipeline), CliError> {
    let explicit = config_file(g)?;
    let root = g
        .out
        .clone()
        .or_else(|| explicit.as_ref().map(|c| c.output.clone()))
        .unwrap_or_else(|| PipelineConfig::default().output);
    let manifest = load_manifest(&root)?;
    let mut cfg = match explicit {
        Some(c) => c,
        None => load_saved_config(&root, &manifest)?,
    };
    apply_overrides(&mut cfg, g);
    cfg.output = root.clone();
    cfg.validate()?;
    let trained = load_trained(&root, &cfg, &manifest)?;
    Ok((cfg, manifest, trained))
}

fn cohort_csv(cohort: &lcdes::cohort::Cohort) -> Result<String, CliError> {
    let mut buf = Vec::new();
    write_cohort(cohort, &mut buf).map_err(|e| CliError::Pipeline(e.into()))?;
    Ok(String::from_utf8(buf).expect("cohort CSV is UTF-8"))
}

fn generate(g: &GlobalArgs, n: Option<usize>, spec: Option<PathBuf>) -> Result<(), CliError> {
    let mut cfg = fresh_config(g)?;
    if let Some(n) = n {
        cfg.cohort.n = Some(n);
    }
    if let Some(p) = spec {
        require_path(&p, "cohort spec")?;
        cfg.cohort.spec = Some(p);
    }
    let spec = resolve_cohort_spec(&cfg)?;
    let cohort = generate_synthetic(&spec, cfg.seed_for("cohort")).map_err(|e| CliError::Pipeline(e.into()))?;
    let root = &cfg.output;
    write_file(root, artifacts::COHORT_CSV, &cohort_csv(&cohort)?)?;
    write_json(root, "cohort_spec.json", &spec)?;
    println!(
        "wrote {} records ({} positive) to {}",
        cohort.len(),
        cohort.positives(),
        root.join(artifacts::COHORT_CSV).display()
    );
    Ok(())
}

fn train(g: &GlobalArgs, models: Option<Vec<String>>, cohort: Option<PathBuf>) -> Result<(), CliError> {
    let mut cfg = fresh_config(g)?;
    if let Some(list) = models {
        cfg.models = list
            .iter()
            .map(|s| s.trim().parse::<ModelKind>().map_err(CliError::Config))
            .collect::<Result<_, _>>()?;
        cfg.hyperparameters.retain(|k, _| cfg.models.contains(k));
    }
    if let Some(p) = cohort {
        cfg.cohort.path = Some(p);
    }
    if let Some(p) = &cfg.cohort.path {
        require_path(p, "cohort file")?;
    }
    if let Some(p) = &cfg.cohort.spec {
        require_path(p, "cohort spec")?;
    }
    cfg.validate()?;
    let cohort = load_cohort_source(&cfg)?;
    let trained = train_pipeline(&cohort, &cfg, None)?;
    let manifest = artifacts::save_trained(&cfg.output, &cfg, &trained, &cohort_csv(&cohort)?)?;
    // Records a votes file for `--votes` has to cover.
    let ids = trained.holdout.ids().into_iter().map(|id| vec![id.to_string()]);
    write_file(&cfg.output, "holdout_ids.csv", &csv_text(&["id"], ids))?;
    println!(
        "trained {} folds, {} model artifacts in {}",
        manifest.folds.len(),
        manifest.n_model_artifacts,
        cfg.output.display()
    );
    Ok(())
}

fn read_votes(path: Option<PathBuf>) -> Result<Option<Votes>, CliError> {
    let Some(p) = path else { return Ok(None) };
    require_path(&p, "votes file")?;
    load_votes(&p).map(Some).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
}

fn check_votes(trained: &TrainedPipeline, votes: Option<&Votes>) -> Result<(), CliError> {
    if let Some(v) = votes {
        v.align(&trained.holdout.ids())
            .map_err(|e| CliError::Config(format!("votes do not match the holdout records: {e}")))?;
    }
    Ok(())
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Plot-ready CSV companions of the report.
fn write_plot_data(root: &Path, report: &EvaluationReport) -> Result<(), CliError> {
    let mut metric_rows = Vec::new();
    for name in &report.models {
        for (metric, v) in &report.metrics_mean_sd[name] {
            metric_rows.push(vec![name.clone(), metric.clone(), v.mean.to_string(), opt(v.sd), v.n.to_string()]);
        }
    }
    write_file(root, "plots/metrics.csv", &csv_text(&["model", "metric", "mean", "sd", "n"], metric_rows))?;
    for name in &report.models {
        let roc = report.roc_points[name]
            .iter()
            .map(|p| vec![p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()]);
        write_file(root, &format!("plots/roc_{name}.csv"), &csv_text(&["threshold", "fpr", "tpr"], roc))?;
        let cal = report.calibration_bins[name].iter().map(|b| {
            vec![
                b.lower.to_string(),
                b.upper.to_string(),
                b.count.to_string(),
                opt(b.mean_predicted),
                opt(b.observed),
            ]
        });
        write_file(
            root,
            &format!("plots/calibration_{name}.csv"),
            &csv_text(&["lower", "upper", "count", "mean_predicted", "observed"], cal),
        )?;
        let dc = &report.decision_curve[name];
        let rows = (0..dc.thresholds.len()).map(|i| {
            vec![
                dc.thresholds[i].to_string(),
                dc.net_benefit_model[i].to_string(),
                dc.net_benefit_treat_all[i].to_string(),
                dc.net_benefit_treat_none[i].to_string(),
            ]
        });
        write_file(
            root,
            &format!("plots/decision_curve_{name}.csv"),
            &csv_text(&["threshold", "model", "treat_all", "treat_none"], rows),
        )?;
    }
    Ok(())
}

fn evaluate(g: &GlobalArgs, holdout: bool, votes: Option<PathBuf>) -> Result<(), CliError> {
    let votes = read_votes(votes)?;
    let (cfg, _, trained) = trained_run(g)?;
    check_votes(&trained, votes.as_ref())?;
    let report = evaluate_pipeline(&trained, &cfg, holdout, votes.as_ref())?;
    write_json(&cfg.output, "report.json", &report)?;
    write_plot_data(&cfg.output, &report)?;
    for name in &report.models {
        let m = &report.metrics_mean_sd[name];
        let show = |k: &str| m.get(k).map_or("-".to_string(), |v| format!("{:.3}±{:.3}", v.mean, v.sd.unwrap_or(0.0)));
        println!("{name:8} auc {}  f1 {}", show("roc_auc"), show("f1"));
    }
    println!("report written to {}", cfg.output.join("report.json").display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct AblationRow {
    n_features: usize,
    features: Vec<String>,
    f1: MeanSd,
}

#[derive(Debug, Serialize, Deserialize)]
struct AblationReport {
    config_hash: String,
    model: String,
    ranking: Vec<String>,
    points: Vec<AblationRow>,
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn explain(g: &GlobalArgs, ids: &[String], with_ablation: bool) -> Result<(), CliError> {
    let (cfg, _, trained) = trained_run(g)?;
    if let Some(bad) = ids
        .iter()
        .find(|id| trained.dev.position(id).is_none() && trained.holdout.position(id).is_none())
    {
        return Err(CliError::BadId(bad.clone()));
    }
    let root = &cfg.output;
    let summary = explain_summary(&trained, &cfg)?;
    write_json(root, "explain/shap_summary.json", &summary)?;
    println!("top features:");
    for f in summary.ranking.iter().take(5) {
        println!("  {:2}. {} ({:.4})", f.rank, f.feature, f.mean_abs_phi);
    }
    for plot in force_plots(&trained, &cfg, ids)? {
        let id = plot.id.clone().unwrap_or_default();
        write_json(root, &format!("explain/force_{}.json", file_stem(&id)), &plot)?;
        println!("force plot for {id}: base {:.4} -> output {:.4}", plot.base_value, plot.model_output);
    }
    if with_ablation {
        let names = &trained.dev_data.schema.names;
        let position: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let ranking: Vec<usize> = summary
            .ranking
            .iter()
            .map(|f| trained.features[position[f.feature.as_str()]])
            .collect();
        let cohort = lcdes::cohort::read_cohort(
            std::fs::read_to_string(root.join(artifacts::COHORT_CSV))
                .map_err(|e| CliError::io(&root.join(artifacts::COHORT_CSV), e))?
                .as_bytes(),
        )
        .map_err(|e| CliError::Corrupt(root.join(artifacts::COHORT_CSV), e.to_string()))?;
        let all = lcdes::cohort::Feature::schema().names;
        let points = ablation(&cohort, &cfg, &ranking)?;
        let report = AblationReport {
            config_hash: cfg.hash(),
            model: summary.model.clone(),
            ranking: ranking.iter().map(|&j| all[j].clone()).collect(),
            points: points
                .into_iter()
                .map(|p| AblationRow {
                    n_features: p.n_features,
                    features: p.features.iter().map(|&j| all[j].clone()).collect(),
                    f1: p.f1,
                })
                .collect(),
        };
        write_json(root, "explain/ablation.json", &report)?;
        for p in &report.points {
            println!("{:2} features: f1 {:.3}", p.n_features, p.f1.mean);
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct Comparison {
    config_hash: String,
    models: Vec<String>,
    final_model: String,
    cross_validation: BTreeMap<String, BTreeMap<String, MeanSd>>,
    rank_tests: Option<RankTests>,
    holdout: HoldoutReport,
    reader_comparison: Option<ReaderComparison>,
}

fn compare(g: &GlobalArgs, votes: Option<PathBuf>) -> Result<(), CliError> {
    let votes = read_votes(votes)?;
    let (cfg, _, trained) = trained_run(g)?;
    if trained.holdout.is_empty() {
        return Err(CliError::Config("compare needs holdout_n > 0".into()));
    }
    check_votes(&trained, votes.as_ref())?;
    let report = evaluate_pipeline(&trained, &cfg, true, votes.as_ref())?;
    let holdout = report.holdout.expect("holdout requested");
    let c = Comparison {
        config_hash: report.config_hash,
        final_model: trained.final_model_name(),
        models: report.models,
        cross_validation: report.metrics_mean_sd,
        rank_tests: report.rank_tests,
        holdout,
        reader_comparison: report.reader_comparison,
    };
    write_json(&cfg.output, "comparison.json", &c)?;
    for r in &c.holdout.models {
        println!(
            "{:8} holdout sens {}  spec {}",
            r.model,
            opt(r.metrics.sensitivity),
            opt(r.metrics.specificity)
        );
    }
    if let Some(t) = &c.rank_tests {
        print_rank_tests(&t.models, &t.result);
    }
    if let Some(rc) = &c.reader_comparison {
        let m = &rc.model.metrics;
        println!(
            "readers (majority) sens {} spec {}; model at that specificity sens {}",
            opt(rc.majority.metrics.sensitivity),
            opt(rc.majority.metrics.specificity),
            opt(m.sensitivity)
        );
    }
    Ok(())
}

fn print_rank_tests(models: &[String], r: &RankTestResult) {
    println!("friedman p = {:.4}, critical difference {:.3}", r.friedman_p_value, r.critical_difference);
    for (i, j) in r.significant_pairs() {
        println!("  {} vs {}: p = {:.4}", models[i], models[j], r.nemenyi_p_values[i][j]);
    }
}
