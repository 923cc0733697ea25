use lcdes::cohort::{generate_synthetic, read_cohort, stratified_holdout, write_cohort, CohortSpec};
use lcdes::des::{build_des, DesConfig, DesMethod};
use lcdes::eval::{
    calibration_bins, confusion, decision_curve, metrics, roc_auc, roc_curve, stratified_folds, threshold_at_specificity,
};
use lcdes::explain::{exact_shapley, kernel_shap};
use lcdes::models::{train, ClassifierModel, ModelKind, Predictor};
use lcdes::preprocess::{fit_imputer, fit_scaler, iqr_bounds, undersample_indices, ImputeStrategy};
use lcdes::seed::derive_seed;
use lcdes::stats::{rank_sum_test, spearman};
use lcdes::{Dataset, FeatureSchema, Matrix};
use proptest::prelude::*;

fn labelled_scores(max: usize) -> impl Strategy<Value = (Vec<bool>, Vec<f64>)> {
    (2..max).prop_flat_map(|n| {
        (
            prop::collection::vec(any::<bool>(), n).prop_map(|mut y| {
                y[0] = true;
                y[1] = false;
                y
            }),
            prop::collection::vec(0u8..20, n).prop_map(|v| v.into_iter().map(|k| k as f64 / 20.0).collect()),
        )
    })
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix<f64>> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auc_is_rank_based((y, p) in labelled_scores(40)) {
        let auc = roc_auc(&y, &p).unwrap();
        prop_assert!((0.0..=1.0).contains(&auc));
        let squashed: Vec<f64> = p.iter().map(|v| v.powi(3) * 0.5 + 0.1).collect();
        prop_assert!((roc_auc(&y, &squashed).unwrap() - auc).abs() < 1e-12);
        let flipped: Vec<f64> = p.iter().map(|v| 1.0 - v).collect();
        prop_assert!((roc_auc(&y, &flipped).unwrap() - (1.0 - auc)).abs() < 1e-12);
    }

    #[test]
    fn roc_curve_is_monotone_and_matches_auc((y, p) in labelled_scores(40)) {
        let pts = roc_curve(&y, &p).unwrap();
        prop_assert_eq!((pts[0].fpr, pts[0].tpr), (0.0, 0.0));
        let last = pts.last().unwrap();
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        let mut area = 0.0;
        for w in pts.windows(2) {
            prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            prop_assert!(w[1].threshold < w[0].threshold);
            area += (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0;
        }
        prop_assert!((area - roc_auc(&y, &p).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn confusion_partitions_records((y, p) in labelled_scores(40), t in 0.0f64..1.0) {
        let c = confusion(&y, &p, t).unwrap();
        prop_assert_eq!(c.total(), y.len());
        prop_assert_eq!(c.tp + c.fn_, y.iter().filter(|&&v| v).count());
        let m = metrics(&c);
        for v in [m.accuracy, m.sensitivity, m.specificity, m.ppv, m.f1].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn calibration_bins_cover_every_record((y, p) in labelled_scores(60), w in prop::sample::select(vec![0.05, 0.1, 0.2, 0.25, 0.5])) {
        let bins = calibration_bins(&y, &p, w).unwrap();
        prop_assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), y.len());
        for b in &bins {
            prop_assert_eq!(b.count == 0, b.observed.is_none());
            if let Some(m) = b.mean_predicted {
                prop_assert!(m >= b.lower - 1e-12 && m <= b.upper + 1e-12);
            }
        }
    }

    #[test]
    fn decision_curve_bounds((y, p) in labelled_scores(60)) {
        let grid: Vec<f64> = (1..20).map(|i| i as f64 / 20.0).collect();
        let dc = decision_curve(&y, &p, &grid).unwrap();
        for i in 0..grid.len() {
            prop_assert!(dc.net_benefit_model[i] <= dc.prevalence + 1e-12);
            prop_assert_eq!(dc.net_benefit_treat_none[i], 0.0);
            // Treat-all is the model that flags everyone.
            let all = decision_curve(&y, &vec![1.0; y.len()], &grid[i..=i]).unwrap();
            prop_assert!((all.net_benefit_model[0] - dc.net_benefit_treat_all[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn specificity_target_is_met((y, p) in labelled_scores(60), target in 0.0f64..=1.0) {
        let op = threshold_at_specificity(&y, &p, target).unwrap();
        prop_assert!(op.specificity >= target - 5e-4);
        let c = confusion(&y, &p, op.threshold).unwrap();
        prop_assert_eq!(metrics(&c).specificity, Some(op.specificity));
    }

    #[test]
    fn folds_partition_and_stratify(n in 20usize..300, k in 2usize..8, seed in any::<u64>(), frac in 0.1f64..0.9) {
        let pos = ((n as f64 * frac) as usize).clamp(k, n - k);
        let y: Vec<bool> = (0..n).map(|i| i < pos).collect();
        let folds = stratified_folds(&y, k, seed).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for f in &folds {
            let p = f.iter().filter(|&&i| y[i]).count() as f64;
            prop_assert!((p - pos as f64 / n as f64 * f.len() as f64).abs() <= 1.0);
        }
        prop_assert_eq!(folds, stratified_folds(&y, k, seed).unwrap());
    }

    #[test]
    fn undersampling_balances(y in prop::collection::vec(any::<bool>(), 2..200), seed in any::<u64>()) {
        let pos = y.iter().filter(|&&v| v).count();
        prop_assume!(pos > 0 && pos < y.len());
        let keep = undersample_indices(&y, seed).unwrap();
        let kept_pos = keep.iter().filter(|&&i| y[i]).count();
        prop_assert_eq!(kept_pos * 2, keep.len());
        prop_assert!(keep.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn iqr_fences_bracket_the_quartiles(v in prop::collection::vec(-1e3f64..1e3, 4..100)) {
        let b = iqr_bounds(&v).unwrap();
        prop_assert!(b.lower <= b.upper);
        let mut s = v.clone();
        s.sort_by(f64::total_cmp);
        let median = (s[(s.len() - 1) / 2] + s[s.len() / 2]) / 2.0;
        prop_assert!(b.contains(median));
    }

    #[test]
    fn imputation_and_scaling(x in matrix(12, 3), holes in prop::collection::vec(any::<bool>(), 36)) {
        let schema = FeatureSchema::continuous(3);
        let mut m = x.clone();
        for (i, &h) in holes.iter().enumerate() {
            // The first two rows stay observed so every column has data.
            if h && i >= 6 {
                m.set(i / 3, i % 3, f64::NAN);
            }
        }
        for strategy in [ImputeStrategy::Median, ImputeStrategy::Mean, ImputeStrategy::Knn { k: 3 }] {
            let imp = fit_imputer(&m, &schema, strategy).unwrap();
            let filled = imp.apply(&m).unwrap();
            prop_assert!(!filled.has_missing());
            for i in 0..12 {
                for j in 0..3 {
                    if !m.get(i, j).is_nan() {
                        prop_assert_eq!(filled.get(i, j), m.get(i, j));
                    }
                }
            }
            if let Ok(s) = fit_scaler(&filled, &schema) {
                let z = s.apply(&filled).unwrap();
                for j in 0..3 {
                    let col = z.column(j);
                    let mean = col.iter().sum::<f64>() / 12.0;
                    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 12.0;
                    prop_assert!(mean.abs() < 1e-12);
                    prop_assert!((var - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn rank_statistics(a in prop::collection::vec(-10.0f64..10.0, 2..30), b in prop::collection::vec(-10.0f64..10.0, 2..30)) {
        let t = rank_sum_test(&a, &b);
        prop_assert!((0.0..=1.0).contains(&t.p_value));
        let idx: Vec<f64> = (0..a.len()).map(|i| i as f64).collect();
        let mut sorted = a.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        if sorted.len() == a.len() {
            prop_assert!((spearman(&idx, &idx.iter().map(|v| v.exp()).collect::<Vec<_>>()).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn seeds_depend_on_label(root in any::<u64>(), a in "[a-z]{1,8}", b in "[a-z]{1,8}") {
        prop_assert_eq!(derive_seed(root, &a), derive_seed(root, &a));
        if a != b {
            prop_assert_ne!(derive_seed(root, &a), derive_seed(root, &b));
        }
    }
}

/// Pool of smooth members over two features, each `(w0, w1, bias)`.
fn pool_strategy() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -1.0f64..1.0), 2..5)
}

type Member = Box<dyn Fn(&[f64]) -> f64 + Sync>;

fn members(spec: &[(f64, f64, f64)]) -> Vec<Member> {
    spec.iter()
        .map(|&(a, b, c)| Box::new(move |x: &[f64]| 1.0 / (1.0 + (-(a * x[0] + b * x[1] + c)).exp())) as Member)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn des_output_is_a_convex_combination(
        spec in pool_strategy(),
        dsel in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 6..50),
        k in 1usize..6,
        q in (-1.5f64..1.5, -1.5f64..1.5),
        method in prop::sample::select(DesMethod::ALL.to_vec()),
    ) {
        let rows: Vec<[f64; 2]> = dsel.iter().map(|&(a, b)| [a, b]).collect();
        let mut y: Vec<bool> = rows.iter().map(|r| r[0] > r[1]).collect();
        y[0] = true;
        y[1] = false;
        let cfg = DesConfig { method, k, ..DesConfig::default() };
        let ens = build_des(members(&spec), Matrix::from_rows(&rows), y, cfg).unwrap();
        let q = [q.0, q.1];
        let w = ens.selection_weights(&q);
        prop_assert!(w.iter().all(|&v| v >= 0.0) && w.iter().any(|&v| v > 0.0));
        if matches!(method, DesMethod::Ola | DesMethod::Mcb | DesMethod::APriori) {
            prop_assert_eq!(w.iter().filter(|&&v| v > 0.0).count(), 1);
        }
        let probs: Vec<f64> = ens.pool().iter().map(|m| m(&q[..])).collect();
        let p = ens.predict_proba(&q);
        let lo = probs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(p >= lo - 1e-15 && p <= hi + 1e-15);
        let nn = ens.neighbors(&q);
        prop_assert_eq!(nn.len(), k);
        prop_assert!(nn.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn des_of_identical_members_is_that_member(
        member in (-3.0f64..3.0, -3.0f64..3.0, -1.0f64..1.0),
        copies in 2usize..5,
        q in (-1.5f64..1.5, -1.5f64..1.5),
        method in prop::sample::select(DesMethod::ALL.to_vec()),
    ) {
        let rows: Vec<[f64; 2]> = (0..20).map(|i| [(i as f64 / 10.0) - 1.0, ((i * 7 % 20) as f64 / 10.0) - 1.0]).collect();
        let y: Vec<bool> = (0..20).map(|i| i % 3 == 0).collect();
        let pool = members(&vec![member; copies]);
        let cfg = DesConfig { method, k: 5, ..DesConfig::default() };
        let ens = build_des(pool, Matrix::from_rows(&rows), y, cfg).unwrap();
        let q = [q.0, q.1];
        let single = &members(&[member])[0];
        prop_assert!((ens.predict_proba(&q) - single(&q[..])).abs() < 1e-15);
    }
}

fn interaction_model(w: Vec<f64>, c: f64) -> impl Fn(&[f64]) -> f64 + Sync {
    move |x: &[f64]| {
        let z: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + c * x[0] * x[x.len() - 1];
        1.0 / (1.0 + (-z).exp())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn kernel_at_full_enumeration_is_exact(
        (d, w, q, bg) in (1usize..=10).prop_flat_map(|d| (
            Just(d),
            prop::collection::vec(-2.0f64..2.0, d),
            prop::collection::vec(-2.0f64..2.0, d),
            matrix(4, d),
        )),
        c in -1.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let model = interaction_model(w, c);
        let exact = exact_shapley(&model, &q, &bg).unwrap();
        let kernel = kernel_shap(&model, &q, &bg, (1usize << d).max(d + 2), seed).unwrap();
        let l1: f64 = exact.phi.iter().zip(&kernel.phi).map(|(a, b)| (a - b).abs()).sum();
        prop_assert!(l1 <= 1e-6, "L1 {}", l1);
        prop_assert!(exact.efficiency_gap() <= 1e-9);
        prop_assert!(kernel.efficiency_gap() <= 1e-9);
        prop_assert_eq!(exact.base_value, kernel.base_value);
    }

    #[test]
    fn shapley_axioms(
        (d, q, bg) in (2usize..=8).prop_flat_map(|d| (Just(d), prop::collection::vec(-2.0f64..2.0, d), matrix(3, d))),
        a in -2.0f64..2.0,
    ) {
        // Dummy: features past the first two do not enter the model.
        let model = move |x: &[f64]| (a * x[0] * x[1]).tanh();
        let e = exact_shapley(&model, &q, &bg).unwrap();
        for j in 2..d {
            prop_assert!(e.phi[j].abs() < 1e-15);
        }
        // Constant model: every attribution vanishes.
        let constant = |_: &[f64]| 0.3;
        let e = exact_shapley(&constant, &q, &bg).unwrap();
        prop_assert!(e.phi.iter().all(|&v| v.abs() < 1e-15));
        let k = kernel_shap(&constant, &q, &bg, 64, 1).unwrap();
        prop_assert!(k.phi.iter().all(|&v| v.abs() < 1e-12));
        // Symmetry: swapping two features' roles swaps their attributions.
        let sym = move |x: &[f64]| (x[0] + x[1]).sin();
        let mut q2 = q.clone();
        q2[1] = q[0];
        let mut bg2 = bg.clone();
        for i in 0..bg.nrows() {
            bg2.set(i, 1, bg.get(i, 0));
        }
        let e = exact_shapley(&sym, &q2, &bg2).unwrap();
        prop_assert!((e.phi[0] - e.phi[1]).abs() < 1e-12);
    }
}

fn tiny_dataset(seed: u64) -> Dataset<f64> {
    let spec = CohortSpec { n: 300, ..CohortSpec::default() };
    let ds = generate_synthetic(&spec, seed).unwrap().to_dataset::<f64>();
    let imputer = fit_imputer(&ds.x, &ds.schema, ImputeStrategy::Median).unwrap();
    let x = imputer.apply(&ds.x).unwrap();
    let x = fit_scaler(&x, &ds.schema).unwrap().apply(&x).unwrap();
    Dataset::new(x, ds.y, ds.schema)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn models_round_trip_and_output_probabilities(seed in any::<u64>(), kind in prop::sample::select(ModelKind::ALL.to_vec())) {
        let data = tiny_dataset(seed);
        let mut params = kind.default_params();
        if matches!(kind, ModelKind::GbdtDepthwise | ModelKind::GbdtLeafwise) {
            params.set("n_estimators", 30.0).unwrap();
        }
        let model = train(&params, &data, seed).unwrap();
        let back = ClassifierModel::<f64>::from_json(&model.to_json()).unwrap();
        prop_assert_eq!(&back, &model);
        for row in data.x.rows_iter().take(50) {
            let p = model.predict_proba(row);
            prop_assert!(p > 0.0 && p < 1.0);
            prop_assert_eq!(p.to_bits(), back.predict_proba(row).to_bits());
        }
        prop_assert_eq!(train(&params, &data, seed).unwrap(), model);
    }

    #[test]
    fn single_precision_models_track_double(seed in any::<u64>()) {
        let data = tiny_dataset(seed);
        let x32 = data.x.map(|v| v as f32);
        let d32 = Dataset::new(x32, data.y.clone(), data.schema.clone());
        let params = ModelKind::Logistic.default_params();
        let m64 = train(&params, &data, seed).unwrap();
        let m32 = train(&params, &d32, seed).unwrap();
        for (r64, r32) in data.x.rows_iter().zip(d32.x.rows_iter()).take(50) {
            prop_assert!((m64.predict_proba(r64) - m32.predict_proba(r32) as f64).abs() < 1e-3);
        }
    }

    #[test]
    fn cohort_csv_round_trip_and_holdout(seed in any::<u64>(), holdout in 20usize..100) {
        let spec = CohortSpec { n: 400, ..CohortSpec::default() };
        let cohort = generate_synthetic(&spec, seed).unwrap();
        let mut buf = Vec::new();
        write_cohort(&cohort, &mut buf).unwrap();
        let back = read_cohort(buf.as_slice()).unwrap();
        prop_assert_eq!(&back.records, &cohort.records);
        let (dev, test) = stratified_holdout(&cohort, holdout, seed).unwrap();
        prop_assert_eq!(dev.len() + test.len(), cohort.len());
        let expected = (holdout as f64 * cohort.positives() as f64 / cohort.len() as f64).round() as usize;
        prop_assert_eq!(test.positives(), expected);
    }
}
