mod common;

use common::ridge::{gd_oracle, normal_matrix};

use std::collections::BTreeMap;

use regionvec_core::downstream::{self, EvalConfig, Metrics, RunEval, Standardizer, TaskEval};
use regionvec_core::graph::{parse_combinations, View};
use regionvec_core::rng::SplitMix64;
use regionvec_core::synth::{generate_city, SynthSpec};
use regionvec_core::trainer::TrainConfig;
use regionvec_core::{Error, Matrix};

#[test]
fn ridge_matches_iterative_minimizer() {
    let mut rng = SplitMix64::new(42);
    for problem in 0..20 {
        let lambda = [0.1, 1.0, 10.0][problem % 3];
        let x = normal_matrix(&mut rng, 50, 5);
        let y: Vec<f64> = (0..50)
            .map(|i| x.row(i).iter().sum::<f64>() + rng.normal())
            .collect();
        let model = downstream::ridge_fit(&x, &y, lambda).unwrap();
        let oracle = gd_oracle(&x, &y, lambda);
        for (a, b) in model.coefficients.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6, "problem {problem}: {a} vs {b}");
        }
    }
}

#[test]
fn ridge_small_cases() {
    let x = Matrix::identity(2);
    let fit = downstream::ridge_fit(&x, &[1.0, 2.0], 1.0).unwrap();
    // Centered y = (−0.5, 0.5); (I + I)⁻¹ halves it.
    for (c, e) in fit.coefficients.iter().zip([-0.25, 0.25]) {
        assert!((c - e).abs() < 1e-15);
    }
    assert_eq!(fit.intercept, 1.5);

    let x = Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]).unwrap();
    assert_eq!(
        downstream::ridge_fit(&x, &[1.0, 2.0, 3.0], 0.0),
        Err(Error::SingularSystem)
    );
}

#[test]
fn metric_identities() {
    let m = downstream::metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
    assert_eq!(
        m,
        Metrics {
            mae: 0.0,
            rmse: 0.0,
            r2: Some(1.0)
        }
    );

    let y = [0.3, 1.7, -2.0, 5.5, 0.0];
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    assert_eq!(downstream::metrics(&y, &[mean; 5]).unwrap().r2, Some(0.0));

    let m = downstream::metrics(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
    assert_eq!((m.mae, m.rmse, m.r2), (1.0, 1.0, None));
}

#[test]
fn train_mean_predictor_on_training_fold_scores_zero() {
    let mut rng = SplitMix64::new(5);
    for _ in 0..20 {
        let y: Vec<f64> = (0..17).map(|_| rng.normal() * 10.0).collect();
        let x = Matrix::zeros(17, 2);
        let fit = downstream::ridge_fit(&x, &y, 1.0).unwrap();
        assert_eq!(
            downstream::metrics(&y, &fit.predict(&x)).unwrap().r2,
            Some(0.0)
        );
    }
}

#[test]
fn predictions_ignore_positive_column_rescaling() {
    let mut rng = SplitMix64::new(9);
    for _ in 0..20 {
        let train = normal_matrix(&mut rng, 30, 4);
        let test = normal_matrix(&mut rng, 10, 4);
        let y: Vec<f64> = (0..30).map(|_| rng.normal()).collect();
        let scales: Vec<f64> = (0..4).map(|_| rng.uniform(0.01, 100.0)).collect();
        let rescale =
            |m: &Matrix| Matrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)] * scales[j]);
        let predict = |tr: &Matrix, te: &Matrix| {
            let s = Standardizer::fit(tr);
            downstream::ridge_fit(&s.apply(tr), &y, 1.0)
                .unwrap()
                .predict(&s.apply(te))
        };
        let a = predict(&train, &test);
        let b = predict(&rescale(&train), &rescale(&test));
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-10);
        }
    }
}

fn select(m: &Matrix, rows: &[usize]) -> Matrix {
    Matrix::from_rows(&rows.iter().map(|&i| m.row(i)).collect::<Vec<_>>()).unwrap()
}

#[test]
fn standardization_uses_training_rows_only() {
    let mut rng = SplitMix64::new(3);
    let n = 40;
    let cfg = EvalConfig::default();
    let folds = downstream::kfold_split(n, cfg.folds, cfg.seed).unwrap();
    let test = &folds[0];
    let train: Vec<usize> = folds[1..].concat();
    // The canary column is extreme only on fold 0's test rows.
    let e = Matrix::from_fn(n, 3, |i, j| {
        if j == 2 && test.contains(&i) {
            1e6
        } else {
            rng.normal()
        }
    });
    let labels: Vec<Option<f64>> = (0..n).map(|i| Some(e[(i, 0)] - e[(i, 1)])).collect();
    let y: Vec<f64> = labels.iter().map(|v| v.unwrap()).collect();
    let score = |s: &Standardizer| {
        let fit = downstream::ridge_fit(
            &s.apply(&select(&e, &train)),
            &train.iter().map(|&i| y[i]).collect::<Vec<_>>(),
            cfg.ridge_lambda,
        )
        .unwrap();
        downstream::metrics(
            &test.iter().map(|&i| y[i]).collect::<Vec<_>>(),
            &fit.predict(&s.apply(&select(&e, test))),
        )
        .unwrap()
    };
    let clean = score(&Standardizer::fit(&select(&e, &train)));
    let leaky = score(&Standardizer::fit(&e));
    let eval = downstream::evaluate(&e, &labels, "t", &cfg).unwrap();
    assert_eq!(eval.folds[0], clean);
    assert_ne!(eval.folds[0], leaky);
}

#[test]
fn label_as_feature_is_nearly_perfect() {
    let mut rng = SplitMix64::new(12);
    let n = 60;
    let y: Vec<f64> = (0..n).map(|_| rng.normal() * 3.0 + 1.0).collect();
    let e = Matrix::from_fn(n, 4, |i, j| if j == 1 { y[i] } else { rng.normal() });
    let labels: Vec<Option<f64>> = y.iter().map(|&v| Some(v)).collect();
    let cfg = EvalConfig {
        ridge_lambda: 1e-8,
        ..EvalConfig::default()
    };
    let r2 = downstream::evaluate(&e, &labels, "t", &cfg)
        .unwrap()
        .mean
        .r2
        .unwrap();
    assert!(r2 > 0.99, "{r2}");
}

#[test]
fn noise_features_do_not_predict() {
    let mut rng = SplitMix64::new(77);
    let n = 100;
    let e = normal_matrix(&mut rng, n, 8);
    let labels: Vec<Option<f64>> = (0..n).map(|_| Some(rng.normal())).collect();
    let cfg = EvalConfig::default();
    let eval = downstream::evaluate(&e, &labels, "t", &cfg).unwrap();
    assert!(eval.mean.r2.unwrap() <= 0.1, "{:?}", eval.mean.r2);
    assert_eq!(eval, downstream::evaluate(&e, &labels, "t", &cfg).unwrap());
}

#[test]
fn missing_labels_are_masked() {
    let mut rng = SplitMix64::new(1);
    let e = normal_matrix(&mut rng, 12, 2);
    let mut labels: Vec<Option<f64>> = (0..12).map(|i| Some(i as f64)).collect();
    labels[3] = None;
    labels[7] = None;
    let cfg = EvalConfig {
        folds: 10,
        ..EvalConfig::default()
    };
    assert_eq!(
        downstream::evaluate(&e, &labels, "t", &cfg)
            .unwrap()
            .folds
            .len(),
        10
    );
    let cfg = EvalConfig { folds: 11, ..cfg };
    assert_eq!(
        downstream::evaluate(&e, &labels, "t", &cfg),
        Err(Error::InvalidFolds { k: 11, n: 10 })
    );
}

fn fake_eval(r2s: &[Option<f64>]) -> TaskEval {
    let folds: Vec<Metrics> = r2s
        .iter()
        .enumerate()
        .map(|(k, &r2)| Metrics {
            mae: k as f64,
            rmse: 2.0 * k as f64,
            r2,
        })
        .collect();
    let mean = Metrics {
        mae: 0.0,
        rmse: 0.0,
        r2: downstream::mean_defined(r2s.iter().copied()),
    };
    TaskEval { folds, mean }
}

#[test]
fn report_rows_sort_descending_with_undefined_last() {
    let combos = parse_combinations("neighbor;poi;mobility;income").unwrap();
    let r2 = [Some(0.2), None, Some(0.9), Some(-0.5)];
    let runs: Vec<Vec<RunEval>> = r2
        .iter()
        .map(|&v| vec![BTreeMap::from([("t".to_string(), fake_eval(&[v, v]))])])
        .collect();
    let report = downstream::assemble_report(&combos, &runs);
    let order: Vec<&str> = report.rows.iter().map(|r| r.combination.as_str()).collect();
    assert_eq!(order, ["mobility", "neighbor", "income", "poi"]);
    assert_eq!(report.rows[3].avg_r2, None);
}

#[test]
fn report_means_equal_brute_force_over_folds() {
    let combos = vec![vec![View::Mobility, View::Demo("income".into())]];
    let runs = vec![vec![
        BTreeMap::from([
            ("a".to_string(), fake_eval(&[Some(0.1), Some(0.4), None])),
            (
                "b".to_string(),
                fake_eval(&[Some(-1.0), Some(0.0), Some(0.5)]),
            ),
        ]),
        BTreeMap::from([
            (
                "a".to_string(),
                fake_eval(&[Some(0.7), Some(0.2), Some(0.3)]),
            ),
            ("b".to_string(), fake_eval(&[None, None, Some(0.9)])),
        ]),
    ]];
    let report = downstream::assemble_report(&combos, &runs);
    let row = &report.rows[0];
    assert_eq!(row.combination, "mobility+income");
    let a = &row.tasks["a"];
    assert_eq!(a.folds.len(), 6);
    assert!((a.r2.unwrap() - (0.1 + 0.4 + 0.7 + 0.2 + 0.3) / 5.0).abs() < 1e-15);
    assert!((a.mae - (0.0 + 1.0 + 2.0) * 2.0 / 6.0).abs() < 1e-15);
    let b = &row.tasks["b"];
    assert!((b.r2.unwrap() - (-1.0 + 0.0 + 0.5 + 0.9) / 4.0).abs() < 1e-15);
    let avg = (a.r2.unwrap() + b.r2.unwrap()) / 2.0;
    assert!((row.avg_r2.unwrap() - avg).abs() < 1e-15);
}

#[test]
fn one_combination_one_run_reports_that_run() {
    let city = generate_city(&SynthSpec::grid(4, 2)).unwrap();
    let mut tc = TrainConfig::new(Vec::new());
    tc.hp.dim = 4;
    tc.epochs = 3;
    let ec = EvalConfig {
        runs: 1,
        folds: 4,
        ..EvalConfig::default()
    };
    let combos = parse_combinations("mobility+income").unwrap();
    let report = downstream::sweep(&city.dataset, &combos, &tc, &ec).unwrap();
    let single = downstream::evaluate_run(&city.dataset, &combos[0], &tc, &ec, 0).unwrap();
    assert_eq!(report.rows.len(), 1);
    for (task, eval) in &single {
        let summary = &report.rows[0].tasks[task];
        assert!((summary.mae - eval.mean.mae).abs() < 1e-12);
        assert!((summary.rmse - eval.mean.rmse).abs() < 1e-12);
        match (summary.r2, eval.mean.r2) {
            (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
            (a, b) => assert_eq!(a, b),
        }
    }
}
