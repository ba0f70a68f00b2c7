use std::sync::Arc;
use std::time::Instant;

use pdm_core::balance::{smote_oversample, SmoteConfig};
use pdm_core::cf::{fit_explainer, greedy_counterfactual, CounterfactualQuery, Explainer};
use pdm_core::data::{generate_synthetic_bearing, label_dataset, train_test_split, Dataset, Label, SyntheticConfig, Window};
use pdm_core::eval::{evaluate, kfold, KFoldConfig};
use pdm_core::tcn::{argmax, train, TcnConfig, TcnModel};

fn labeled(seed: u64) -> Dataset {
    let cfg = SyntheticConfig { seed, ..SyntheticConfig::default() };
    label_dataset(&generate_synthetic_bearing(&cfg).unwrap()).unwrap().0
}

fn trained() -> (TcnModel, Dataset, Dataset) {
    let (train_set, test_set) = train_test_split(&labeled(0), 0.25, 0).unwrap();
    let balanced = smote_oversample(&train_set, &SmoteConfig::default()).unwrap();
    let (model, _) = train(&balanced, &TcnConfig::default()).unwrap();
    (model, train_set, test_set)
}

/// Anomalous windows from fresh seeds, each paired with the class opposite
/// to the model's prediction so every query requires a real flip.
fn instances(model: &TcnModel, n: usize) -> Vec<(Window, Label)> {
    let mut out = Vec::new();
    for seed in 100.. {
        for w in labeled(seed).windows {
            if w.label == Some(Label::Anomalous) {
                let predicted = argmax(&model.predict_proba_one(&w).unwrap());
                out.push((w, Label::from_index(1 - predicted).unwrap()));
                if out.len() == n {
                    return out;
                }
            }
        }
    }
    unreachable!()
}

fn flips(ex: &Explainer, w: &Window, target: Label) -> (bool, f64) {
    let p = ex.model().predict_proba_one(w).unwrap();
    (argmax(&p) == target.index(), p[target.index()])
}

#[test]
fn desk_scale_pipeline_and_counterfactual_contract() {
    let start = Instant::now();
    let (model, train_set, test_set) = trained();
    let eval = evaluate(&model, &test_set).unwrap();
    assert!(eval.metrics.accuracy.unwrap() >= 0.90, "{eval:?}");
    assert!(start.elapsed().as_secs() < 120);

    let ex = fit_explainer(Arc::new(model), &train_set).unwrap();
    for (w, target) in instances(ex.model(), 20) {
        let cf = greedy_counterfactual(&ex, &CounterfactualQuery::new(w.clone(), target)).unwrap();
        assert!(flips(&ex, &cf.window, target).0);
        let d = ex.distractor(cf.distractor_id.unwrap()).unwrap();
        for c in 0..w.channels() {
            let source = if cf.substituted_channels.contains(&c) { d } else { &w };
            assert_eq!(cf.window.values[c], source.values[c]);
        }

        // Smallest flipping subset of the same distractor's channels.
        let subsets: [&[usize]; 3] = [&[0], &[1], &[0, 1]];
        let mut best: Option<(usize, f64, &[usize])> = None;
        for s in subsets {
            let mut cand = w.clone();
            for &c in s {
                cand.values[c].clone_from(&d.values[c]);
            }
            let (ok, p) = flips(&ex, &cand, target);
            let better = best.is_none_or(|(len, bp, _)| s.len() < len || (s.len() == len && p > bp));
            if ok && better {
                best = Some((s.len(), p, s));
            }
        }
        let mut got = cf.substituted_channels.clone();
        got.sort();
        assert_eq!(got, best.unwrap().2);
    }
}

#[test]
fn locking_every_channel_fails_with_advice() {
    let (model, train_set, _) = trained();
    let ex = fit_explainer(Arc::new(model), &train_set).unwrap();
    let (w, target) = instances(ex.model(), 1).remove(0);
    let err = greedy_counterfactual(&ex, &CounterfactualQuery::new(w, target).with_locks([0, 1])).unwrap_err();
    match err {
        pdm_core::Error::NoCounterfactualFound(f) => assert!(!f.advice.is_empty()),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn small_kfold_reports_every_fold() {
    let cfg = KFoldConfig {
        k: 3,
        tcn: TcnConfig { epochs: 3, ..TcnConfig::default() },
        smote: SmoteConfig::default(),
        seed: 4,
        jobs: 3,
    };
    let report = kfold(&labeled(1), &cfg).unwrap();
    assert_eq!(report.fold_accuracies.len(), 3);
    assert!(report.mean > 50.0);
    let serial = kfold(&labeled(1), &KFoldConfig { jobs: 1, ..cfg }).unwrap();
    assert_eq!(report, serial);
}
