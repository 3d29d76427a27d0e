mod common;

use common::small_config;
use htgnn_core::{ModelKind, WindowSample};
use htgnn_harness::experiment::{architecture, simulate_dataset, Prepared};
use htgnn_harness::metrics::evaluate;
use htgnn_harness::train::{mean_l1, predict_all, train};
use htgnn_harness::{run, EarlyStopping, HarnessError, Normalizer, StopDecision};

#[test]
fn worsening_validation_stops_after_patience() {
    let mut s = EarlyStopping::new(10, 0);
    let mut stop = None;
    for epoch in 1..=50 {
        if s.observe(epoch, epoch as f64) == StopDecision::Stop {
            stop = Some(epoch);
            break;
        }
    }
    assert_eq!(stop, Some(11));
    assert_eq!(s.best_epoch, 1);
}

#[test]
fn stopping_waits_for_the_minimum_epoch() {
    let mut s = EarlyStopping::new(10, 30);
    let stop = (1..=50).find(|&e| s.observe(e, e as f64) == StopDecision::Stop);
    assert_eq!(stop, Some(30));
}

#[test]
fn improvement_resets_patience() {
    let mut s = EarlyStopping::new(2, 0);
    assert_eq!(s.observe(1, 1.0), StopDecision::Improved);
    assert_eq!(s.observe(2, 1.5), StopDecision::Wait);
    assert_eq!(s.observe(3, 0.5), StopDecision::Improved);
    assert_eq!(s.observe(4, 0.6), StopDecision::Wait);
    assert_eq!(s.observe(5, 0.7), StopDecision::Stop);
}

fn scaled(data: &Prepared, idx: &[usize], n: &Normalizer) -> Vec<WindowSample> {
    idx.iter().map(|&i| n.apply(&data.windows[i])).collect()
}

#[test]
fn training_keeps_the_best_validation_parameters() {
    let cfg = small_config();
    let data = Prepared::new(&simulate_dataset(&cfg).unwrap(), &cfg).unwrap();
    let n = Normalizer::fit(&data.select(&data.split.train)).unwrap();
    let tr = scaled(&data, &data.split.train, &n);
    let va = scaled(&data, &data.split.validation, &n);
    let (tr, va): (Vec<&WindowSample>, Vec<&WindowSample>) = (tr.iter().collect(), va.iter().collect());
    for kind in [ModelKind::Htgnn, ModelKind::Cnn] {
        let mut model = architecture(kind, &cfg).build(&data.layout, 1).unwrap();
        let before = mean_l1(model.as_mut(), &va, 8).unwrap();
        let report = train(model.as_mut(), &tr, &va, &cfg.train).unwrap();
        let after = mean_l1(model.as_mut(), &va, 8).unwrap();
        assert!((after - report.best_val_loss).abs() < 1e-12);
        assert!(after <= before, "{kind:?}: {after} vs {before}");
        assert!(report.epochs.iter().filter(|e| e.best).count() >= 1);
        assert_eq!(report.epochs[report.best_epoch - 1].val_loss, report.best_val_loss);
    }
}

#[test]
fn nan_loss_aborts_with_a_diagnostic() {
    let cfg = small_config();
    let data = Prepared::new(&simulate_dataset(&cfg).unwrap(), &cfg).unwrap();
    let refs = data.select(&data.split.train[..4]);
    let mut model = architecture(ModelKind::Htgnn, &cfg).build(&data.layout, 0).unwrap();
    let params = model.params_mut();
    let id = params.id("head.fc1.b").unwrap();
    params.get_mut(id).value.data_mut()[0] = f64::NAN;
    assert!(matches!(
        train(model.as_mut(), &refs, &refs, &cfg.train),
        Err(HarnessError::Diverged { epoch: 1, .. })
    ));
}

#[test]
fn metrics_do_not_depend_on_evaluation_batch_size() {
    let cfg = small_config();
    let data = Prepared::new(&simulate_dataset(&cfg).unwrap(), &cfg).unwrap();
    let test = data.select(&data.split.test);
    let n = Normalizer::fit(&data.select(&data.split.train)).unwrap();
    let scaled_test = scaled(&data, &data.split.test, &n);
    let refs: Vec<&WindowSample> = scaled_test.iter().collect();
    for kind in [ModelKind::Htgnn, ModelKind::Cnn] {
        let mut model = architecture(kind, &cfg).build(&data.layout, 2).unwrap();
        let mut reports = Vec::new();
        for bs in [1, 7, 1000] {
            let z = predict_all(model.as_mut(), &refs, bs).unwrap();
            let loads = n.loads(&z).unwrap();
            reports.push(evaluate(&loads, &test, &data.conditions).unwrap());
        }
        for r in &reports[1..] {
            for (a, b) in r.cases.iter().zip(&reports[0].cases) {
                for k in 0..2 {
                    assert!((a.mae[k] - b.mae[k]).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn identical_seeds_give_identical_runs() {
    let cfg = small_config();
    let data = Prepared::new(&simulate_dataset(&cfg).unwrap(), &cfg).unwrap();
    let a = run(ModelKind::Htgnn, &data, &cfg).unwrap();
    let b = run(ModelKind::Htgnn, &data, &cfg).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.predictions, b.predictions);
}
