mod common;

use common::{small_config, synth_samples};
use pepnet::model::{count_parameters, Aggregation, Model, TemporalHead};
use pepnet::train::*;
use proptest::prelude::*;

fn quick_run(epochs: usize) -> RunConfig {
    RunConfig { model: small_config(), epochs, batch_size: 8, eval_every: 0, seed: 3, ..RunConfig::default() }
}

#[test]
fn novel_split_of_ten() {
    let s = make_split(10, &SplitSpec { mode: SplitMode::Novel, train_fraction: 0.7, seed: 0 }).unwrap();
    assert_eq!(s.train, (0..7).collect::<Vec<_>>());
    assert_eq!(s.test, vec![7, 8, 9]);
    assert!(make_split(1, &SplitSpec::default()).is_err());
}

#[test]
fn random_split_frequencies() {
    // 1000 seeds put the tolerance at about two standard errors, so the
    // estimate is taken over ten times as many.
    let (m, seeds) = (10, 10_000);
    let mut in_test = vec![0u32; m];
    for seed in 0..seeds {
        let s = make_split(m, &SplitSpec { mode: SplitMode::Random, train_fraction: 0.7, seed }).unwrap();
        assert_eq!(s, make_split(m, &SplitSpec { mode: SplitMode::Random, train_fraction: 0.7, seed }).unwrap());
        for &i in &s.test {
            in_test[i] += 1;
        }
    }
    for (i, &c) in in_test.iter().enumerate() {
        let f = f64::from(c) / seeds as f64;
        assert!((f - 0.3).abs() < 0.03, "index {i} in test with frequency {f}");
    }
}

#[test]
fn metric_anchors() {
    let report = |t: f64, r: f64| {
        EvalReport::from_errors(vec![WindowError { window_id: 0, trans_err: t, rot_err: r }]).unwrap().t_plus_r
    };
    assert!((report(0.011, 0.582) - 2.12).abs() <= 0.01);
    assert!((report(0.0302, 1.684) - 5.96).abs() <= 0.01);
    let zero = report(0.0, 0.0);
    assert_eq!(zero, 0.0);
    assert!(EvalReport::from_errors(Vec::new()).is_err());
}

#[test]
fn perfect_predictions_score_zero() {
    use pepnet::geometry::Quaternion;
    let q = Quaternion::from_euler([0.3, -0.2, 1.1]);
    assert_eq!(translation_error([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]), 0.0);
    assert!(rotation_error_deg(q.to_euler(), q, RotationMetric::Geodesic) < 1e-5);
}

#[test]
fn checkpoint_reproduces_the_report() {
    let cfg = small_config();
    let samples = synth_samples(&cfg, 16, 1);
    let out = train(Model::<f32>::new(cfg, 3).unwrap(), &samples, &[], &quick_run(2), |_| {}).unwrap();
    let before = evaluate(&out.model, &samples, RotationMetric::Geodesic).unwrap();
    assert_eq!(before, evaluate(&out.model, &samples, RotationMetric::Geodesic).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.pepw");
    out.model.save(&path).unwrap();
    let loaded = Model::<f32>::load(&path).unwrap();
    let after = evaluate(&loaded, &samples, RotationMetric::Geodesic).unwrap();
    assert_eq!(after, before);
    for (a, b) in after.per_window.iter().zip(&before.per_window) {
        assert_eq!(a.trans_err.to_bits(), b.trans_err.to_bits());
        assert_eq!(a.rot_err.to_bits(), b.rot_err.to_bits());
    }
}

#[test]
fn training_is_bit_reproducible() {
    let cfg = small_config();
    let samples = synth_samples(&cfg, 32, 2);
    // 32 windows in batches of 8 over 3 epochs: 12 optimizer steps
    let run = || train(Model::<f32>::new(cfg.clone(), 5).unwrap(), &samples, &[], &quick_run(3), |_| {}).unwrap();
    let (a, b) = (run(), run());
    let bits = |c: &[EpochRecord]| c.iter().map(|r| r.mean_loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.curve), bits(&b.curve));
    for ((_, x), (_, y)) in a.model.params().iter().zip(b.model.params().iter()) {
        let xb: Vec<u32> = x.data().iter().map(|v| v.to_bits()).collect();
        let yb: Vec<u32> = y.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(xb, yb);
    }
}

#[test]
fn zero_learning_rate_keeps_the_loss() {
    let cfg = small_config();
    let samples = synth_samples(&cfg, 16, 3);
    let mut run = quick_run(4);
    run.optim.lr = 0.0;
    run.shuffle = false;
    let start = Model::<f32>::new(cfg, 4).unwrap();
    let out = train(start.clone(), &samples, &[], &run, |_| {}).unwrap();
    let first = out.curve[0].mean_loss;
    assert!(out.curve.iter().all(|r| (r.mean_loss - first).abs() <= 1e-12), "{:?}", out.curve);
    assert_eq!(out.model.params(), start.params());
}

#[test]
fn nan_loss_names_the_batch() {
    let cfg = small_config();
    let mut samples = synth_samples(&cfg, 16, 4);
    samples[5].label.q_euler[0] = f64::NAN;
    let mut run = quick_run(2);
    run.shuffle = false;
    run.batch_size = 2;
    let err = train(Model::<f32>::new(cfg, 1).unwrap(), &samples, &[], &run, |_| {}).unwrap_err();
    match err {
        TrainError::NonFiniteLoss { epoch, batch, .. } => assert_eq!((epoch, batch), (1, 2)),
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn every_ablation_condition_trains() {
    let base = small_config();
    let conds = ablation_matrix(&base);
    assert_eq!(conds.len(), 6);
    assert_eq!((conds[0].1.head, conds[0].1.aggregation), (TemporalHead::None, Aggregation::Max));
    assert_eq!((conds[5].1.head, conds[5].1.aggregation), (TemporalHead::BiLstm, Aggregation::Temporal));
    let counts: Vec<usize> = conds.iter().map(|(_, c)| count_parameters(c).unwrap()).collect();
    assert!(counts.windows(2).all(|w| w[0] < w[1]), "{counts:?}");

    let samples = synth_samples(&base, 8, 5);
    for (name, cfg) in conds {
        let run = RunConfig { model: cfg.clone(), ..quick_run(1) };
        let out = train(Model::<f32>::new(cfg, 2).unwrap(), &samples, &[], &run, |_| {}).unwrap();
        assert!(out.curve[0].mean_loss.is_finite(), "{name}");
    }
}

#[test]
fn loss_csv_has_the_documented_columns() {
    assert_eq!(LOSS_CSV_HEADER, "epoch,mean_loss,median_trans,median_rot");
    let r = EpochRecord { epoch: 3, mean_loss: 0.5, median_trans: 0.25, median_rot: 1.0 };
    assert_eq!(r.csv(), "3,0.5,0.25,1.0");
}

proptest! {
    #[test]
    fn splits_are_disjoint_and_cover(m in 2usize..300, frac in 0.05f64..0.95, seed in any::<u64>(), random in any::<bool>()) {
        let mode = if random { SplitMode::Random } else { SplitMode::Novel };
        let s = make_split(m, &SplitSpec { mode, train_fraction: frac, seed }).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..m).collect::<Vec<_>>());
        prop_assert!(!s.train.is_empty() && !s.test.is_empty());
        if mode == SplitMode::Novel {
            prop_assert!(s.train.iter().max() < s.test.iter().min());
        }
    }

    #[test]
    fn medians_are_order_statistics(errs in prop::collection::vec((0.0f64..10.0, 0.0f64..180.0), 1..60)) {
        let per_window: Vec<WindowError> = errs
            .iter()
            .enumerate()
            .map(|(i, &(t, r))| WindowError { window_id: i, trans_err: t, rot_err: r })
            .collect();
        let report = EvalReport::from_errors(per_window).unwrap();
        let mut t: Vec<f64> = errs.iter().map(|e| e.0).collect();
        let mut r: Vec<f64> = errs.iter().map(|e| e.1).collect();
        t.sort_by(|a, b| a.partial_cmp(b).unwrap());
        r.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mid = (errs.len() - 1) / 2;
        prop_assert_eq!(report.median_trans_err, t[mid]);
        prop_assert_eq!(report.median_rot_err, r[mid]);
    }
}
