use std::collections::HashSet;

use dystan::dataset::{synth_generate, ClassWeights, LabeledWindow, SynthConfig};
use dystan::metrics::evaluate_fold;
use dystan::model::{read_checkpoint, write_checkpoint, ConvSpec, Dystan, DystanConfig, Variant};
use dystan::nn::{Graph, Mode, Tensor};
use dystan::training::{
    aggregate, cross_entropy_value, joint_loss, run_cv, train_fold, write_epoch_log, BatchSchedule, Control, CvOptions, EpochLog,
    SelectMetric, Summary, TrainConfig,
};
use dystan::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Full-size input, narrow layers: fast enough for many epochs.
fn small(variant: Variant) -> DystanConfig {
    DystanConfig {
        shared_conv: vec![ConvSpec { filters: 8, kernel: 7 }, ConvSpec { filters: 8, kernel: 5 }],
        branch_conv: ConvSpec { filters: 8, kernel: 3 },
        dcsu_hidden: 8,
        attention_heads: 2,
        lstm_hidden: 8,
        head_hidden: 16,
        variant,
        ..DystanConfig::default()
    }
}

fn synth(per_class: usize, noise: f64, seed: u64) -> Vec<LabeledWindow> {
    synth_generate(&SynthConfig { samples_per_joint_class: per_class, noise_std: noise, coupling: 0.3, seed }).unwrap()
}

fn keep_going(_: &EpochLog) -> Control {
    Control::Continue
}

fn scalar_ce(logits: &[f64], y: usize) -> f64 {
    let z: f64 = logits.iter().map(|v| v.exp()).sum();
    -(logits[y].exp() / z).ln()
}

fn ce(logits: Tensor, labels: &[usize], weights: &[f64]) -> f64 {
    let mut g = Graph::new();
    let l = g.constant(logits);
    let v = g.weighted_cross_entropy(l, labels, weights).unwrap();
    g.value(v).data()[0]
}

#[test]
fn cross_entropy_examples() {
    let uniform = ce(Tensor::zeros([3, 4]), &[0, 1, 3], &[1.0; 4]);
    assert!((uniform - 4f64.ln()).abs() < 1e-15);
    let confident = ce(Tensor::new([1, 3], vec![60.0, 0.0, 0.0]).unwrap(), &[0], &[1.0; 3]);
    assert!(confident < 1e-25);
    let hand = (2.0 * scalar_ce(&[1.0, 0.0], 0) + 1.0 * scalar_ce(&[0.0, 1.0], 1)) / 3.0;
    let got = ce(Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(), &[0, 1], &[2.0, 1.0]);
    assert!((got - hand).abs() < 1e-15);
    assert!((got - (1.0 + (-1f64).exp()).ln()).abs() < 1e-15);
    let mut g = Graph::new();
    let l = g.constant(Tensor::zeros([1, 3]));
    assert!(matches!(g.weighted_cross_entropy(l, &[3], &[1.0; 3]), Err(Error::Input(_))));
}

proptest! {
    #[test]
    fn cross_entropy_properties(
        rows in prop::collection::vec(prop::collection::vec(-8.0f64..8.0, 4), 1..10),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = rows.iter().map(|_| rng.random_range(0..4)).collect();
        let weights: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..3.0)).collect();
        let flat = Tensor::new([rows.len(), 4], rows.concat()).unwrap();
        let weighted = ce(flat.clone(), &labels, &weights);
        prop_assert!(weighted >= 0.0 && weighted.is_finite());
        let unit = ce(flat, &labels, &[1.0; 4]);
        let plain = rows.iter().zip(&labels).map(|(r, &y)| scalar_ce(r, y)).sum::<f64>() / rows.len() as f64;
        prop_assert!((unit - plain).abs() < 1e-12);
        prop_assert!((cross_entropy_value(&rows, &labels, &weights) - weighted).abs() < 1e-12);
    }

    #[test]
    fn batches_cover_each_training_window_once(
        n in 1usize..200, batch in 1usize..70, seed in any::<u64>(), epochs in 1usize..4,
    ) {
        let train: Vec<usize> = (0..n).map(|i| i * 3 + 1).collect();
        let mut s = BatchSchedule::new(&train, batch, seed);
        for _ in 0..epochs {
            let batches: Vec<Vec<usize>> = s.next_epoch().map(<[usize]>::to_vec).collect();
            prop_assert_eq!(batches.len(), n.div_ceil(batch));
            prop_assert!(batches.iter().all(|b| b.len() <= batch && !b.is_empty()));
            let mut seen: Vec<usize> = batches.concat();
            seen.sort_unstable();
            prop_assert_eq!(&seen, &train);
        }
    }
}

fn forward_tiny(model: &mut Dystan, x: &Tensor) -> (Graph, dystan::model::TaskOutputs) {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let out = model.forward(&mut g, xv, Mode::Train, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    (g, out)
}

#[test]
fn joint_loss_is_the_sum_of_task_losses() {
    let x = Tensor::from_fn([5, 13, 100], |i| ((i * 7919) % 113) as f64 / 50.0 - 1.0);
    let mut m = Dystan::new(small(Variant::Full), 3).unwrap();
    let w = ClassWeights { sed: vec![1.0, 2.0, 0.5, 1.5], soc: vec![0.7, 1.0, 3.0] };
    let (sed, soc) = ([0, 1, 2, 3, 1], [2, 0, 1, 1, 0]);
    let (mut g, out) = forward_tiny(&mut m, &x);
    let joint = joint_loss(&mut g, &out, &sed, &soc, &w).unwrap();
    let a = g.weighted_cross_entropy(out.sed_logits, &sed, &w.sed).unwrap();
    let b = g.weighted_cross_entropy(out.soc_logits, &soc, &w.soc).unwrap();
    assert_eq!(g.value(joint).data()[0], g.value(a).data()[0] + g.value(b).data()[0]);

    // uniform logits on both tasks
    let mut g = Graph::new();
    let sl = g.constant(Tensor::zeros([2, 4]));
    let cl = g.constant(Tensor::zeros([2, 3]));
    let fake = dystan::model::TaskOutputs {
        sed_logits: sl,
        soc_logits: cl,
        sed_embedding: sl,
        soc_embedding: cl,
        mixing: None,
        stages: Vec::new(),
    };
    let l = joint_loss(&mut g, &fake, &[0, 3], &[1, 2], &ClassWeights::uniform()).unwrap();
    assert!((g.value(l).data()[0] - (4f64.ln() + 3f64.ln())).abs() < 1e-15);
}

#[test]
fn sedentary_head_gradients_ignore_social_labels() {
    let x = Tensor::from_fn([4, 13, 100], |i| ((i * 104729) % 97) as f64 / 40.0 - 1.2);
    let w = ClassWeights { sed: vec![1.0, 2.0, 0.5, 1.5], soc: vec![0.7, 1.0, 3.0] };
    let grads = |soc: [usize; 4]| {
        let mut m = Dystan::new(small(Variant::Full), 5).unwrap();
        let (mut g, out) = forward_tiny(&mut m, &x);
        let l = joint_loss(&mut g, &out, &[0, 1, 2, 3], &soc, &w).unwrap();
        g.backward(l).unwrap();
        let store = m.store_mut();
        store.accumulate_grads(&g);
        store
            .params()
            .iter()
            .filter(|p| p.name.starts_with("sed.head."))
            .map(|p| (p.name.clone(), p.grad.clone().unwrap()))
            .collect::<Vec<_>>()
    };
    let a = grads([0, 1, 2, 0]);
    let b = grads([2, 2, 0, 1]);
    assert_eq!(a.len(), 4);
    for ((na, ga), (_, gb)) in a.iter().zip(&b) {
        assert!(ga.data().iter().zip(gb.data()).all(|(u, v)| u.to_bits() == v.to_bits()), "{na}");
        assert!(ga.data().iter().any(|&v| v != 0.0));
    }
}

fn split(n: usize) -> (Vec<usize>, Vec<usize>) {
    ((0..n).filter(|i| i % 4 != 0).collect(), (0..n).filter(|i| i % 4 == 0).collect())
}

#[test]
fn one_epoch_gives_one_log_and_epoch_one_checkpoint() {
    let data = synth(4, 0.1, 1);
    let (train, val) = split(data.len());
    let mut m = Dystan::new(small(Variant::Full), 0).unwrap();
    let cfg = TrainConfig { max_epochs: 1, batch_size: 16, ..TrainConfig::default() };
    let r = train_fold(&mut m, &data, &train, &val, &cfg, &mut keep_going).unwrap();
    assert_eq!(r.logs.len(), 1);
    assert_eq!(r.logs[0].epoch, 1);
    assert_eq!(r.best_epoch, 1);
    let l = &r.logs[0];
    assert!(l.train_loss.is_finite() && l.val_loss.is_finite() && l.wall_time_s >= 0.0);
}

#[test]
fn identical_seeds_give_identical_training() {
    let data = synth(4, 0.1, 2);
    let (train, val) = split(data.len());
    let cfg = TrainConfig { max_epochs: 3, batch_size: 10, seed: 17, ..TrainConfig::default() };
    let go = || {
        let mut m = Dystan::new(small(Variant::Full), 9).unwrap();
        let r = train_fold(&mut m, &data, &train, &val, &cfg, &mut keep_going).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &m).unwrap();
        (r, bytes)
    };
    let (a, ca) = go();
    let (b, cb) = go();
    assert_eq!(a.best_epoch, b.best_epoch);
    for (x, y) in a.logs.iter().zip(&b.logs) {
        assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
        assert_eq!(x.val_loss.to_bits(), y.val_loss.to_bits());
        assert_eq!(x.val_joint_acc, y.val_joint_acc);
    }
    assert_eq!(ca, cb);
}

#[test]
fn restored_weights_are_those_of_the_first_best_epoch() {
    let data = synth(5, 0.2, 3);
    let (train, val) = split(data.len());
    let cfg = TrainConfig { max_epochs: 6, batch_size: 16, seed: 2, ..TrainConfig::default() };
    let mut m = Dystan::new(small(Variant::Full), 1).unwrap();
    let r = train_fold(&mut m, &data, &train, &val, &cfg, &mut keep_going).unwrap();
    let best = r.logs.iter().map(|l| l.val_joint_acc).fold(f64::NEG_INFINITY, f64::max);
    let first = r.logs.iter().position(|l| l.val_joint_acc == best).unwrap() + 1;
    assert_eq!(r.best_epoch, first);
    let eval = evaluate_fold(&mut m, &data, &val, 16).unwrap();
    assert_eq!(eval.joint_accuracy, best);
    assert_eq!(eval.sed.accuracy, r.logs[first - 1].val_sed_acc);

    let cfg = TrainConfig { select_metric: SelectMetric::ValLoss, ..cfg };
    let mut m = Dystan::new(small(Variant::Full), 1).unwrap();
    let r = train_fold(&mut m, &data, &train, &val, &cfg, &mut keep_going).unwrap();
    let lowest = r.logs.iter().map(|l| l.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(r.logs[r.best_epoch - 1].val_loss, lowest);
}

#[test]
fn observer_can_stop_training() {
    let data = synth(4, 0.1, 4);
    let (train, val) = split(data.len());
    let cfg = TrainConfig { max_epochs: 10, batch_size: 16, ..TrainConfig::default() };
    let mut m = Dystan::new(small(Variant::Nb), 0).unwrap();
    let r = train_fold(&mut m, &data, &train, &val, &cfg, &mut |l| if l.epoch == 2 { Control::Stop } else { Control::Continue })
        .unwrap();
    assert_eq!(r.logs.len(), 2);
}

#[test]
fn training_loss_falls_on_separable_data() {
    let data = synth(6, 0.05, 5);
    let (train, val) = split(data.len());
    let cfg = TrainConfig { max_epochs: 50, batch_size: 16, seed: 1, ..TrainConfig::default() };
    let mut m = Dystan::new(small(Variant::Full), 2).unwrap();
    let r = train_fold(&mut m, &data, &train, &val, &cfg, &mut keep_going).unwrap();
    assert_eq!(r.logs.len(), 50);
    assert!(r.logs.iter().all(|l| l.train_loss.is_finite() && l.train_loss >= 0.0));
    assert!(r.logs[49].train_loss < r.logs[0].train_loss, "{} vs {}", r.logs[49].train_loss, r.logs[0].train_loss);
}

#[test]
fn non_finite_loss_aborts_with_location() {
    let data = synth(3, 0.1, 6);
    let (train, val) = split(data.len());
    let mut m = Dystan::new(small(Variant::Full), 0).unwrap();
    m.store_mut().tensor_mut("sed.head.out.bias").unwrap().data_mut()[0] = f64::NAN;
    let cfg = TrainConfig { max_epochs: 2, batch_size: 8, ..TrainConfig::default() };
    let err = train_fold(&mut m, &data, &train, &val, &cfg, &mut keep_going).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)));
    assert_eq!(err.exit_code(), 3);
    let msg = err.to_string();
    assert!(msg.contains("epoch 1") && msg.contains("batch 1"), "{msg}");
}

#[test]
fn invalid_train_configs_are_rejected() {
    for cfg in [
        TrainConfig { lr: 0.0, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { max_epochs: 0, ..TrainConfig::default() },
    ] {
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
    let json = serde_json::to_value(TrainConfig::default()).unwrap();
    assert_eq!(json["select_metric"], "joint_accuracy");
    let mut extra = json.clone();
    extra.as_object_mut().unwrap().insert("momentum".into(), 0.9.into());
    assert!(serde_json::from_value::<TrainConfig>(extra).is_err());
    assert_eq!("val_loss".parse::<SelectMetric>().unwrap(), SelectMetric::ValLoss);
}

#[test]
fn summary_uses_sample_std() {
    let s = Summary::of(&[0.8, 0.9]).unwrap();
    assert!((s.mean - 0.85).abs() < 1e-15);
    assert!((s.std - 0.005f64.sqrt()).abs() < 1e-15);
    assert_eq!(format!("{:.4}", s.std), "0.0707");
    assert_eq!(Summary::of(&[0.3]).unwrap().std, 0.0);
    assert!(Summary::of(&[]).is_none());
}

#[test]
fn cross_validation_end_to_end() {
    let data = synth(10, 0.2, 7);
    let cfg = TrainConfig { max_epochs: 1, batch_size: 32, seed: 100, ..TrainConfig::default() };
    let opts = CvOptions::default();
    let r = run_cv(&data, &small(Variant::Full), &cfg, &opts, &|_, _| Control::Continue).unwrap();
    assert_eq!(r.folds.len(), 5);
    for (f, outcome) in r.folds.iter().enumerate() {
        assert_eq!(outcome.fold, f);
        assert_eq!(outcome.seed, 100 + f as u64);
        assert_eq!(outcome.report.seed, 100 + f as u64);
        let split = &r.plan.folds[f];
        let seen: HashSet<usize> = split.train.iter().chain(&split.val).copied().collect();
        assert!(split.test.iter().all(|i| !seen.contains(i)));
        assert_eq!(outcome.report.test_windows, split.test.len());
        assert_eq!(outcome.training.logs.len(), 1);
    }
    let joint: Vec<f64> = r.folds.iter().map(|f| f.report.joint_accuracy).collect();
    let s = Summary::of(&joint).unwrap();
    assert_eq!(r.aggregate["joint_accuracy"], s);
    assert_eq!(aggregate(&r.folds.iter().map(|f| f.report.clone()).collect::<Vec<_>>()), r.aggregate);

    // concurrent folds reproduce the sequential run
    let par = run_cv(&data, &small(Variant::Full), &cfg, &CvOptions { parallel_folds: true, ..opts }, &|_, _| Control::Continue)
        .unwrap();
    for (a, b) in r.folds.iter().zip(&par.folds) {
        assert_eq!(a.report, b.report);
    }

    // checkpoint restore leaves every metric bit-identical
    let outcome = &r.folds[0];
    let mut standardized = data.clone();
    for w in &mut standardized {
        outcome.standardization.apply(&mut w.features).unwrap();
    }
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &outcome.model).unwrap();
    let mut loaded = read_checkpoint(bytes.as_slice()).unwrap();
    let before = evaluate_fold(&mut outcome.model.clone(), &standardized, &r.plan.folds[0].test, 32).unwrap();
    let after = evaluate_fold(&mut loaded, &standardized, &r.plan.folds[0].test, 32).unwrap();
    assert_eq!(before, after);
    assert_eq!(before.report(0, outcome.seed, Variant::Full, outcome.training.best_epoch), outcome.report);
}

#[test]
fn epoch_log_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("log.csv");
    let log = EpochLog {
        epoch: 1,
        train_loss: 1.5,
        val_loss: 1.25,
        val_sed_acc: 0.5,
        val_soc_acc: 0.75,
        val_joint_acc: 0.25,
        wall_time_s: 2.0,
    };
    write_epoch_log(&p, &[log]).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(text, "epoch,train_loss,val_loss,val_sed_acc,val_soc_acc,val_joint_acc,wall_time_s\n1,1.5,1.25,0.5,0.75,0.25,2.000\n");
}
