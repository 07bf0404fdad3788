mod common;

use innoscope_core::classifier::{self, BinaryTask, Hyperparams, Mlp};
use innoscope_core::Error;
use nalgebra::DMatrix;
use rand::Rng;

fn numeric_grad(net: &Mlp, x: &DMatrix<f64>, y: &[f64], idx: usize) -> f64 {
    let h = 1e-5;
    let base = net.params();
    let mut m = net.clone();
    let mut p = base.clone();
    p[idx] += h;
    m.set_params(&p);
    let up = m.loss(x, y);
    p[idx] = base[idx] - h;
    m.set_params(&p);
    let down = m.loss(x, y);
    (up - down) / (2.0 * h)
}

#[test]
fn gradient_matches_central_differences() {
    let mut r = common::rng(12);
    let net = Mlp::init(5, 8, &mut r);
    let x = common::gaussian(15, 5, &mut r);
    let y: Vec<f64> = (0..15).map(|_| r.random_range(0..2) as f64).collect();
    let rows: Vec<usize> = (0..15).collect();
    let (loss, g) = net.loss_and_grad(&x, &y, &rows);
    assert!((loss - net.loss(&x, &y)).abs() < 1e-12);
    let flat = g.flat();
    for idx in 0..net.n_params() {
        let num = numeric_grad(&net, &x, &y, idx);
        let rel = (flat[idx] - num).abs() / flat[idx].abs().max(num.abs()).max(1e-7);
        assert!(rel < 1e-4, "param {idx}: analytic {} numeric {num}", flat[idx]);
    }
}

fn blob_task(seed: u64) -> (DMatrix<f64>, BinaryTask) {
    let mut r = common::rng(seed);
    let n = 400;
    let x = DMatrix::from_fn(n, 4, |i, j| {
        let shift = if i < 100 { 3.0 } else { 0.0 };
        shift * (j % 2) as f64 + r.random::<f64>() * 2.0 + 10.0 * j as f64
    });
    let labels: Vec<bool> = (0..n).map(|i| i < 100).collect();
    (x, BinaryTask { name: "blobs".into(), rows: (0..n).collect(), labels })
}

#[test]
fn separable_blobs_are_learned() {
    let (x, task) = blob_task(1);
    let t = classifier::run_task(&x, &task, "pos", &Hyperparams { epochs: 60, ..Default::default() }, 3).unwrap();
    assert!(t.report.accuracy >= 0.97, "{:?}", t.report);
    assert_eq!(t.report.split_sizes, (240, 80, 80));
    assert_eq!(t.model.train_meta.n_train_balanced, 120);
    assert!(t.model.train_meta.best_val_loss.is_finite());
}

#[test]
fn same_seed_same_bits() {
    let (x, task) = blob_task(2);
    let hp = Hyperparams { epochs: 15, ..Default::default() };
    let a = classifier::run_task(&x, &task, "pos", &hp, 9).unwrap();
    let b = classifier::run_task(&x, &task, "pos", &hp, 9).unwrap();
    let bits = |m: &Mlp| m.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.model.net), bits(&b.model.net));
    assert_eq!(a.splits, b.splits);
    let c = classifier::run_task(&x, &task, "pos", &hp, 10).unwrap();
    assert_ne!(bits(&a.model.net), bits(&c.model.net));
}

#[test]
fn scaling_sees_training_rows_only() {
    let (mut x, task) = blob_task(3);
    let hp = Hyperparams { epochs: 5, ..Default::default() };
    let a = classifier::run_task(&x, &task, "pos", &hp, 4).unwrap();
    // Push a test row and a validation row far out of range.
    let t = a.splits.test[0];
    let v = a.splits.val[0];
    x[(t, 0)] = 1e6;
    x[(v, 1)] = -1e6;
    let b = classifier::run_task(&x, &task, "pos", &hp, 4).unwrap();
    assert_eq!(a.model.scaling, b.model.scaling);
    let train_max = a.splits.train.iter().map(|&i| x[(i, 0)]).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(a.model.scaling.max[0], train_max);
}

#[test]
fn output_layer_descent_with_frozen_hidden_layer_is_monotone() {
    // With the hidden layer fixed the loss is convex in the output weights;
    // full-batch gradient steps with a small rate must not increase it.
    let mut r = common::rng(21);
    let mut net = Mlp::init(4, 10, &mut r);
    let x = common::gaussian(60, 4, &mut r);
    let y: Vec<f64> = (0..60).map(|i| (x[(i, 0)] + x[(i, 1)] > 0.0) as u8 as f64).collect();
    let rows: Vec<usize> = (0..60).collect();
    let n1 = net.w1.len() + net.b1.len();
    let mut prev = net.loss(&x, &y);
    for _ in 0..200 {
        let (_, g) = net.loss_and_grad(&x, &y, &rows);
        let mut p = net.params();
        let flat = g.flat();
        for i in n1..p.len() {
            p[i] -= 0.05 * flat[i];
        }
        net.set_params(&p);
        let l = net.loss(&x, &y);
        assert!(l <= prev + 1e-15, "{l} > {prev}");
        prev = l;
    }
}

#[test]
fn leader_sized_split() {
    // 1912 rows with 281 positives, the size of the leader cluster.
    let labels: Vec<bool> = (0..1912).map(|i| i % 6 == 0 && i / 6 < 281).collect();
    assert_eq!(labels.iter().filter(|&&b| b).count(), 281);
    let s = classifier::make_splits(&labels, 0.6, 0.2, 0).unwrap();
    assert_eq!(s.sizes(), (1146, 382, 384));
    let pos = |rows: &[usize]| rows.iter().filter(|&&i| labels[i]).count();
    assert_eq!((pos(&s.train), pos(&s.val), pos(&s.test)), (168, 56, 57));
    let b = classifier::undersample(&s.train, &labels, 1).unwrap();
    assert_eq!(b.iter().filter(|&&i| labels[i]).count() * 2, b.len());
}

#[test]
fn task_errors() {
    let (x, mut task) = blob_task(4);
    task.labels = vec![false; task.rows.len()];
    assert!(matches!(classifier::run_task(&x, &task, "pos", &Hyperparams::default(), 0), Err(Error::Stratification(_))));
    task.labels.pop();
    assert!(matches!(classifier::run_task(&x, &task, "pos", &Hyperparams::default(), 0), Err(Error::Argument(_))));
}

#[test]
fn report_counts() {
    let r = classifier::report_from_counts(8, 2, 85, 5);
    assert_eq!(r.n, 100);
    assert!((r.accuracy - 0.93).abs() < 1e-12);
    assert!((r.precision_pos - 0.8).abs() < 1e-12);
    let empty = classifier::report_from_counts(0, 0, 10, 0);
    assert!(empty.undefined.contains(&"precision_pos".to_string()));
}
