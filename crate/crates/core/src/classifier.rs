//! Binary cluster-membership classifier: a 100-unit ReLU layer with a
//! sigmoid head, trained with Adam on binary cross-entropy.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ScalingParams;
use crate::error::{Error, Result};

pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub threshold: f64,
    pub train_ratio: f64,
    pub val_ratio: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            hidden: 100,
            learning_rate: 0.01,
            epochs: 200,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            threshold: 0.5,
            train_ratio: 0.6,
            val_ratio: 0.2,
        }
    }
}

/// Dense network `inputs -> hidden (ReLU) -> 1`; `w1` is hidden x inputs, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub inputs: usize,
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable binary cross-entropy on a logit.
pub fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

impl Mlp {
    /// Uniform fan-in initialization: every parameter of a layer is drawn
    /// from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn init<R: Rng>(inputs: usize, hidden: usize, rng: &mut R) -> Mlp {
        let b_in = 1.0 / (inputs as f64).sqrt();
        let b_hid = 1.0 / (hidden as f64).sqrt();
        let mut u = |b: f64| rng.random_range(-b..b);
        let w1 = (0..hidden * inputs).map(|_| u(b_in)).collect();
        let b1 = (0..hidden).map(|_| u(b_in)).collect();
        let w2 = (0..hidden).map(|_| u(b_hid)).collect();
        let b2 = u(b_hid);
        Mlp { inputs, hidden, w1, b1, w2, b2 }
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    fn hidden_act(&self, x: &[f64], out: &mut [f64]) {
        for h in 0..self.hidden {
            let row = &self.w1[h * self.inputs..(h + 1) * self.inputs];
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[h];
            out[h] = z;
        }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        let mut z1 = vec![0.0; self.hidden];
        self.hidden_act(x, &mut z1);
        z1.iter().zip(&self.w2).map(|(z, w)| z.max(0.0) * w).sum::<f64>() + self.b2
    }

    /// Mean BCE over the rows of `x` (already scaled).
    pub fn loss(&self, x: &DMatrix<f64>, y: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.inputs];
        let mut s = 0.0;
        for i in 0..x.nrows() {
            for j in 0..self.inputs {
                buf[j] = x[(i, j)];
            }
            s += bce_with_logit(self.logit(&buf), y[i]);
        }
        s / x.nrows() as f64
    }

    /// Mean loss and its exact gradient over the given rows.
    pub fn loss_and_grad(&self, x: &DMatrix<f64>, y: &[f64], rows: &[usize]) -> (f64, Gradients) {
        let mut g = Gradients { w1: vec![0.0; self.w1.len()], b1: vec![0.0; self.hidden], w2: vec![0.0; self.hidden], b2: 0.0 };
        let mut xi = vec![0.0; self.inputs];
        let mut z1 = vec![0.0; self.hidden];
        let mut loss = 0.0;
        let inv = 1.0 / rows.len() as f64;
        for &i in rows {
            for j in 0..self.inputs {
                xi[j] = x[(i, j)];
            }
            self.hidden_act(&xi, &mut z1);
            let z: f64 = z1.iter().zip(&self.w2).map(|(z, w)| z.max(0.0) * w).sum::<f64>() + self.b2;
            loss += bce_with_logit(z, y[i]);
            let dz = (sigmoid(z) - y[i]) * inv;
            g.b2 += dz;
            for h in 0..self.hidden {
                let a = z1[h].max(0.0);
                g.w2[h] += dz * a;
                if z1[h] > 0.0 {
                    let d1 = dz * self.w2[h];
                    g.b1[h] += d1;
                    let row = &mut g.w1[h * self.inputs..(h + 1) * self.inputs];
                    for (gw, v) in row.iter_mut().zip(&xi) {
                        *gw += d1 * v;
                    }
                }
            }
        }
        (loss * inv, g)
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.extend(&self.w1);
        p.extend(&self.b1);
        p.extend(&self.w2);
        p.push(self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let (a, rest) = p.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.hidden);
        let (c, d) = rest.split_at(self.hidden);
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2 = d[0];
    }
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.w1.len() + 2 * self.b1.len() + 1);
        p.extend(&self.w1);
        p.extend(&self.b1);
        p.extend(&self.w2);
        p.push(self.b2);
        p
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Adam {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], hp: &Hyperparams) {
        self.t += 1;
        let c1 = 1.0 - hp.beta1.powi(self.t);
        let c2 = 1.0 - hp.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = hp.beta1 * self.m[i] + (1.0 - hp.beta1) * grad[i];
            self.v[i] = hp.beta2 * self.v[i] + (1.0 - hp.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= hp.learning_rate * mh / (vh.sqrt() + hp.epsilon);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_train_balanced: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipClassifier {
    pub version: u32,
    pub target: String,
    pub scaling: ScalingParams,
    pub net: Mlp,
    pub threshold: f64,
    pub train_meta: TrainMeta,
}

fn check_row(model_inputs: usize, x: &[f64]) -> Result<()> {
    if x.len() != model_inputs {
        return Err(Error::Argument(format!("expected {model_inputs} features, got {}", x.len())));
    }
    if let Some(j) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Argument(format!("feature {j} is not finite")));
    }
    Ok(())
}

impl MembershipClassifier {
    /// Logit of membership for a row in original indicator units.
    pub fn logit(&self, raw: &[f64]) -> Result<f64> {
        check_row(self.net.inputs, raw)?;
        Ok(self.net.logit(&self.scaling.scale_row(raw)))
    }

    /// Membership probability, kept strictly inside (0, 1).
    pub fn predict_proba(&self, raw: &[f64]) -> Result<f64> {
        let p = sigmoid(self.logit(raw)?);
        Ok(p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
    }

    pub fn classify(&self, raw: &[f64]) -> Result<bool> {
        Ok(self.predict_proba(raw)? > self.threshold)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// Stratified split: per class, floor(ratio * n_class) rows go to train and
/// validation; the remainder goes to test. Each split is returned sorted.
pub fn make_splits(labels: &[bool], train_ratio: f64, val_ratio: f64, seed: u64) -> Result<Splits> {
    if !(train_ratio > 0.0 && val_ratio >= 0.0 && train_ratio + val_ratio < 1.0) {
        return Err(Error::Argument(format!("bad split ratios {train_ratio}/{val_ratio}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Splits { train: vec![], val: vec![], test: vec![] };
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let a = (train_ratio * n + 1e-9).floor() as usize;
        let b = (val_ratio * n + 1e-9).floor() as usize;
        s.train.extend_from_slice(&idx[..a]);
        s.val.extend_from_slice(&idx[a..a + b]);
        s.test.extend_from_slice(&idx[a + b..]);
    }
    s.train.sort_unstable();
    s.val.sort_unstable();
    s.test.sort_unstable();
    for (name, part) in [("train", &s.train), ("validation", &s.val), ("test", &s.test)] {
        if !part.iter().any(|&i| labels[i]) {
            return Err(Error::Stratification(format!("{name} split has no positive examples")));
        }
    }
    Ok(s)
}

/// Randomly drop majority-class rows down to the minority count, then shuffle.
pub fn undersample(rows: &[usize], labels: &[bool], seed: u64) -> Result<Vec<usize>> {
    let mut pos: Vec<usize> = rows.iter().copied().filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = rows.iter().copied().filter(|&i| !labels[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Balance("undersampling needs both classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = pos.len().min(neg.len());
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    pos.truncate(m);
    neg.truncate(m);
    let mut out = pos;
    out.extend(neg);
    out.shuffle(&mut rng);
    Ok(out)
}

/// Train on `train_rows` (scaling fitted on them only) and keep the weights
/// of the epoch with the lowest validation loss.
pub fn train(
    features: &DMatrix<f64>,
    labels: &[bool],
    train_rows: &[usize],
    val_rows: &[usize],
    target: &str,
    hp: &Hyperparams,
    seed: u64,
) -> Result<MembershipClassifier> {
    train_balanced(features, labels, train_rows, train_rows, val_rows, target, hp, seed)
}

/// As [`train`], with scaling fitted on `scale_rows` (the full training
/// split) while gradient steps use `fit_rows` (e.g. its undersampled subset).
#[allow(clippy::too_many_arguments)]
pub fn train_balanced(
    features: &DMatrix<f64>,
    labels: &[bool],
    scale_rows: &[usize],
    fit_rows: &[usize],
    val_rows: &[usize],
    target: &str,
    hp: &Hyperparams,
    seed: u64,
) -> Result<MembershipClassifier> {
    if fit_rows.is_empty() || val_rows.is_empty() {
        return Err(Error::InsufficientData("empty train or validation set".into()));
    }
    let p = features.ncols();
    let pick = |rows: &[usize]| DMatrix::from_fn(rows.len(), p, |i, j| features[(rows[i], j)]);
    let scaling = ScalingParams::fit(&pick(scale_rows))?;
    let xt = scaling.apply(&pick(fit_rows));
    let xv = scaling.apply(&pick(val_rows));
    let yt: Vec<f64> = fit_rows.iter().map(|&i| labels[i] as u8 as f64).collect();
    let yv: Vec<f64> = val_rows.iter().map(|&i| labels[i] as u8 as f64).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::init(p, hp.hidden, &mut rng);
    let mut params = net.params();
    let mut adam = Adam::new(params.len());
    let mut best = (net.loss(&xv, &yv), 0usize, params.clone());
    let mut order: Vec<usize> = (0..xt.nrows()).collect();
    let bs = hp.batch_size.max(1);
    for epoch in 1..=hp.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(bs) {
            let (l, g) = net.loss_and_grad(&xt, &yt, batch);
            if !l.is_finite() {
                return Err(Error::Divergence { epoch, loss: l });
            }
            adam.step(&mut params, &g.flat(), hp);
            net.set_params(&params);
        }
        let vl = net.loss(&xv, &yv);
        if !vl.is_finite() {
            return Err(Error::Divergence { epoch, loss: vl });
        }
        if vl < best.0 {
            best = (vl, epoch, params.clone());
        }
    }
    net.set_params(&best.2);
    Ok(MembershipClassifier {
        version: MODEL_VERSION,
        target: target.to_string(),
        scaling,
        net,
        threshold: hp.threshold,
        train_meta: TrainMeta {
            seed,
            epochs: hp.epochs,
            batch_size: hp.batch_size,
            learning_rate: hp.learning_rate,
            best_epoch: best.1,
            best_val_loss: best.0,
            n_train: scale_rows.len(),
            n_val: val_rows.len(),
            n_test: 0,
            n_train_balanced: fit_rows.len(),
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision_pos: f64,
    pub recall_pos: f64,
    pub precision_neg: f64,
    pub recall_neg: f64,
    pub accuracy: f64,
    pub n: usize,
    /// Metrics whose denominator was zero (reported as 0).
    pub undefined: Vec<String>,
    pub split_sizes: (usize, usize, usize),
}

fn ratio(num: usize, den: usize, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn report_from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> EvaluationReport {
    let mut undefined = Vec::new();
    let n = tp + fp + tn + fn_;
    EvaluationReport {
        tp,
        fp,
        tn,
        fn_,
        precision_pos: ratio(tp, tp + fp, "precision_pos", &mut undefined),
        recall_pos: ratio(tp, tp + fn_, "recall_pos", &mut undefined),
        precision_neg: ratio(tn, tn + fn_, "precision_neg", &mut undefined),
        recall_neg: ratio(tn, tn + fp, "recall_neg", &mut undefined),
        accuracy: ratio(tp + tn, n, "accuracy", &mut undefined),
        n,
        undefined,
        split_sizes: (0, 0, n),
    }
}

pub fn evaluate(model: &MembershipClassifier, features: &DMatrix<f64>, labels: &[bool], rows: &[usize]) -> Result<EvaluationReport> {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for &i in rows {
        let x: Vec<f64> = features.row(i).iter().copied().collect();
        let pred = model.classify(&x)?;
        match (pred, labels[i]) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(report_from_counts(tp, fp, tn, fn_))
}

pub fn evaluation_delimited(reports: &[(String, EvaluationReport)], sep: char) -> String {
    let mut s = format!("dataset{sep}accuracy{sep}precision_1{sep}recall_1{sep}precision_0{sep}recall_0{sep}tp{sep}fp{sep}tn{sep}fn\n");
    for (name, r) in reports {
        s.push_str(&format!(
            "{name}{sep}{:.4}{sep}{:.4}{sep}{:.4}{sep}{:.4}{sep}{:.4}{sep}{}{sep}{}{sep}{}{sep}{}\n",
            r.accuracy, r.precision_pos, r.recall_pos, r.precision_neg, r.recall_neg, r.tp, r.fp, r.tn, r.fn_
        ));
    }
    s
}

/// A binary task: which panel rows take part and their labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryTask {
    pub name: String,
    pub rows: Vec<usize>,
    pub labels: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedTask {
    pub name: String,
    pub model: MembershipClassifier,
    pub report: EvaluationReport,
    pub splits: Splits,
}

/// Split, undersample, train and test on one task. Split and undersampling
/// streams are derived from `seed` so the whole run is reproducible.
pub fn run_task(features: &DMatrix<f64>, task: &BinaryTask, target: &str, hp: &Hyperparams, seed: u64) -> Result<TrainedTask> {
    if task.rows.len() != task.labels.len() {
        return Err(Error::Argument("task rows and labels differ in length".into()));
    }
    let p = features.ncols();
    let x = DMatrix::from_fn(task.rows.len(), p, |i, j| features[(task.rows[i], j)]);
    let splits = make_splits(&task.labels, hp.train_ratio, hp.val_ratio, seed)?;
    let balanced = undersample(&splits.train, &task.labels, seed.wrapping_add(1))?;
    let mut model = train_balanced(&x, &task.labels, &splits.train, &balanced, &splits.val, target, hp, seed)?;
    model.train_meta.n_test = splits.test.len();
    let mut report = evaluate(&model, &x, &task.labels, &splits.test)?;
    report.split_sizes = splits.sizes();
    Ok(TrainedTask { name: task.name.clone(), model, report, splits })
}

/// Train and test every task with the same protocol and seed; tasks run in
/// parallel, each single-threaded.
pub fn compare_labelings(features: &DMatrix<f64>, tasks: &[BinaryTask], target: &str, hp: &Hyperparams, seed: u64) -> Result<Vec<TrainedTask>> {
    tasks.par_iter().map(|t| run_task(features, t, target, hp, seed)).collect()
}
