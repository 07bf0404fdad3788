#![allow(dead_code)]

use std::path::PathBuf;

use innoscope_core::dataset::{self, IndicatorPanel, Schema};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/euris_fixture.csv")
}

pub fn fixture() -> IndicatorPanel {
    dataset::load_scoreboard_path(&fixture_path(), &Schema::default()).expect("fixture loads")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `k` clusters planted in a random 2-D subspace of R^p: cluster centres on
/// a circle of radius `sep` with within-cluster spread `spread`, and
/// Gaussian masking noise of scale `noise` in the p - 2 remaining
/// directions. Returns the data and the true labels.
pub fn planted_subspace(n_per: usize, k: usize, p: usize, sep: f64, spread: f64, noise: f64, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
    let mut r = rng(seed);
    let rot = gaussian(p, p, &mut r).qr().q();
    let mut z = DMatrix::zeros(n_per * k, p);
    let mut truth = Vec::with_capacity(n_per * k);
    for c in 0..k {
        let angle = std::f64::consts::TAU * c as f64 / k as f64;
        for i in 0..n_per {
            let row = c * n_per + i;
            z[(row, 0)] = sep * angle.cos() + spread * r.sample::<f64, _>(StandardNormal);
            z[(row, 1)] = sep * angle.sin() + spread * r.sample::<f64, _>(StandardNormal);
            for j in 2..p {
                z[(row, j)] = noise * r.sample::<f64, _>(StandardNormal);
            }
            truth.push(c);
        }
    }
    (z * rot.transpose(), truth)
}

/// Well separated blobs in full dimension.
pub fn blobs(n_per: usize, k: usize, p: usize, sep: f64, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
    let mut r = rng(seed);
    let centres = gaussian(k, p, &mut r) * sep;
    let mut x = DMatrix::zeros(n_per * k, p);
    let mut truth = Vec::new();
    for c in 0..k {
        for i in 0..n_per {
            for j in 0..p {
                x[(c * n_per + i, j)] = centres[(c, j)] + r.sample::<f64, _>(StandardNormal);
            }
            truth.push(c);
        }
    }
    (x, truth)
}

/// Within-cluster sum of squares of the rows of `x` about their cluster means.
pub fn within_ss(x: &DMatrix<f64>, labels: &[usize], k: usize) -> f64 {
    let p = x.ncols();
    let mut sums = DMatrix::<f64>::zeros(k, p);
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for j in 0..p {
            sums[(l, j)] += x[(i, j)];
        }
    }
    let mut s = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        for j in 0..p {
            let m = sums[(l, j)] / counts[l] as f64;
            s += (x[(i, j)] - m).powi(2);
        }
    }
    s
}

/// Plain Lloyd k-means with random-row starts, best of `starts`.
pub fn kmeans_oracle(x: &DMatrix<f64>, k: usize, starts: usize, seed: u64) -> (f64, Vec<usize>) {
    let (n, p) = x.shape();
    let mut r = rng(seed);
    let mut best = (f64::INFINITY, Vec::new());
    for _ in 0..starts {
        let mut picks: Vec<usize> = Vec::new();
        while picks.len() < k {
            let i = r.random_range(0..n);
            if !picks.contains(&i) {
                picks.push(i);
            }
        }
        let mut centres = DMatrix::from_fn(k, p, |c, j| x[(picks[c], j)]);
        let mut labels = vec![usize::MAX; n];
        for _ in 0..1000 {
            let next: Vec<usize> = (0..n)
                .map(|i| {
                    (0..k)
                        .map(|c| (c, (0..p).map(|j| (x[(i, j)] - centres[(c, j)]).powi(2)).sum::<f64>()))
                        .min_by(|a, b| a.1.total_cmp(&b.1))
                        .unwrap()
                        .0
                })
                .collect();
            if next == labels {
                break;
            }
            labels = next;
            for c in 0..k {
                let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
                if members.is_empty() {
                    continue;
                }
                for j in 0..p {
                    centres[(c, j)] = members.iter().map(|&i| x[(i, j)]).sum::<f64>() / members.len() as f64;
                }
            }
        }
        let mut counts = vec![0; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        if counts.contains(&0) {
            continue;
        }
        let f = within_ss(x, &labels, k);
        if f < best.0 {
            best = (f, labels);
        }
    }
    best
}

/// Exhaustive FKM optimum for k = 2: for every bipartition the best
/// projection gives the sum of the q smallest eigenvalues of the within
/// scatter matrix.
pub fn fkm_brute_force(x: &DMatrix<f64>, q: usize) -> f64 {
    let n = x.nrows();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << (n - 1)) {
        let labels: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
        let w = within_scatter(x, &labels, 2);
        let mut ev: Vec<f64> = w.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        best = best.min(ev[..q].iter().sum());
    }
    best
}

pub fn within_scatter(x: &DMatrix<f64>, labels: &[usize], k: usize) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let mut w = DMatrix::zeros(p, p);
    for c in 0..k {
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let mean: Vec<f64> = (0..p).map(|j| members.iter().map(|&i| x[(i, j)]).sum::<f64>() / members.len() as f64).collect();
        for &i in &members {
            for a in 0..p {
                for b in 0..p {
                    w[(a, b)] += (x[(i, a)] - mean[a]) * (x[(i, b)] - mean[b]);
                }
            }
        }
    }
    w
}

/// Holm step-down adjustment written straight from its definition:
/// adj(i) = max over j ranked at or before i of min(1, (m - rank_j) * p_j).
pub fn holm_oracle(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; m];
    for (ri, &i) in order.iter().enumerate() {
        let mut v: f64 = 0.0;
        for (rj, &j) in order.iter().enumerate().take(ri + 1) {
            v = v.max(((m - rj) as f64 * p[j]).min(1.0));
        }
        out[i] = v;
    }
    out
}

/// Kolmogorov survival function from a fixed 10^4-term partial sum.
pub fn kolmogorov_series(lambda: f64) -> f64 {
    let mut s = 0.0;
    for j in 1..=10_000 {
        let jf = j as f64;
        let t = (-2.0 * jf * jf * lambda * lambda).exp();
        s += if j % 2 == 1 { t } else { -t };
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Two-sample KS D computed by scanning every pair of ECDF values at the
/// pooled points, without sorting tricks.
pub fn ks_d_oracle(a: &[f64], b: &[f64]) -> f64 {
    let f = |s: &[f64], t: f64| s.iter().filter(|&&v| v <= t).count() as f64 / s.len() as f64;
    a.iter().chain(b).map(|&t| (f(a, t) - f(b, t)).abs()).fold(0.0, f64::max)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 { v[m / 2] } else { 0.5 * (v[m / 2 - 1] + v[m / 2]) }
}
