//! Joint dimension reduction and clustering: factorial k-means (FKM) and
//! reduced k-means (RKM) fitted by alternating least squares.
//!
//! Both methods look for an orthonormal p x q projection `A`, a hard
//! partition `U` and reduced-space centroids `Y`:
//!
//! * FKM minimizes `||XA - UY||^2`, the within-cluster scatter in the subspace.
//! * RKM minimizes `||X - UYA'||^2 = ||X||^2 - ||XA||^2 + ||XA - UY||^2`.
//!
//! For a fixed partition the optimal `A` is an eigenbasis: the q smallest
//! eigenvectors of the within scatter `W` for FKM and the q largest of the
//! between scatter `B` for RKM. For a fixed `A` the partition is refined by
//! Lloyd iterations on `XA`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fkm,
    Rkm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JdrcOptions {
    pub seed: u64,
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// For FKM, also try an RKM warm start from each random draw and keep the
    /// better of the two fixed points.
    pub rkm_warm_start: bool,
    /// Cap on Lloyd sweeps inside one membership update.
    pub max_inner: usize,
}

impl Default for JdrcOptions {
    fn default() -> Self {
        JdrcOptions { seed: 0, restarts: 100, tol: 1e-8, max_iter: 200, rkm_warm_start: true, max_inner: 300 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JdrcModel {
    pub version: u32,
    pub method: Method,
    pub k: usize,
    pub q: usize,
    /// p x q projection; its columns are also reported as variable scores.
    #[serde(with = "crate::mat_serde")]
    pub a: DMatrix<f64>,
    /// 0-based cluster index per row (the membership matrix U in compact form).
    pub labels: Vec<usize>,
    /// k x q reduced-space centroids.
    #[serde(with = "crate::mat_serde")]
    pub y: DMatrix<f64>,
    pub sizes: Vec<usize>,
    pub objective: f64,
    pub objective_trace: Vec<f64>,
    pub seed: u64,
    pub restarts: usize,
    pub best_restart: usize,
    pub warnings: Vec<String>,
}

impl JdrcModel {
    pub fn variable_scores(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn membership_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.labels.len(), self.k, |i, c| if self.labels[i] == c { 1.0 } else { 0.0 })
    }

    pub fn n_features(&self) -> usize {
        self.a.nrows()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedPoint {
    pub row: usize,
    pub key: String,
    pub coords: Vec<f64>,
    pub cluster: usize,
    pub sq_dist_to_centroid: f64,
    pub dist_to_centroid: f64,
}

struct Ctx<'a> {
    x: &'a DMatrix<f64>,
    xtx: DMatrix<f64>,
    x_sq: f64,
    k: usize,
    q: usize,
    tol: f64,
    max_iter: usize,
    max_inner: usize,
}

#[derive(Clone, Debug)]
struct AlsRun {
    a: DMatrix<f64>,
    labels: Vec<usize>,
    objective: f64,
    trace: Vec<f64>,
}

fn sizes_of(labels: &[usize], k: usize) -> Vec<usize> {
    let mut s = vec![0usize; k];
    for &l in labels {
        s[l] += 1;
    }
    s
}

/// Row-group means of `m` (k x ncols) and group counts.
fn group_means(m: &DMatrix<f64>, labels: &[usize], k: usize) -> (DMatrix<f64>, Vec<usize>) {
    let mut sums = DMatrix::zeros(k, m.ncols());
    let counts = sizes_of(labels, k);
    for j in 0..m.ncols() {
        for (i, &l) in labels.iter().enumerate() {
            sums[(l, j)] += m[(i, j)];
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            sums.row_mut(c).scale_mut(inv);
        }
    }
    (sums, counts)
}

fn sq_dist_row(g: &DMatrix<f64>, i: usize, y: &DMatrix<f64>, c: usize) -> f64 {
    let mut s = 0.0;
    for d in 0..g.ncols() {
        let t = g[(i, d)] - y[(c, d)];
        s += t * t;
    }
    s
}

/// Nearest centroid for every row; ties go to the lowest index.
fn assign_rows(g: &DMatrix<f64>, y: &DMatrix<f64>) -> Vec<usize> {
    (0..g.nrows())
        .map(|i| {
            let mut best = 0;
            let mut bd = f64::INFINITY;
            for c in 0..y.nrows() {
                let d = sq_dist_row(g, i, y, c);
                if d < bd {
                    bd = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Move the point farthest from its own centroid into each empty cluster.
fn repair_empty(g: &DMatrix<f64>, labels: &mut [usize], k: usize) {
    loop {
        let (y, counts) = group_means(g, labels, k);
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return };
        let mut far = None;
        let mut fd = -1.0;
        for i in 0..labels.len() {
            if counts[labels[i]] > 1 {
                let d = sq_dist_row(g, i, &y, labels[i]);
                if d > fd {
                    fd = d;
                    far = Some(i);
                }
            }
        }
        match far {
            Some(i) => labels[i] = empty,
            None => return,
        }
    }
}

fn lloyd(g: &DMatrix<f64>, labels: &mut Vec<usize>, k: usize, max_inner: usize) {
    repair_empty(g, labels, k);
    for _ in 0..max_inner {
        let (y, _) = group_means(g, labels, k);
        let mut next = assign_rows(g, &y);
        repair_empty(g, &mut next, k);
        if next == *labels {
            break;
        }
        *labels = next;
    }
}

fn between_scatter(x: &DMatrix<f64>, labels: &[usize], k: usize) -> DMatrix<f64> {
    let (m, counts) = group_means(x, labels, k);
    let p = x.ncols();
    let mut b = DMatrix::zeros(p, p);
    for c in 0..k {
        let w = counts[c] as f64;
        if w == 0.0 {
            continue;
        }
        for r in 0..p {
            for s in 0..p {
                b[(r, s)] += w * m[(c, r)] * m[(c, s)];
            }
        }
    }
    b
}

fn a_step(method: Method, x: &DMatrix<f64>, xtx: &DMatrix<f64>, labels: &[usize], k: usize, q: usize) -> DMatrix<f64> {
    let b = between_scatter(x, labels, k);
    let p = x.ncols();
    match method {
        Method::Fkm => {
            let (_, v) = linalg::sym_eigen_ascending(&(xtx - &b));
            v.columns(0, q).into_owned()
        }
        Method::Rkm => {
            let (_, v) = linalg::sym_eigen_ascending(&b);
            DMatrix::from_fn(p, q, |i, j| v[(i, p - 1 - j)])
        }
    }
}

fn objective_of(method: Method, x_sq: f64, g: &DMatrix<f64>, labels: &[usize], k: usize) -> f64 {
    let (y, _) = group_means(g, labels, k);
    let within: f64 = (0..g.nrows()).map(|i| sq_dist_row(g, i, &y, labels[i])).sum();
    match method {
        Method::Fkm => within,
        Method::Rkm => (x_sq - linalg::frobenius_sq(g)).max(0.0) + within,
    }
}

fn als(method: Method, ctx: &Ctx, labels0: &[usize]) -> AlsRun {
    let mut labels = labels0.to_vec();
    let x = ctx.x;
    let mut f_old = 1e300;
    let mut trace = Vec::new();
    let mut a = DMatrix::zeros(x.ncols(), ctx.q);
    let mut f = f64::INFINITY;
    for it in 0..ctx.max_iter {
        a = a_step(method, x, &ctx.xtx, &labels, ctx.k, ctx.q);
        let g = x * &a;
        f = objective_of(method, ctx.x_sq, &g, &labels, ctx.k);
        trace.push(f);
        if f_old - f <= ctx.tol * f_old || it + 1 == ctx.max_iter {
            break;
        }
        f_old = f;
        lloyd(&g, &mut labels, ctx.k, ctx.max_inner);
    }
    AlsRun { a, labels, objective: f, trace }
}

fn kmeans_pp<R: Rng>(g: &DMatrix<f64>, k: usize, rng: &mut R) -> DMatrix<f64> {
    let n = g.nrows();
    let mut centers = DMatrix::zeros(k, g.ncols());
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from(&g.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist_row(g, i, &centers, 0)).collect();
    for c in 1..k {
        let pick = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            Err(_) => rng.random_range(0..n),
        };
        centers.row_mut(c).copy_from(&g.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist_row(g, i, &centers, c));
        }
    }
    centers
}

fn restart(method: Method, ctx: &Ctx, seed: u64, r: usize, warm: bool) -> AlsRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    let a0 = linalg::random_orthonormal(ctx.x.ncols(), ctx.q, &mut rng);
    let g0 = ctx.x * &a0;
    let centers = kmeans_pp(&g0, ctx.k, &mut rng);
    let mut labels0 = assign_rows(&g0, &centers);
    repair_empty(&g0, &mut labels0, ctx.k);
    let direct = als(method, ctx, &labels0);
    if method == Method::Fkm && warm {
        let rk = als(Method::Rkm, ctx, &labels0);
        let refined = als(Method::Fkm, ctx, &rk.labels);
        if refined.objective < direct.objective {
            return refined;
        }
    }
    direct
}

fn validate(x: &DMatrix<f64>, k: usize, q: usize) -> Result<()> {
    let (n, p) = x.shape();
    if k < 2 {
        return Err(Error::Argument(format!("k must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::Argument(format!("k = {k} exceeds the number of rows {n}")));
    }
    if q < 1 || q > p {
        return Err(Error::Range { what: "q", value: q as i64, lo: 1, hi: p as i64 });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("input matrix has non-finite entries".into()));
    }
    Ok(())
}

fn context<'a>(x: &'a DMatrix<f64>, k: usize, q: usize, opts: &JdrcOptions) -> Ctx<'a> {
    Ctx {
        x,
        xtx: x.transpose() * x,
        x_sq: linalg::frobenius_sq(x),
        k,
        q,
        tol: opts.tol,
        max_iter: opts.max_iter.max(1),
        max_inner: opts.max_inner.max(1),
    }
}

/// Sign-normalize `A`, then relabel clusters by size (descending) with ties
/// broken by the first centroid coordinate.
fn finish(method: Method, x: &DMatrix<f64>, run: AlsRun, k: usize, opts: &JdrcOptions, best_restart: usize) -> JdrcModel {
    let mut a = run.a;
    linalg::normalize_column_signs(&mut a);
    let g = x * &a;
    let (y0, counts) = group_means(&g, &run.labels, k);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&c1, &c2| {
        counts[c2].cmp(&counts[c1]).then(y0[(c1, 0)].total_cmp(&y0[(c2, 0)])).then(c1.cmp(&c2))
    });
    let mut rank = vec![0usize; k];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    let labels: Vec<usize> = run.labels.iter().map(|&l| rank[l]).collect();
    let (y, sizes) = group_means(&g, &labels, k);
    let mut warnings = Vec::new();
    if k < a.ncols() {
        warnings.push(format!("k = {k} is smaller than q = {}", a.ncols()));
    }
    JdrcModel {
        version: MODEL_VERSION,
        method,
        k,
        q: a.ncols(),
        a,
        labels,
        y,
        sizes,
        objective: run.objective,
        objective_trace: run.trace,
        seed: opts.seed,
        restarts: opts.restarts,
        best_restart,
        warnings,
    }
}

fn fit(method: Method, x: &DMatrix<f64>, k: usize, q: usize, opts: &JdrcOptions) -> Result<JdrcModel> {
    validate(x, k, q)?;
    if opts.restarts == 0 {
        return Err(Error::Argument("restarts must be at least 1".into()));
    }
    let ctx = context(x, k, q, opts);
    let runs: Vec<AlsRun> =
        (0..opts.restarts).into_par_iter().map(|r| restart(method, &ctx, opts.seed, r, opts.rkm_warm_start)).collect();
    let (best, _) = runs
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.objective.total_cmp(&b.objective).then(i.cmp(j)))
        .expect("at least one restart");
    let run = runs[best].clone();
    Ok(finish(method, x, run, k, opts, best))
}

pub fn fit_fkm(x: &DMatrix<f64>, k: usize, q: usize, opts: &JdrcOptions) -> Result<JdrcModel> {
    fit(Method::Fkm, x, k, q, opts)
}

pub fn fit_rkm(x: &DMatrix<f64>, k: usize, q: usize, opts: &JdrcOptions) -> Result<JdrcModel> {
    fit(Method::Rkm, x, k, q, opts)
}

/// A single ALS descent from a given partition, without random restarts.
pub fn fit_from_labels(
    method: Method,
    x: &DMatrix<f64>,
    labels: &[usize],
    k: usize,
    q: usize,
    opts: &JdrcOptions,
) -> Result<JdrcModel> {
    validate(x, k, q)?;
    if labels.len() != x.nrows() || labels.iter().any(|&l| l >= k) {
        return Err(Error::Argument("initial labels do not match the data".into()));
    }
    let ctx = context(x, k, q, opts);
    let mut l0 = labels.to_vec();
    repair_empty(x, &mut l0, k);
    let run = als(method, &ctx, &l0);
    Ok(finish(method, x, run, k, opts, 0))
}

/// Objective value of (A, U) with Y set to the optimal cluster means.
pub fn objective(method: Method, x: &DMatrix<f64>, a: &DMatrix<f64>, labels: &[usize], k: usize) -> f64 {
    let g = x * a;
    objective_of(method, linalg::frobenius_sq(x), &g, labels, k)
}

/// Optimal projection for a fixed partition.
pub fn update_projection(method: Method, x: &DMatrix<f64>, labels: &[usize], k: usize, q: usize) -> DMatrix<f64> {
    a_step(method, x, &(x.transpose() * x), labels, k, q)
}

/// Lloyd refinement of the partition for a fixed projection.
pub fn update_membership(x: &DMatrix<f64>, a: &DMatrix<f64>, labels: &[usize], k: usize) -> Vec<usize> {
    let g = x * a;
    let mut l = labels.to_vec();
    lloyd(&g, &mut l, k, 300);
    l
}

/// One more full ALS iteration from the fitted state; returns the objective
/// after it.
pub fn extra_iteration(model: &JdrcModel, x: &DMatrix<f64>) -> f64 {
    let labels = update_membership(x, &model.a, &model.labels, model.k);
    let a = update_projection(model.method, x, &labels, model.k, model.q);
    objective(model.method, x, &a, &labels, model.k)
}

pub fn project(model: &JdrcModel, rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if rows.ncols() != model.a.nrows() {
        return Err(Error::Argument(format!(
            "rows have {} columns, model expects {}",
            rows.ncols(),
            model.a.nrows()
        )));
    }
    Ok(rows * &model.a)
}

/// Nearest centroid (lowest index on ties) and the squared distance to it.
pub fn assign(model: &JdrcModel, coords: &[f64]) -> (usize, f64) {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for c in 0..model.k {
        let d: f64 = coords.iter().enumerate().map(|(j, v)| (v - model.y[(c, j)]).powi(2)).sum();
        if d < bd {
            bd = d;
            best = c;
        }
    }
    (best, bd)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WithinSs {
    pub per_cluster: Vec<f64>,
    pub total: f64,
}

/// Within-cluster sum of squares around label-group means. Labels are
/// 0-based and every cluster in `0..k` must be populated.
pub fn within_ss(labels: &[usize], coords: &DMatrix<f64>, k: usize) -> Result<WithinSs> {
    if labels.len() != coords.nrows() {
        return Err(Error::Argument("labels and coordinates differ in length".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Argument(format!("label {bad} out of range for k = {k}")));
    }
    let (y, counts) = group_means(coords, labels, k);
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Argument(format!("cluster {c} is empty")));
    }
    let mut per = vec![0.0; k];
    for (i, &l) in labels.iter().enumerate() {
        per[l] += sq_dist_row(coords, i, &y, l);
    }
    Ok(WithinSs { total: per.iter().sum(), per_cluster: per })
}

pub fn reduced_points(model: &JdrcModel, coords: &DMatrix<f64>, keys: &[String]) -> Vec<ReducedPoint> {
    (0..coords.nrows())
        .map(|i| {
            let c = model.labels[i];
            let sq = sq_dist_row(coords, i, &model.y, c);
            ReducedPoint {
                row: i,
                key: keys.get(i).cloned().unwrap_or_default(),
                coords: coords.row(i).iter().copied().collect(),
                cluster: c,
                sq_dist_to_centroid: sq,
                dist_to_centroid: sq.sqrt(),
            }
        })
        .collect()
}

/// The member closest to its own centroid, per cluster (lowest row on ties).
pub fn nearest_to_centroid(model: &JdrcModel, coords: &DMatrix<f64>, keys: &[String]) -> Result<Vec<ReducedPoint>> {
    if coords.nrows() != model.labels.len() {
        return Err(Error::Argument("coordinates do not match the fitted rows".into()));
    }
    let pts = reduced_points(model, coords, keys);
    let mut best: Vec<Option<usize>> = vec![None; model.k];
    for p in &pts {
        let slot = &mut best[p.cluster];
        match slot {
            Some(b) if pts[*b].sq_dist_to_centroid <= p.sq_dist_to_centroid => {}
            _ => *slot = Some(p.row),
        }
    }
    Ok(best.into_iter().flatten().map(|i| pts[i].clone()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementMatrix {
    pub counts: Vec<Vec<usize>>,
    /// counts / row total, in percent.
    pub row_pct: Vec<Vec<f64>>,
    /// counts / column total, in percent.
    pub col_pct: Vec<Vec<f64>>,
}

/// Cross-tabulation of two 0-based labelings.
pub fn agreement_matrix(rows: &[usize], cols: &[usize], n_rows: usize, n_cols: usize) -> Result<AgreementMatrix> {
    if rows.len() != cols.len() {
        return Err(Error::Argument(format!("label vectors differ in length ({} vs {})", rows.len(), cols.len())));
    }
    let mut counts = vec![vec![0usize; n_cols]; n_rows];
    for (&r, &c) in rows.iter().zip(cols) {
        if r >= n_rows || c >= n_cols {
            return Err(Error::Argument(format!("label pair ({r}, {c}) out of range")));
        }
        counts[r][c] += 1;
    }
    let row_tot: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
    let col_tot: Vec<usize> = (0..n_cols).map(|c| counts.iter().map(|r| r[c]).sum()).collect();
    let pct = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
    let row_pct = counts.iter().enumerate().map(|(i, r)| r.iter().map(|&v| pct(v, row_tot[i])).collect()).collect();
    let col_pct = counts.iter().map(|r| r.iter().enumerate().map(|(j, &v)| pct(v, col_tot[j])).collect()).collect();
    Ok(AgreementMatrix { counts, row_pct, col_pct })
}

/// Adjusted Rand index between two partitions.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut ra: BTreeMap<usize, f64> = BTreeMap::new();
    let mut rb: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0;
        *ra.entry(x).or_default() += 1.0;
        *rb.entry(y).or_default() += 1.0;
    }
    let c2 = |v: f64| v * (v - 1.0) / 2.0;
    let index: f64 = joint.values().map(|&v| c2(v)).sum();
    let sa: f64 = ra.values().map(|&v| c2(v)).sum();
    let sb: f64 = rb.values().map(|&v| c2(v)).sum();
    let expected = sa * sb / c2(n);
    let max = 0.5 * (sa + sb);
    if (max - expected).abs() < 1e-300 {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
