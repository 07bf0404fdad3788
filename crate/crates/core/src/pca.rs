//! PCA on the correlation matrix and component-count selection.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::StandardizedMatrix;
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    /// Descending, tiny negatives clamped to 0.
    pub eigenvalues: Vec<f64>,
    /// Unit-norm eigenvectors as columns, largest-magnitude entry positive.
    #[serde(with = "crate::mat_serde")]
    pub loadings: DMatrix<f64>,
    pub explained: Vec<f64>,
    pub cumulative: Vec<f64>,
    #[serde(with = "crate::mat_serde")]
    pub correlation: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub component: usize,
    pub eigenvalue: f64,
    pub std_dev: f64,
    pub proportion: f64,
    pub cumulative: f64,
}

pub fn fit_pca(z: &StandardizedMatrix) -> Result<PcaModel> {
    let (n, p) = z.data.shape();
    if n <= p {
        return Err(Error::InsufficientData(format!("PCA needs more than {p} rows, got {n}")));
    }
    let r = (z.data.transpose() * &z.data) / n as f64;
    fit_pca_correlation(&r)
}

/// PCA from an already computed correlation matrix.
pub fn fit_pca_correlation(r: &DMatrix<f64>) -> Result<PcaModel> {
    linalg::check_symmetric(r, 1e-9)?;
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("correlation matrix has non-finite entries".into()));
    }
    let p = r.nrows();
    let (asc, vecs) = linalg::sym_eigen_ascending(r);
    let eigenvalues: Vec<f64> = asc.iter().rev().map(|&l| if l < 0.0 { 0.0 } else { l }).collect();
    if asc[0] < -1e-9 {
        return Err(Error::Numeric(format!("matrix is not positive semidefinite (eigenvalue {:e})", asc[0])));
    }
    let mut loadings = DMatrix::from_fn(p, p, |i, j| vecs[(i, p - 1 - j)]);
    linalg::normalize_column_signs(&mut loadings);
    let total: f64 = eigenvalues.iter().sum();
    let explained: Vec<f64> = eigenvalues.iter().map(|l| l / total).collect();
    let mut cumulative = Vec::with_capacity(p);
    let mut acc = 0.0;
    for e in &explained {
        acc += e;
        cumulative.push(acc);
    }
    if let Some(last) = cumulative.last_mut() {
        *last = 1.0;
    }
    Ok(PcaModel { eigenvalues, loadings, explained, cumulative, correlation: r.clone() })
}

impl PcaModel {
    pub fn scores(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        z * &self.loadings
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.eigenvalues.clone()));
        &self.loadings * d * self.loadings.transpose()
    }
}

pub fn variance_table(model: &PcaModel) -> Vec<VarianceRow> {
    model
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(j, &l)| VarianceRow {
            component: j + 1,
            eigenvalue: l,
            std_dev: l.sqrt(),
            proportion: model.explained[j],
            cumulative: model.cumulative[j],
        })
        .collect()
}

pub fn variance_table_delimited(model: &PcaModel, sep: char) -> String {
    let rows = variance_table(model);
    let mut s = String::from("Importance");
    for r in &rows {
        s.push_str(&format!("{sep}Comp.{}", r.component));
    }
    s.push('\n');
    let line = |label: &str, f: &dyn Fn(&VarianceRow) -> f64| {
        let mut l = label.to_string();
        for r in &rows {
            l.push_str(&format!("{sep}{:.7}", f(r)));
        }
        l.push('\n');
        l
    };
    s.push_str(&line("Standard deviation", &|r| r.std_dev));
    s.push_str(&line("Proportion of Variance", &|r| r.proportion));
    s.push_str(&line("Cumulative Proportion", &|r| r.cumulative));
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    EigenvalueGtOne,
    ElbowOnGtOne,
    Manual(usize),
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy::ElbowOnGtOne
    }
}

impl fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionPolicy::EigenvalueGtOne => write!(f, "eigenvalue_gt_one"),
            SelectionPolicy::ElbowOnGtOne => write!(f, "elbow_on_gt_one"),
            SelectionPolicy::Manual(q) => write!(f, "manual:{q}"),
        }
    }
}

impl FromStr for SelectionPolicy {
    type Err = Error;

    /// Accepts `eigenvalue_gt_one`, `elbow_on_gt_one`, `manual:<q>` or a bare integer.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "eigenvalue_gt_one" | "kaiser" => Ok(SelectionPolicy::EigenvalueGtOne),
            "elbow_on_gt_one" | "elbow" => Ok(SelectionPolicy::ElbowOnGtOne),
            _ => {
                let num = s.strip_prefix("manual:").or_else(|| s.strip_prefix("manual=")).unwrap_or(s);
                num.parse::<usize>()
                    .map(SelectionPolicy::Manual)
                    .map_err(|_| Error::Argument(format!("unknown component policy {s:?}")))
            }
        }
    }
}

/// Number of components to keep.
///
/// The elbow rule looks only at components with eigenvalue above 1 and keeps
/// everything up to the component that sits right after the largest drop
/// between consecutive eigenvalues in that set.
pub fn select_components(model: &PcaModel, policy: SelectionPolicy) -> Result<usize> {
    let p = model.eigenvalues.len();
    match policy {
        SelectionPolicy::Manual(q) => {
            if q < 1 || q > p {
                return Err(Error::Range { what: "q", value: q as i64, lo: 1, hi: p as i64 });
            }
            Ok(q)
        }
        SelectionPolicy::EigenvalueGtOne => Ok(model.eigenvalues.iter().filter(|&&l| l > 1.0).count().max(1)),
        SelectionPolicy::ElbowOnGtOne => {
            let m = model.eigenvalues.iter().take_while(|&&l| l > 1.0).count();
            if m <= 1 {
                return Ok(1);
            }
            let mut best = 0;
            let mut best_gap = f64::NEG_INFINITY;
            for j in 0..m - 1 {
                let gap = model.eigenvalues[j] - model.eigenvalues[j + 1];
                if gap > best_gap {
                    best_gap = gap;
                    best = j;
                }
            }
            Ok(best + 2)
        }
    }
}
