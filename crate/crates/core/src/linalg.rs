use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub(crate) fn check_symmetric(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Numeric(format!("matrix is {}x{}, not square", m.nrows(), m.ncols())));
    }
    let asym = (m - m.transpose()).abs().max();
    if !(asym <= tol) {
        return Err(Error::Numeric(format!("matrix not symmetric (max asymmetry {asym:e})")));
    }
    Ok(())
}

/// Eigenpairs of a symmetric matrix sorted by ascending eigenvalue.
/// Ties keep the solver order so results are reproducible bit for bit.
pub(crate) fn sym_eigen_ascending(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Flip each column so that its largest-magnitude entry is positive
/// (first such entry on exact ties). Returns the applied signs.
pub(crate) fn normalize_column_signs(m: &mut DMatrix<f64>) -> Vec<f64> {
    let mut signs = Vec::with_capacity(m.ncols());
    for j in 0..m.ncols() {
        let mut best = 0usize;
        for i in 1..m.nrows() {
            if m[(i, j)].abs() > m[(best, j)].abs() {
                best = i;
            }
        }
        let s = if m[(best, j)] < 0.0 { -1.0 } else { 1.0 };
        if s < 0.0 {
            m.column_mut(j).neg_mut();
        }
        signs.push(s);
    }
    signs
}

/// Columnwise-orthonormal p x q matrix from the QR factor of a Gaussian draw.
pub(crate) fn random_orthonormal<R: Rng>(p: usize, q: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(p, q, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q_mat = g.qr().q();
    q_mat.columns(0, q).into_owned()
}

pub(crate) fn frobenius_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}
