//! Regional innovation scoreboard analytics: correlation screening, PCA,
//! factorial / reduced k-means, centroid-based labeling, a membership
//! classifier, what-if scenarios and KS dataset-shift detection.

pub mod bundle;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod jdrc;
pub mod labeling;
mod linalg;
pub mod pca;
pub mod pipeline;
pub mod shift;
pub mod whatif;

pub use error::{Error, Result};

/// Row-major `Vec<Vec<f64>>` (de)serialization for dense matrices, so JSON
/// documents stay readable from any language.
pub(crate) mod mat_serde {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        (m.ncols(), rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let (ncols, rows) = <(usize, Vec<Vec<f64>>)>::deserialize(d)?;
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }
}
