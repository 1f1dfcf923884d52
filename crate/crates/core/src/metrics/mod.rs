//! Ensemble verification: MST rank histograms for calibration, closest
//! scenario error profiles, convex-hull distance and ensemble diameter.

mod errors;
mod hull;
mod mst;
mod rank;

pub use errors::{closest_scenario, horizon_errors, HorizonErrors};
pub use hull::{hull_distance, project_simplex, HullDistance};
pub use mst::{mst_length, mst_rank, mst_ranks};
pub use rank::{rank_histogram, RankHistogram};

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// An ensemble (`m x q`, one scenario per row) and the observed target.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationCase {
    pub ensemble: DMatrix<f64>,
    pub actual: DVector<f64>,
}

impl VerificationCase {
    pub fn new(ensemble: DMatrix<f64>, actual: DVector<f64>) -> Result<Self> {
        if ensemble.nrows() < 2 {
            return Err(Error::invalid("verification needs at least two scenarios"));
        }
        check_dim(
            "actual length vs ensemble horizon",
            ensemble.ncols(),
            actual.len(),
        )?;
        if ensemble.iter().chain(actual.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "verification case contains non-finite values",
            ));
        }
        Ok(VerificationCase { ensemble, actual })
    }

    pub fn members(&self) -> usize {
        self.ensemble.nrows()
    }

    pub fn horizon(&self) -> usize {
        self.ensemble.ncols()
    }
}

/// Distance between rows `i` and `j`.
pub(crate) fn row_distance(m: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    (0..m.ncols())
        .map(|c| {
            let d = m[(i, c)] - m[(j, c)];
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn row_to_vector_distance(m: &DMatrix<f64>, i: usize, v: &DVector<f64>) -> f64 {
    (0..m.ncols())
        .map(|c| {
            let d = m[(i, c)] - v[c];
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Largest pairwise Euclidean distance between ensemble members.
pub fn sharpness(ensemble: &DMatrix<f64>) -> Result<f64> {
    let m = ensemble.nrows();
    if m < 2 {
        return Err(Error::invalid("sharpness needs at least two members"));
    }
    let mut best = 0.0f64;
    for i in 0..m {
        for j in i + 1..m {
            best = best.max(row_distance(ensemble, i, j));
        }
    }
    Ok(best)
}
