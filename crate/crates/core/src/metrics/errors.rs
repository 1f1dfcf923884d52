use nalgebra::DVector;

use super::{row_to_vector_distance, VerificationCase};
use crate::error::{check_dim, Error, Result};

/// Member nearest the observation over the whole window (lowest index on
/// ties) and its error `scenario − actual`.
pub fn closest_scenario(case: &VerificationCase) -> (usize, DVector<f64>) {
    let mut best = (0, f64::INFINITY);
    for i in 0..case.members() {
        let d = row_to_vector_distance(&case.ensemble, i, &case.actual);
        if d < best.1 {
            best = (i, d);
        }
    }
    let idx = best.0;
    let err = case.ensemble.row(idx).transpose() - &case.actual;
    (idx, err)
}

/// Closest-scenario error statistics per forecast hour. Positive bias means
/// over-forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonErrors {
    pub rmse: DVector<f64>,
    pub mae: DVector<f64>,
    pub bias: DVector<f64>,
}

pub fn horizon_errors(cases: &[VerificationCase]) -> Result<HorizonErrors> {
    let first = cases
        .first()
        .ok_or_else(|| Error::invalid("no verification cases"))?;
    let q = first.horizon();
    let mut sq = DVector::zeros(q);
    let mut abs = DVector::zeros(q);
    let mut sum = DVector::zeros(q);
    for c in cases {
        check_dim("case horizon", q, c.horizon())?;
        let (_, e) = closest_scenario(c);
        for h in 0..q {
            sq[h] += e[h] * e[h];
            abs[h] += e[h].abs();
            sum[h] += e[h];
        }
    }
    let n = cases.len() as f64;
    Ok(HorizonErrors {
        rmse: sq.map(|v: f64| (v / n).sqrt()),
        mae: abs / n,
        bias: sum / n,
    })
}
