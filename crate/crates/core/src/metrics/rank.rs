use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Histogram of ranks `1..=m+1` with a chi-square flatness test.
#[derive(Debug, Clone, PartialEq)]
pub struct RankHistogram {
    pub counts: Vec<u64>,
    pub chi_square: f64,
    pub p_value: f64,
}

impl RankHistogram {
    pub fn cases(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Bins ranks for an `m`-member ensemble and tests flatness against a
/// chi-square distribution with `m` degrees of freedom.
pub fn rank_histogram(ranks: &[usize], m: usize) -> Result<RankHistogram> {
    if m == 0 {
        return Err(Error::invalid("ensemble size must be positive"));
    }
    let mut counts = vec![0u64; m + 1];
    for &r in ranks {
        if r == 0 || r > m + 1 {
            return Err(Error::invalid(format!("rank {r} outside 1..={}", m + 1)));
        }
        counts[r - 1] += 1;
    }
    if ranks.is_empty() {
        return Ok(RankHistogram {
            counts,
            chi_square: 0.0,
            p_value: 1.0,
        });
    }
    let expected = ranks.len() as f64 / (m + 1) as f64;
    let chi_square = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum::<f64>();
    let dist = ChiSquared::new(m as f64).map_err(|e| Error::invalid(e.to_string()))?;
    let p_value = dist.sf(chi_square).clamp(0.0, 1.0);
    Ok(RankHistogram {
        counts,
        chi_square,
        p_value,
    })
}
