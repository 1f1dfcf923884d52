use rand::Rng;

use nalgebra::DMatrix;

use super::{row_distance, row_to_vector_distance, VerificationCase};
use crate::draws::{self, tag};
use crate::error::{Error, Result};

/// Prim's algorithm on an implicit complete graph.
fn prim<F: Fn(usize, usize) -> f64>(n: usize, dist: F) -> f64 {
    let mut in_tree = vec![false; n];
    let mut key = vec![f64::INFINITY; n];
    key[0] = 0.0;
    let mut total = 0.0;
    for _ in 0..n {
        let mut u = usize::MAX;
        let mut best = f64::INFINITY;
        for v in 0..n {
            if !in_tree[v] && key[v] < best {
                best = key[v];
                u = v;
            }
        }
        in_tree[u] = true;
        total += best;
        for v in 0..n {
            if !in_tree[v] {
                let d = dist(u, v);
                if d < key[v] {
                    key[v] = d;
                }
            }
        }
    }
    total
}

/// Total length of a Euclidean minimum spanning tree over the rows of
/// `points`.
pub fn mst_length(points: &DMatrix<f64>) -> Result<f64> {
    let n = points.nrows();
    if n < 2 {
        return Err(Error::invalid(
            "minimum spanning tree needs at least two points",
        ));
    }
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = row_distance(points, i, j);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    Ok(prim(n, |i, j| dist[i * n + j]))
}

/// Ascending rank (1-based) of the ensemble's own MST length among that
/// length and the `m` lengths obtained by swapping each member for the
/// observation. Ties are broken uniformly with a stream keyed by `tie_seed`.
pub fn mst_rank(case: &VerificationCase, tie_seed: u64) -> usize {
    let m = case.members();
    let ens = &case.ensemble;
    let mut pair = vec![0.0; m * m];
    for i in 0..m {
        for j in i + 1..m {
            let d = row_distance(ens, i, j);
            pair[i * m + j] = d;
            pair[j * m + i] = d;
        }
    }
    let to_actual: Vec<f64> = (0..m)
        .map(|i| row_to_vector_distance(ens, i, &case.actual))
        .collect();

    let own = prim(m, |i, j| pair[i * m + j]);
    let swapped = (0..m).map(|replaced| {
        prim(m, |i, j| {
            if i == replaced {
                to_actual[j]
            } else if j == replaced {
                to_actual[i]
            } else {
                pair[i * m + j]
            }
        })
    });

    let tol = 1e-12 * own.abs().max(1.0);
    let (mut below, mut ties) = (0usize, 0usize);
    for len in swapped {
        if (len - own).abs() <= tol {
            ties += 1;
        } else if len < own {
            below += 1;
        }
    }
    let offset = if ties == 0 {
        0
    } else {
        let mut rng = draws::substream(tie_seed, tag::TIES, &[]);
        rng.random_range(0..=ties)
    };
    1 + below + offset
}

/// Ranks for many cases; case `i` uses a tie stream keyed by `(seed, i)`.
pub fn mst_ranks(cases: &[VerificationCase], seed: u64) -> Vec<usize> {
    use rayon::prelude::*;
    cases
        .par_iter()
        .enumerate()
        .map(|(i, c)| mst_rank(c, seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)))
        .collect()
}
