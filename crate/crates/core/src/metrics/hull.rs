use nalgebra::{DMatrix, DVector};

use super::{row_to_vector_distance, VerificationCase};

const MAX_ITERATIONS: usize = 10_000;
const OBJECTIVE_TOLERANCE: f64 = 1e-12;

/// Euclidean projection onto `{λ : λ >= 0, Σλ = 1}` (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let candidate = (cumsum - 1.0) / (i + 1) as f64;
        if ui - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Distance from the observation to the ensemble's convex hull.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HullDistance {
    /// `raw / sqrt(q)`: root-mean-square units per horizon.
    pub distance: f64,
    pub raw: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Minimizes `||S^T λ − actual||` over the simplex by projected gradient,
/// starting from the closest member so the result never exceeds the
/// closest-scenario distance. A finite minimum-norm-point refinement follows,
/// since gradient steps crawl on thin, nearly flat hulls.
pub fn hull_distance(case: &VerificationCase) -> HullDistance {
    let m = case.members();
    let q = case.horizon();
    // Centring on the observation removes the common offset, which would
    // otherwise dominate the Gram spectrum.
    let centred = DMatrix::from_fn(m, q, |i, h| case.ensemble[(i, h)] - case.actual[h]);
    let gram = &centred * centred.transpose();

    let start = (0..m)
        .map(|i| (i, row_to_vector_distance(&case.ensemble, i, &case.actual)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);

    let (f_pg, pg_converged, iterations) = projected_gradient(&gram, start);
    let (f_mnp, mnp_optimal) = min_norm_point(&gram, start);
    let f = f_pg.min(f_mnp);
    let raw = f.sqrt();
    HullDistance {
        distance: raw / (q as f64).sqrt(),
        raw,
        converged: pg_converged || mnp_optimal,
        iterations,
    }
}

fn objective(gram: &DMatrix<f64>, l: &DVector<f64>) -> f64 {
    l.dot(&(gram * l)).max(0.0)
}

/// Accelerated projected gradient on `f(λ) = λ^T G λ` with a function-value
/// restart. Stops when the plain projected-gradient step from the current
/// point changes the distance by less than the tolerance. Returns
/// `(f, converged, iterations)`.
fn projected_gradient(gram: &DMatrix<f64>, start: usize) -> (f64, bool, usize) {
    let m = gram.nrows();
    let mut lambda = DVector::zeros(m);
    lambda[start] = 1.0;
    let mut f = objective(gram, &lambda);
    let lipschitz = 2.0 * gram.clone().symmetric_eigenvalues().max();
    if f == 0.0 || lipschitz <= 0.0 {
        return (f, true, 0);
    }
    let step = 1.0 / lipschitz;
    let descend = |l: &DVector<f64>| {
        let grad = gram * l * 2.0;
        let moved: Vec<f64> = (0..m).map(|j| l[j] - step * grad[j]).collect();
        DVector::from_vec(project_simplex(&moved))
    };
    let mut momentum_point = lambda.clone();
    let mut t = 1.0f64;
    for it in 1..=MAX_ITERATIONS {
        let plain = descend(&lambda);
        let f_plain = objective(gram, &plain);
        if (f.sqrt() - f_plain.sqrt()).abs() < OBJECTIVE_TOLERANCE {
            return (f.min(f_plain), true, it);
        }
        let next = descend(&momentum_point);
        let f_next = objective(gram, &next);
        if f_next <= f {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            momentum_point = &next + (&next - &lambda) * ((t - 1.0) / t_next);
            lambda = next;
            f = f_next;
            t = t_next;
        } else {
            lambda = plain;
            f = f_plain;
            momentum_point = lambda.clone();
            t = 1.0;
        }
    }
    (f, false, MAX_ITERATIONS)
}

/// Wolfe's minimum-norm-point method over the centred members, in Gram form.
/// Returns `(f, optimal)`; `optimal` is set when the optimality test passed.
fn min_norm_point(gram: &DMatrix<f64>, start: usize) -> (f64, bool) {
    let m = gram.nrows();
    let scale = gram.diagonal().max().max(f64::MIN_POSITIVE);
    let eps = 1e-14;
    let mut lambda = DVector::zeros(m);
    lambda[start] = 1.0;
    let mut support = vec![start];
    for _ in 0..(50 * m) {
        let g = gram * &lambda;
        let xx = lambda.dot(&g);
        let (j, gj) = g
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or((0, 0.0));
        if xx - gj <= 1e-12 * scale || support.contains(&j) {
            return (xx.max(0.0), xx - gj <= 1e-12 * scale);
        }
        support.push(j);
        loop {
            let Some(alpha) = affine_minimizer(gram, &support) else {
                return (objective(gram, &lambda), false);
            };
            if alpha.iter().all(|&a| a > eps) {
                lambda.fill(0.0);
                for (&i, &a) in support.iter().zip(alpha.iter()) {
                    lambda[i] = a;
                }
                break;
            }
            let theta = support
                .iter()
                .zip(alpha.iter())
                .filter(|(_, &a)| a <= eps)
                .map(|(&i, &a)| lambda[i] / (lambda[i] - a))
                .fold(1.0f64, f64::min);
            for (&i, &a) in support.iter().zip(alpha.iter()) {
                lambda[i] += theta * (a - lambda[i]);
            }
            support.retain(|&i| lambda[i] > eps);
            for i in 0..m {
                if !support.contains(&i) {
                    lambda[i] = 0.0;
                }
            }
            let total = lambda.sum();
            lambda /= total;
        }
    }
    (objective(gram, &lambda), false)
}

/// Weights summing to one that minimize the norm of the combination of the
/// members in `support`.
fn affine_minimizer(gram: &DMatrix<f64>, support: &[usize]) -> Option<DVector<f64>> {
    let n = support.len();
    let mut kkt = DMatrix::zeros(n + 1, n + 1);
    for (a, &i) in support.iter().enumerate() {
        for (b, &j) in support.iter().enumerate() {
            kkt[(a, b)] = gram[(i, j)];
        }
        kkt[(a, n)] = 1.0;
        kkt[(n, a)] = 1.0;
    }
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = 1.0;
    let sol = kkt.lu().solve(&rhs)?;
    let alpha = sol.rows(0, n).clone_owned();
    alpha.iter().all(|v| v.is_finite()).then_some(alpha)
}
