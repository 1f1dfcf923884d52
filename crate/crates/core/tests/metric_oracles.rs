//! Verification metrics against brute-force or closed-form references.

use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use proptest::prelude::*;
use scenario_core::draws::{std_normal, substream};
use scenario_core::metrics::mst_ranks;
use scenario_core::{
    closest_scenario, horizon_errors, hull_distance, mst_length, rank_histogram, sharpness,
    VerificationCase,
};

fn dist(a: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    (a.row(i) - a.row(j)).norm()
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    r
}

/// Minimum over every (n−1)-edge subset that connects all points.
fn brute_force_mst(points: &DMatrix<f64>) -> f64 {
    let n = points.nrows();
    let edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << edges.len()) {
        if mask.count_ones() as usize != n - 1 {
            continue;
        }
        let mut parent: Vec<usize> = (0..n).collect();
        let mut total = 0.0;
        let mut acyclic = true;
        for (e, &(i, j)) in edges.iter().enumerate() {
            if mask & (1 << e) != 0 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a == b {
                    acyclic = false;
                    break;
                }
                parent[a] = b;
                total += dist(points, i, j);
            }
        }
        if acyclic {
            best = best.min(total);
        }
    }
    best
}

#[test]
fn mst_matches_exhaustive_search() {
    let mut rng = substream(1, 0, &[]);
    for set in 0..100 {
        let n = 2 + set % 5;
        let dim = 1 + set % 4;
        let pts = DMatrix::from_fn(n, dim, |_, _| std_normal(&mut rng));
        let fast = mst_length(&pts).unwrap();
        let slow = brute_force_mst(&pts);
        assert!((fast - slow).abs() <= 1e-9, "set {set}: {fast} vs {slow}");
    }
}

fn segment_distance(p: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Distance from `p` to triangle `abc`: the plane projection when it falls
/// inside, else the nearest edge.
fn triangle_distance(
    p: &DVector<f64>,
    a: &DVector<f64>,
    b: &DVector<f64>,
    c: &DVector<f64>,
) -> f64 {
    let (u, v, w) = (b - a, c - a, p - a);
    let gram = dmatrix![u.dot(&u), u.dot(&v); u.dot(&v), v.dot(&v)];
    let rhs = dvector![u.dot(&w), v.dot(&w)];
    if let Some(coef) = gram.lu().solve(&rhs) {
        if coef[0] >= 0.0 && coef[1] >= 0.0 && coef[0] + coef[1] <= 1.0 {
            return (&w - &u * coef[0] - &v * coef[1]).norm();
        }
    }
    segment_distance(p, a, b)
        .min(segment_distance(p, b, c))
        .min(segment_distance(p, a, c))
}

#[test]
fn hull_matches_exact_triangle_projection() {
    check_triangles(|_| 2, 2);
    check_triangles(|tri| 3 + tri % 3, 12);
}

fn check_triangles(horizon: impl Fn(usize) -> usize, seed: u64) {
    let mut rng = substream(seed, 0, &[]);
    for tri in 0..100 {
        let q = horizon(tri);
        let ens = DMatrix::from_fn(3, q, |_, _| std_normal(&mut rng));
        let actual = DVector::from_fn(q, |_, _| 1.5 * std_normal(&mut rng));
        let rows: Vec<DVector<f64>> = (0..3).map(|i| ens.row(i).transpose()).collect();
        let exact = triangle_distance(&actual, &rows[0], &rows[1], &rows[2]);
        let got = hull_distance(&VerificationCase::new(ens, actual).unwrap());
        assert!(got.converged);
        assert!(
            (got.raw - exact).abs() <= 1e-6,
            "triangle {tri}: {} vs {exact}",
            got.raw
        );
        assert!((got.distance - exact / (q as f64).sqrt()).abs() <= 1e-6);
    }
}

#[test]
fn exchangeable_observations_give_flat_rank_histogram() {
    let (m, q, trials) = (5, 3, 10_000);
    let mut rng = substream(3, 0, &[]);
    let cases: Vec<VerificationCase> = (0..trials)
        .map(|_| {
            let ens = DMatrix::from_fn(m, q, |_, _| std_normal(&mut rng));
            let actual = DVector::from_fn(q, |_, _| std_normal(&mut rng));
            VerificationCase::new(ens, actual).unwrap()
        })
        .collect();
    let hist = rank_histogram(&mst_ranks(&cases, 11), m).unwrap();
    assert_eq!(hist.cases(), trials as u64);
    assert!(hist.p_value > 0.01, "{hist:?}");
}

#[test]
fn distant_observations_pile_into_the_top_rank() {
    let mut rng = substream(4, 0, &[]);
    let cases: Vec<VerificationCase> = (0..200)
        .map(|_| {
            let ens = DMatrix::from_fn(4, 2, |_, _| std_normal(&mut rng));
            VerificationCase::new(ens, dvector![50.0, 50.0]).unwrap()
        })
        .collect();
    let hist = rank_histogram(&mst_ranks(&cases, 0), 4).unwrap();
    // The ensemble's own tree is the shortest, so every case ranks first.
    assert_eq!(hist.counts, vec![200, 0, 0, 0, 0]);
    assert!(hist.p_value < 1e-10);
}

#[test]
fn horizon_fixture() {
    let c1 = VerificationCase::new(dmatrix![1.0, -1.0; 10.0, 10.0], dvector![0.0, 0.0]).unwrap();
    let c2 = VerificationCase::new(dmatrix![-20.0, 5.0; 3.0, 1.0], dvector![0.0, 0.0]).unwrap();
    assert_eq!(closest_scenario(&c2).0, 1);
    let e = horizon_errors(&[c1, c2]).unwrap();
    assert!((e.rmse - dvector![5f64.sqrt(), 1.0]).amax() < 1e-15);
    assert_eq!(e.mae, dvector![2.0, 1.0]);
    assert_eq!(e.bias, dvector![2.0, 0.0]);
}

fn arb_case() -> impl Strategy<Value = VerificationCase> {
    (2usize..7, 1usize..6).prop_flat_map(|(m, q)| {
        (
            prop::collection::vec(-10.0f64..10.0, m * q),
            prop::collection::vec(-10.0f64..10.0, q),
        )
            .prop_map(move |(e, a)| {
                VerificationCase::new(DMatrix::from_row_slice(m, q, &e), DVector::from_vec(a))
                    .unwrap()
            })
    })
}

proptest! {
    #[test]
    fn hull_never_exceeds_closest_member(case in arb_case()) {
        let (_, err) = closest_scenario(&case);
        let hull = hull_distance(&case);
        prop_assert!(hull.raw <= err.norm() + 1e-12);
        prop_assert!((hull.distance * (case.horizon() as f64).sqrt() - hull.raw).abs() < 1e-9);
    }

    #[test]
    fn convex_combinations_are_inside(case in arb_case(), w in prop::collection::vec(0.01f64..1.0, 6)) {
        let m = case.members();
        let total: f64 = w[..m].iter().sum();
        let lambda = DVector::from_iterator(m, w[..m].iter().map(|v| v / total));
        let inside = (case.ensemble.transpose() * lambda).clone_owned();
        let hull = hull_distance(&VerificationCase::new(case.ensemble.clone(), inside).unwrap());
        let scale = sharpness(&case.ensemble).unwrap().max(1.0);
        prop_assert!(hull.converged);
        // sqrt of a rounding-level objective
        prop_assert!(hull.raw <= 1e-6 * scale, "{hull:?}");
    }

    #[test]
    fn points_beyond_a_face_are_outside(case in arb_case(), gap in 0.5f64..5.0) {
        // Every hull point has first coordinate at most the column maximum.
        let top = case.ensemble.column(0).max();
        let mut actual = case.ensemble.row(0).transpose();
        actual[0] = top + gap;
        let hull = hull_distance(&VerificationCase::new(case.ensemble.clone(), actual).unwrap());
        prop_assert!(hull.raw >= gap - 1e-9);
    }

    #[test]
    fn error_profiles_are_ordered(cases in prop::collection::vec(arb_case(), 1..5)) {
        let q = cases[0].horizon();
        let cases: Vec<_> = cases.into_iter().filter(|c| c.horizon() == q).collect();
        let e = horizon_errors(&cases).unwrap();
        for h in 0..q {
            prop_assert!(e.mae[h] <= e.rmse[h] + 1e-12);
            prop_assert!(e.bias[h].abs() <= e.mae[h] + 1e-12);
        }
    }

    #[test]
    fn sharpness_is_largest_pairwise_distance(case in arb_case()) {
        let ens = &case.ensemble;
        let m = ens.nrows();
        let mut best = 0.0f64;
        for i in 0..m {
            for j in 0..m {
                best = best.max(dist(ens, i, j));
            }
        }
        prop_assert!((sharpness(ens).unwrap() - best).abs() < 1e-12);
    }

    #[test]
    fn mst_rank_in_range(case in arb_case(), seed in any::<u64>()) {
        let r = scenario_core::mst_rank(&case, seed);
        prop_assert!((1..=case.members() + 1).contains(&r));
    }
}
