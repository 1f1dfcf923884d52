//! Fixtures shared by the benchmarks, sized like the full application:
//! 84-hour target, four predictor series, 100 atoms.

use nalgebra::{DMatrix, DVector};
use scenario_core::draws::{std_normal, substream};
use scenario_core::{DataMatrix, Dictionary, ModelEstimate, Standardizer, VerificationCase};

pub const Q: usize = 84;
pub const R: usize = 336;
pub const K: usize = 100;

pub fn data(n: usize, seed: u64) -> DataMatrix {
    let mut rng = substream(seed, 0, &[]);
    DataMatrix {
        z: DMatrix::from_fn(Q + R, n, |_, _| std_normal(&mut rng)),
        q: Q,
        r: R,
    }
}

pub fn model(seed: u64) -> ModelEstimate {
    let mut rng = substream(seed, 1, &[]);
    let t = Q + R;
    let atoms = DMatrix::from_fn(t, K, |_, _| std_normal(&mut rng) / (t as f64).sqrt());
    ModelEstimate::new(
        Dictionary::new(atoms, Q, R).unwrap(),
        DVector::from_element(K, 0.1),
        1.0,
        20.0,
        Standardizer::identity(t),
    )
    .unwrap()
}

pub fn case(members: usize, seed: u64) -> VerificationCase {
    let mut rng = substream(seed, 2, &[]);
    VerificationCase::new(
        DMatrix::from_fn(members, Q, |_, _| std_normal(&mut rng)),
        DVector::from_fn(Q, |_, _| std_normal(&mut rng)),
    )
    .unwrap()
}
