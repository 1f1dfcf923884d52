//! Random variates and deterministic RNG substreams.
//!
//! Gamma and Beta variates are generated here rather than through
//! `rand_distr` so that a given seed yields the same chain regardless of the
//! distribution crate's internals. Gamma uses Marsaglia–Tsang squeeze
//! sampling; shapes below one are boosted through `G(a) = G(a + 1) U^(1/a)`,
//! carried in log space so that tiny shapes (the beta-process prior has
//! `a / K ~ 0.01`) never underflow to an exact zero ratio.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// The generator used for every stochastic operation in the crate.
pub type ChainRng = ChaCha8Rng;

/// Substream tags. Each update group of a sweep draws from its own stream so
/// instance-parallel execution matches sequential execution bit for bit.
pub(crate) mod tag {
    pub const INIT: u64 = 0x494e_4954;
    pub const ATOMS: u64 = 0x41_544f;
    pub const INSTANCE: u64 = 0x494e_5354;
    pub const GLOBALS: u64 = 0x474c_4f42;
    pub const FORECAST: u64 = 0x4643_5354;
    pub const SIMULATE: u64 = 0x5349_4d55;
    pub const TIES: u64 = 0x5449_4553;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent generator keyed by `(seed, tag, keys...)`.
pub fn substream(seed: u64, tag: u64, keys: &[u64]) -> ChainRng {
    let mut h = splitmix64(seed ^ splitmix64(tag));
    for &k in keys {
        h = splitmix64(h ^ k);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Stable 64-bit FNV-1a hash, used to key per-instance streams by label.
pub fn label_key(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[inline]
pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

#[inline]
pub fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, precision: f64) -> f64 {
    mean + std_normal(rng) / precision.sqrt()
}

/// Uniform on the open interval (0, 1).
#[inline]
fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Marsaglia–Tsang for shape >= 1, unit rate.
fn gamma_ge1<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let (x, v) = loop {
            let x = std_normal(rng);
            let v = 1.0 + c * x;
            if v > 0.0 {
                break (x, v * v * v);
            }
        };
        let u = open_unit(rng);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Log of a unit-rate Gamma(shape) variate.
pub fn ln_gamma_variate<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    debug_assert!(shape > 0.0);
    if shape >= 1.0 {
        gamma_ge1(rng, shape).ln()
    } else {
        let g = gamma_ge1(rng, shape + 1.0);
        g.ln() + open_unit(rng).ln() / shape
    }
}

/// Gamma variate in shape–rate form (mean `shape / rate`).
pub fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    ln_gamma_variate(rng, shape).exp() / rate
}

/// Beta variate as `X / (X + Y)` with `X ~ Gamma(alpha)`, `Y ~ Gamma(beta)`.
pub fn beta<R: Rng + ?Sized>(rng: &mut R, alpha: f64, beta: f64) -> f64 {
    let lx = ln_gamma_variate(rng, alpha);
    let ly = ln_gamma_variate(rng, beta);
    // x / (x + y) = 1 / (1 + exp(ly - lx))
    let p = 1.0 / (1.0 + (ly - lx).exp());
    p.clamp(0.0, 1.0)
}

#[inline]
pub fn bernoulli<R: Rng + ?Sized>(rng: &mut R, p: f64) -> bool {
    let u: f64 = rng.random();
    u < p
}
