//! Predict-time scenario generation and forward simulation.
//!
//! With the point estimate held fixed, the coefficients and activations of a
//! new instance are sampled against the predictor block `D_x` only; each
//! retained state maps to a scenario `D_y (s ⊙ b)`. Observation noise is never
//! added to scenarios.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::data::Standardizer;
use crate::draws::{self, tag, ChainRng};
use crate::error::{check_dim, Error, Result};
use crate::gibbs::PairContext;
use crate::model::{
    DataMatrix, Dictionary, GibbsState, Hyperparams, Instance, Instances, ModelEstimate,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastConfig {
    pub n_scenarios: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            n_scenarios: 21,
            burn_in: 100,
            thinning: 5,
            seed: 0,
        }
    }
}

impl ForecastConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_scenarios == 0 {
            return Err(Error::invalid("n_scenarios must be at least 1"));
        }
        if self.thinning == 0 {
            return Err(Error::invalid("thinning must be at least 1"));
        }
        Ok(())
    }
}

/// Scenarios for one instance, in physical units. Row `j` is scenario `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub instance_id: String,
    pub scenarios: DMatrix<f64>,
    pub mean: DVector<f64>,
}

impl Ensemble {
    pub fn new(instance_id: impl Into<String>, scenarios: DMatrix<f64>) -> Result<Self> {
        if scenarios.nrows() == 0 || scenarios.ncols() == 0 {
            return Err(Error::invalid("ensemble must have at least one scenario"));
        }
        if scenarios.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("ensemble contains non-finite values"));
        }
        let mean = scenarios.row_mean().transpose();
        Ok(Ensemble {
            instance_id: instance_id.into(),
            scenarios,
            mean,
        })
    }

    pub fn len(&self) -> usize {
        self.scenarios.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.nrows() == 0
    }

    pub fn horizon(&self) -> usize {
        self.scenarios.ncols()
    }
}

/// Single-instance predict-time chain over `(s, b)` with `Θ̂` frozen.
pub struct PredictChain<'a> {
    theta: &'a ModelEstimate,
    predictor_atoms: DMatrix<f64>,
    norms: Vec<f64>,
    s: Vec<f64>,
    b: Vec<bool>,
    residual: Vec<f64>,
}

impl<'a> PredictChain<'a> {
    /// Starts a chain for a standardized predictor window, drawing the initial
    /// `(s, b)` from the prior.
    pub fn new<R: Rng>(
        theta: &'a ModelEstimate,
        x_std: &DVector<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        check_dim("predictor window", theta.r(), x_std.len())?;
        let k = theta.k();
        let b: Vec<bool> = (0..k).map(|j| draws::bernoulli(rng, theta.pi[j])).collect();
        let s: Vec<f64> = (0..k)
            .map(|_| draws::normal(rng, 0.0, theta.gamma_s))
            .collect();
        Self::with_code(theta, x_std, s, b)
    }

    /// Starts a chain from an explicit `(s, b)`.
    pub fn with_code(
        theta: &'a ModelEstimate,
        x_std: &DVector<f64>,
        s: Vec<f64>,
        b: Vec<bool>,
    ) -> Result<Self> {
        check_dim("predictor window", theta.r(), x_std.len())?;
        check_dim("coefficient vector", theta.k(), s.len())?;
        check_dim("activation vector", theta.k(), b.len())?;
        let predictor_atoms = theta.dictionary.predictor_block().clone_owned();
        let norms = predictor_atoms
            .column_iter()
            .map(|c| c.norm_squared())
            .collect();
        let w = DVector::from_fn(s.len(), |k, _| if b[k] { s[k] } else { 0.0 });
        let residual = (x_std - &predictor_atoms * w).as_slice().to_vec();
        Ok(PredictChain {
            theta,
            predictor_atoms,
            norms,
            s,
            b,
            residual,
        })
    }

    /// One pass over all atoms: the training `(b_k, s_k)` conditionals with
    /// `d_k` restricted to its predictor rows.
    pub fn sweep<R: Rng>(&mut self, rng: &mut R) {
        let ctx = PairContext {
            atoms: self.predictor_atoms.as_slice(),
            norms: &self.norms,
            pi: self.theta.pi.as_slice(),
            t: self.predictor_atoms.nrows(),
            gamma_s: self.theta.gamma_s,
            gamma_e: self.theta.gamma_e,
        };
        ctx.update_code(&mut self.s, &mut self.b, &mut self.residual, rng);
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.s
    }

    pub fn activations(&self) -> &[bool] {
        &self.b
    }

    /// `D_y (s ⊙ b)` in standardized units.
    pub fn scenario_standardized(&self) -> DVector<f64> {
        let w = DVector::from_fn(self.s.len(), |k, _| if self.b[k] { self.s[k] } else { 0.0 });
        self.theta.dictionary.target_block() * w
    }

    /// The current scenario in physical units.
    pub fn scenario(&self) -> Result<DVector<f64>> {
        self.theta
            .standardizer
            .destandardize_y(&self.scenario_standardized())
    }
}

/// Standalone form of one predict-time sweep.
pub fn predict_sweep<R: Rng>(
    theta: &ModelEstimate,
    x_std: &DVector<f64>,
    s: Vec<f64>,
    b: Vec<bool>,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut chain = PredictChain::with_code(theta, x_std, s, b)?;
    chain.sweep(rng);
    Ok((chain.s, chain.b))
}

/// Stream for the chain of instance `id`.
pub fn forecast_rng(seed: u64, id: &str) -> ChainRng {
    draws::substream(seed, tag::FORECAST, &[draws::label_key(id)])
}

/// Scenario ensemble for one raw predictor window. After `burn_in` sweeps,
/// every `thinning`-th state is kept until `n_scenarios` are collected.
pub fn forecast(
    theta: &ModelEstimate,
    id: &str,
    x: &DVector<f64>,
    cfg: &ForecastConfig,
) -> Result<Ensemble> {
    cfg.validate()?;
    check_dim("predictor window", theta.r(), x.len())?;
    let x_std = theta.standardizer.standardize_x(x)?;
    let mut rng = forecast_rng(cfg.seed, id);
    let mut chain = PredictChain::new(theta, &x_std, &mut rng)?;
    for _ in 0..cfg.burn_in {
        chain.sweep(&mut rng);
    }
    let mut scenarios = DMatrix::zeros(cfg.n_scenarios, theta.q());
    for j in 0..cfg.n_scenarios {
        for _ in 0..cfg.thinning {
            chain.sweep(&mut rng);
        }
        scenarios
            .row_mut(j)
            .copy_from(&chain.scenario()?.transpose());
    }
    Ensemble::new(id, scenarios)
}

/// Forecasts every instance (in parallel); output order follows input order.
pub fn forecast_all(
    theta: &ModelEstimate,
    data: &Instances,
    cfg: &ForecastConfig,
) -> Result<Vec<Ensemble>> {
    check_dim("predictor window", theta.r(), data.r())?;
    data.as_slice()
        .par_iter()
        .map(|inst| forecast(theta, &inst.id, &inst.x, cfg))
        .collect()
}

/// Instances drawn from the generative model together with their latent
/// draws. `signals` holds the noise-free `D (b_i ⊙ s_i)` in the same units as
/// the instances.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub instances: Instances,
    pub signals: Vec<DVector<f64>>,
    pub s: DMatrix<f64>,
    pub b: DMatrix<bool>,
}

impl Simulation {
    /// Noise-free target window of instance `i`.
    pub fn target_signal(&self, i: usize) -> DVector<f64> {
        let q = self.instances.q();
        let sig = &self.signals[i];
        sig.rows(sig.len() - q, q).clone_owned()
    }
}

/// `(s, b, signal, noisy z)` for one simulated instance.
type InstanceDraw = (Vec<f64>, Vec<bool>, DVector<f64>, DVector<f64>);

/// Draws `n` instances `z_i = D (b_i ⊙ s_i) + e_i` from `theta`, mapped to
/// physical units through its standardizer.
pub fn simulate(theta: &ModelEstimate, n: usize, seed: u64) -> Result<Simulation> {
    if n == 0 {
        return Err(Error::invalid("simulation needs n >= 1"));
    }
    let (k, t, r) = (theta.k(), theta.dictionary.t(), theta.r());
    let st = &theta.standardizer;
    let draws: Vec<InstanceDraw> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = draws::substream(seed, tag::SIMULATE, &[i as u64]);
            let b: Vec<bool> = (0..k)
                .map(|j| draws::bernoulli(&mut rng, theta.pi[j]))
                .collect();
            let s: Vec<f64> = (0..k)
                .map(|_| draws::normal(&mut rng, 0.0, theta.gamma_s))
                .collect();
            let w = DVector::from_fn(k, |j, _| if b[j] { s[j] } else { 0.0 });
            let signal = theta.dictionary.atoms() * w;
            let noisy = DVector::from_fn(t, |j, _| {
                signal[j] + draws::normal(&mut rng, 0.0, theta.gamma_e)
            });
            (s, b, signal, noisy)
        })
        .collect();

    let mut s_mat = DMatrix::zeros(k, n);
    let mut b_mat = DMatrix::from_element(k, n, false);
    let mut signals = Vec::with_capacity(n);
    let mut items = Vec::with_capacity(n);
    for (i, (s, b, signal, noisy)) in draws.into_iter().enumerate() {
        s_mat.column_mut(i).copy_from_slice(&s);
        b_mat.column_mut(i).copy_from_slice(&b);
        let z = st.destandardize(&noisy)?;
        items.push(Instance::new(
            format!("sim-{i:05}"),
            z.rows(0, r).clone_owned(),
            z.rows(r, t - r).clone_owned(),
        )?);
        signals.push(st.destandardize(&signal)?);
    }
    Ok(Simulation {
        instances: Instances::new(items)?,
        signals,
        s: s_mat,
        b: b_mat,
    })
}

/// Draws `Θ = (D, pi, gamma_s, gamma_e)` from the priors, with an identity
/// standardizer.
pub fn sample_prior_model(
    hp: &Hyperparams,
    q: usize,
    r: usize,
    seed: u64,
) -> Result<ModelEstimate> {
    hp.validate()?;
    let t = q + r;
    let mut rng = draws::substream(seed, tag::SIMULATE, &[u64::MAX]);
    let mut atoms = DMatrix::zeros(t, hp.k);
    let sd = 1.0 / (t as f64).sqrt();
    for v in atoms.iter_mut() {
        *v = sd * draws::std_normal(&mut rng);
    }
    let (pa, pb) = hp.pi_prior();
    let pi = DVector::from_iterator(hp.k, (0..hp.k).map(|_| draws::beta(&mut rng, pa, pb)));
    let gamma_s = draws::gamma(&mut rng, hp.c, hp.d);
    let gamma_e = draws::gamma(&mut rng, hp.e, hp.f);
    ModelEstimate::new(
        Dictionary::new(atoms, q, r)?,
        pi,
        gamma_s,
        gamma_e,
        Standardizer::identity(t),
    )
}

/// Full forward draw: parameters from the priors, then `n` instances.
pub fn simulate_prior(
    hp: &Hyperparams,
    q: usize,
    r: usize,
    n: usize,
    seed: u64,
) -> Result<(ModelEstimate, Simulation)> {
    let theta = sample_prior_model(hp, q, r, seed)?;
    let sim = simulate(&theta, n, seed)?;
    Ok((theta, sim))
}

/// Fresh data `z_i ~ N(D (b_i ⊙ s_i), gamma_e^-1 I)` given a chain state.
pub fn resample_data<R: Rng>(state: &GibbsState, rng: &mut R) -> DataMatrix {
    let dict = &state.dictionary;
    let mut z = dict.atoms() * state.weights();
    for v in z.iter_mut() {
        *v += draws::normal(rng, 0.0, state.gamma_e);
    }
    DataMatrix {
        z,
        q: dict.q(),
        r: dict.r(),
    }
}
