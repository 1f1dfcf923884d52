//! Gibbs sampler for the beta-Bernoulli factor model.
//!
//! One sweep visits, in order: every atom `d_k`; every `(b_ik, s_ik)` pair
//! with `s_ik` integrated out of the `b_ik` draw; every `pi_k`; then the two
//! precisions. Each group draws from its own substream keyed by
//! `(seed, sweep_count, ...)`, so the instance group can run in parallel and
//! still reproduce the sequential chain exactly.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::data::Standardizer;
use crate::draws::{self, tag, ChainRng};
use crate::error::{Error, Result};
use crate::model::{
    data_log_likelihood, DataMatrix, Dictionary, GibbsState, Hyperparams, Instances, ModelEstimate,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub burn_in: usize,
    pub total_sweeps: usize,
    pub seed: u64,
    pub hp: Hyperparams,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if self.total_sweeps <= self.burn_in {
            return Err(Error::invalid(format!(
                "total_sweeps ({}) must exceed burn_in ({})",
                self.total_sweeps, self.burn_in
            )));
        }
        Ok(())
    }
}

/// Conditional `N(mean, precision^-1 I)` of one atom.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomConditional {
    pub precision: f64,
    pub mean: DVector<f64>,
}

/// `alpha = gamma_s + gamma_e ||d||^2`, `beta = gamma_e d^T r`.
#[inline]
pub fn coefficient_terms(gamma_s: f64, gamma_e: f64, d_norm_sq: f64, d_dot_r: f64) -> (f64, f64) {
    (gamma_s + gamma_e * d_norm_sq, gamma_e * d_dot_r)
}

/// `P(b = 1 | ...)` with the coefficient integrated out:
/// `p1 = pi sqrt(gamma_s / alpha) exp(beta^2 / (2 alpha))`, `p0 = 1 - pi`.
pub fn activation_probability(pi: f64, gamma_s: f64, alpha: f64, beta: f64) -> f64 {
    let lp1 = pi.ln() + 0.5 * (gamma_s / alpha).ln() + beta * beta / (2.0 * alpha);
    let lp0 = (1.0 - pi).ln();
    if lp1 == f64::NEG_INFINITY {
        return 0.0;
    }
    if lp0 == f64::NEG_INFINITY {
        return 1.0;
    }
    let m = lp1.max(lp0);
    let (e1, e0) = ((lp1 - m).exp(), (lp0 - m).exp());
    e1 / (e1 + e0)
}

/// Mean and variance of `s | b = 1`.
#[inline]
pub fn coefficient_posterior(alpha: f64, beta: f64) -> (f64, f64) {
    (beta / alpha, 1.0 / alpha)
}

/// `Beta(a/K + n_k, (K-1) b_beta / K + N - n_k)`.
pub fn pi_posterior(hp: &Hyperparams, active: usize, n: usize) -> (f64, f64) {
    let (a0, b0) = hp.pi_prior();
    (a0 + active as f64, b0 + (n - active) as f64)
}

/// Shape and rate of a Gamma precision given `count` Gaussian values with
/// summed squares `sum_sq`.
pub fn precision_posterior(shape: f64, rate: f64, count: usize, sum_sq: f64) -> (f64, f64) {
    (shape + 0.5 * count as f64, rate + 0.5 * sum_sq)
}

pub fn gamma_s_posterior(hp: &Hyperparams, s: &DMatrix<f64>) -> (f64, f64) {
    precision_posterior(hp.c, hp.d, s.len(), s.norm_squared())
}

pub fn gamma_e_posterior(hp: &Hyperparams, residual: &DMatrix<f64>) -> (f64, f64) {
    precision_posterior(hp.e, hp.f, residual.len(), residual.norm_squared())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    if alpha != 0.0 {
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += alpha * xi;
        }
    }
}

/// Frozen quantities shared by every `(b_ik, s_ik)` draw of one sweep.
#[derive(Clone, Copy)]
pub(crate) struct PairContext<'a> {
    pub atoms: &'a [f64],
    pub norms: &'a [f64],
    pub pi: &'a [f64],
    pub t: usize,
    pub gamma_s: f64,
    pub gamma_e: f64,
}

impl PairContext<'_> {
    #[inline]
    fn atom(&self, k: usize) -> &[f64] {
        &self.atoms[k * self.t..(k + 1) * self.t]
    }

    /// Redraws `(b_k, s_k)` for every atom of one instance. `residual` holds
    /// `x − D (b ⊙ s)` over the rows covered by `atoms` and is kept current.
    pub(crate) fn update_code<R: Rng>(
        &self,
        s: &mut [f64],
        b: &mut [bool],
        residual: &mut [f64],
        rng: &mut R,
    ) {
        for k in 0..s.len() {
            let d = self.atom(k);
            let w_old = if b[k] { s[k] } else { 0.0 };
            let d_dot_r = dot(d, residual) + self.norms[k] * w_old;
            let (alpha, beta) =
                coefficient_terms(self.gamma_s, self.gamma_e, self.norms[k], d_dot_r);
            let p = activation_probability(self.pi[k], self.gamma_s, alpha, beta);
            b[k] = draws::bernoulli(rng, p);
            s[k] = if b[k] {
                let (mean, var) = coefficient_posterior(alpha, beta);
                mean + var.sqrt() * draws::std_normal(rng)
            } else {
                draws::normal(rng, 0.0, self.gamma_s)
            };
            let w_new = if b[k] { s[k] } else { 0.0 };
            axpy(w_old - w_new, d, residual);
        }
    }
}

fn numerical(state: &GibbsState, update: &'static str, detail: String) -> Error {
    Error::Numerical {
        sweep: state.sweep_count,
        update,
        detail,
    }
}

/// Draws the starting state: atoms from `N(0, I / t)`, `pi` from its Beta
/// prior, `b ~ Bernoulli(0.5)`, `s` from `N(0, 1 / gamma_s)` and both
/// precisions at `max(prior mean, 1)`.
pub fn init_state(data: &DataMatrix, hp: &Hyperparams, seed: u64) -> Result<GibbsState> {
    hp.validate()?;
    if data.n() < 2 {
        return Err(Error::invalid("training needs at least two instances"));
    }
    if data.z.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("training data contains non-finite values"));
    }
    let (t, n, k) = (data.t(), data.n(), hp.k);
    let mut rng = draws::substream(seed, tag::INIT, &[]);
    let scale = 1.0 / (t as f64).sqrt();
    let mut atoms = DMatrix::zeros(t, k);
    for v in atoms.iter_mut() {
        *v = scale * draws::std_normal(&mut rng);
    }
    let (pa, pb) = hp.pi_prior();
    let pi = DVector::from_iterator(k, (0..k).map(|_| draws::beta(&mut rng, pa, pb)));
    let gamma_s = (hp.c / hp.d).max(1.0);
    let gamma_e = (hp.e / hp.f).max(1.0);
    let mut s = DMatrix::zeros(k, n);
    for v in s.iter_mut() {
        *v = draws::normal(&mut rng, 0.0, gamma_s);
    }
    let mut b = DMatrix::from_element(k, n, false);
    for v in b.iter_mut() {
        *v = draws::bernoulli(&mut rng, 0.5);
    }
    let mut state = GibbsState {
        dictionary: Dictionary::new(atoms, data.q, data.r)?,
        s,
        b,
        pi,
        gamma_s,
        gamma_e,
        sweep_count: 0,
        seed,
        residual: DMatrix::zeros(0, 0),
    };
    state.refresh_residuals(data)?;
    Ok(state)
}

impl GibbsState {
    /// Assembles a state from explicit values, computing the residual cache
    /// against `data`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        dictionary: Dictionary,
        s: DMatrix<f64>,
        b: DMatrix<bool>,
        pi: DVector<f64>,
        gamma_s: f64,
        gamma_e: f64,
        seed: u64,
        data: &DataMatrix,
    ) -> Result<Self> {
        let k = dictionary.k();
        if s.nrows() != k || b.nrows() != k || pi.len() != k || s.shape() != b.shape() {
            return Err(Error::invalid("state component shapes disagree with K"));
        }
        if pi.iter().any(|p| !(0.0..=1.0).contains(p)) || !(gamma_s > 0.0 && gamma_e > 0.0) {
            return Err(Error::invalid(
                "pi must lie in [0, 1] and precisions be positive",
            ));
        }
        let mut state = GibbsState {
            dictionary,
            s,
            b,
            pi,
            gamma_s,
            gamma_e,
            sweep_count: 0,
            seed,
            residual: DMatrix::zeros(0, 0),
        };
        state.refresh_residuals(data)?;
        Ok(state)
    }

    /// Closed-form conditional of atom `k` given everything else, computed
    /// from the residual cache.
    pub fn atom_conditional(&self, k: usize) -> AtomConditional {
        let t = self.dictionary.t();
        let d_k = self.dictionary.atoms().column(k);
        let mut weighted = DVector::zeros(t);
        let mut sum_w2 = 0.0;
        for i in 0..self.n() {
            let w = self.weight(i, k);
            if w != 0.0 {
                sum_w2 += w * w;
                // r_ik = R_i + d_k w_ik
                weighted.axpy(w, &self.residual.column(i), 1.0);
                weighted.axpy(w * w, &d_k, 1.0);
            }
        }
        let precision = t as f64 + self.gamma_e * sum_w2;
        AtomConditional {
            precision,
            mean: weighted * (self.gamma_e / precision),
        }
    }

    pub fn update_atom<R: Rng>(&mut self, k: usize, rng: &mut R) -> Result<()> {
        if k >= self.k() {
            return Err(Error::invalid(format!("atom index {k} out of range")));
        }
        let cond = self.atom_conditional(k);
        if !cond.precision.is_finite() {
            return Err(numerical(
                self,
                "update_atom",
                format!("precision {} for atom {k}", cond.precision),
            ));
        }
        let sd = 1.0 / cond.precision.sqrt();
        let t = self.dictionary.t();
        let new = DVector::from_fn(t, |j, _| cond.mean[j] + sd * draws::std_normal(rng));
        let delta = &new - self.dictionary.atoms().column(k);
        for i in 0..self.n() {
            let w = self.weight(i, k);
            if w != 0.0 {
                self.residual.column_mut(i).axpy(-w, &delta, 1.0);
            }
        }
        self.dictionary.atoms_mut().column_mut(k).copy_from(&new);
        Ok(())
    }

    /// `(alpha, beta)` for the pair `(i, k)`, with `r_ik` the residual
    /// excluding atom `k`.
    pub fn coefficient_terms(&self, i: usize, k: usize) -> (f64, f64) {
        let d = self.dictionary.atoms().column(k);
        let dd = d.norm_squared();
        let d_dot_r = d.dot(&self.residual.column(i)) + dd * self.weight(i, k);
        coefficient_terms(self.gamma_s, self.gamma_e, dd, d_dot_r)
    }

    fn check_pair(&self, i: usize, k: usize) -> Result<()> {
        if i >= self.n() || k >= self.k() {
            return Err(Error::invalid(format!("pair ({i}, {k}) out of range")));
        }
        Ok(())
    }

    fn set_weight(&mut self, i: usize, k: usize, b: bool, s: f64) {
        let w_old = self.weight(i, k);
        self.b[(k, i)] = b;
        self.s[(k, i)] = s;
        let w_new = self.weight(i, k);
        if w_old != w_new {
            let d = self.dictionary.atoms().column(k).clone_owned();
            self.residual.column_mut(i).axpy(w_old - w_new, &d, 1.0);
        }
    }

    /// Draws `b_ik` with `s_ik` marginalized.
    pub fn update_activation<R: Rng>(&mut self, i: usize, k: usize, rng: &mut R) -> Result<()> {
        self.check_pair(i, k)?;
        let (alpha, beta) = self.coefficient_terms(i, k);
        let p = activation_probability(self.pi[k], self.gamma_s, alpha, beta);
        let on = draws::bernoulli(rng, p);
        let s = self.s[(k, i)];
        self.set_weight(i, k, on, s);
        Ok(())
    }

    /// Draws `s_ik | b_ik`: the Gaussian posterior when active, the prior
    /// otherwise.
    pub fn update_coefficient<R: Rng>(&mut self, i: usize, k: usize, rng: &mut R) -> Result<()> {
        self.check_pair(i, k)?;
        let on = self.b[(k, i)];
        let s = if on {
            let (alpha, beta) = self.coefficient_terms(i, k);
            let (mean, var) = coefficient_posterior(alpha, beta);
            mean + var.sqrt() * draws::std_normal(rng)
        } else {
            draws::normal(rng, 0.0, self.gamma_s)
        };
        self.set_weight(i, k, on, s);
        Ok(())
    }

    pub fn update_pi<R: Rng>(&mut self, k: usize, hp: &Hyperparams, rng: &mut R) -> Result<()> {
        if k >= self.k() {
            return Err(Error::invalid(format!("atom index {k} out of range")));
        }
        let active = self.b.row(k).iter().filter(|&&v| v).count();
        let (a, b) = pi_posterior(hp, active, self.n());
        self.pi[k] = draws::beta(rng, a, b);
        Ok(())
    }

    pub fn update_gamma_s<R: Rng>(&mut self, hp: &Hyperparams, rng: &mut R) -> Result<()> {
        let (shape, rate) = gamma_s_posterior(hp, &self.s);
        let g = draws::gamma(rng, shape, rate);
        if !(g.is_finite() && g > 0.0) {
            return Err(numerical(
                self,
                "update_gamma_s",
                format!("drew {g} from Gamma({shape}, {rate})"),
            ));
        }
        self.gamma_s = g;
        Ok(())
    }

    pub fn update_gamma_e<R: Rng>(&mut self, hp: &Hyperparams, rng: &mut R) -> Result<()> {
        let (shape, rate) = gamma_e_posterior(hp, &self.residual);
        let g = draws::gamma(rng, shape, rate);
        if !(g.is_finite() && g > 0.0) {
            return Err(numerical(
                self,
                "update_gamma_e",
                format!("drew {g} from Gamma({shape}, {rate})"),
            ));
        }
        self.gamma_e = g;
        Ok(())
    }

    /// Gaussian log-likelihood of the data under the current state.
    pub fn data_log_likelihood(&self) -> f64 {
        data_log_likelihood(
            self.residual.norm_squared(),
            self.n(),
            self.dictionary.t(),
            self.gamma_e,
        )
    }

    /// One full scan in fixed order.
    pub fn sweep(&mut self, data: &DataMatrix, hp: &Hyperparams) -> Result<()> {
        if hp.k != self.k() {
            return Err(Error::invalid("hyperparameter K does not match state"));
        }
        self.refresh_residuals(data)?;
        let sweep = self.sweep_count;

        let mut rng = draws::substream(self.seed, tag::ATOMS, &[sweep]);
        for k in 0..self.k() {
            self.update_atom(k, &mut rng)?;
        }
        if self.dictionary.atoms().iter().any(|v| !v.is_finite()) {
            return Err(numerical(
                self,
                "update_atom",
                "non-finite atom entry".into(),
            ));
        }

        self.update_codes()?;

        let mut rng = draws::substream(self.seed, tag::GLOBALS, &[sweep]);
        for k in 0..self.k() {
            self.update_pi(k, hp, &mut rng)?;
        }
        self.update_gamma_s(hp, &mut rng)?;
        self.update_gamma_e(hp, &mut rng)?;
        self.sweep_count += 1;
        Ok(())
    }

    fn update_codes(&mut self) -> Result<()> {
        let (t, k) = (self.dictionary.t(), self.k());
        let atoms = self.dictionary.atoms();
        let norms: Vec<f64> = atoms.column_iter().map(|c| c.norm_squared()).collect();
        let ctx = PairContext {
            atoms: atoms.as_slice(),
            norms: &norms,
            pi: self.pi.as_slice(),
            t,
            gamma_s: self.gamma_s,
            gamma_e: self.gamma_e,
        };
        let (seed, sweep) = (self.seed, self.sweep_count);
        self.s
            .as_mut_slice()
            .par_chunks_mut(k)
            .zip(self.b.as_mut_slice().par_chunks_mut(k))
            .zip(self.residual.as_mut_slice().par_chunks_mut(t))
            .enumerate()
            .for_each(|(i, ((s, b), r))| {
                let mut rng: ChainRng = draws::substream(seed, tag::INSTANCE, &[sweep, i as u64]);
                ctx.update_code(s, b, r, &mut rng);
            });
        if self.s.iter().any(|v| !v.is_finite()) {
            return Err(numerical(
                self,
                "update_coefficient",
                "non-finite coefficient".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the per-sweep training trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub sweep: u64,
    pub log_likelihood: f64,
    pub gamma_e: f64,
    pub gamma_s: f64,
    pub mean_pi: f64,
    pub active_atoms: usize,
}

impl TraceRow {
    pub fn of(state: &GibbsState) -> Self {
        TraceRow {
            sweep: state.sweep_count,
            log_likelihood: state.data_log_likelihood(),
            gamma_e: state.gamma_e,
            gamma_s: state.gamma_s,
            mean_pi: state.pi.mean(),
            active_atoms: state.active_atoms(),
        }
    }
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "sweep",
        "log_likelihood",
        "gamma_e",
        "gamma_s",
        "mean_pi",
        "active_atoms",
    ])?;
    for r in rows {
        w.write_record([
            r.sweep.to_string(),
            r.log_likelihood.to_string(),
            r.gamma_e.to_string(),
            r.gamma_s.to_string(),
            r.mean_pi.to_string(),
            r.active_atoms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Point estimate taken from the final sweep.
    pub estimate: ModelEstimate,
    /// Final chain state, in standardized units.
    pub state: GibbsState,
    pub trace: Vec<TraceRow>,
}

impl TrainOutcome {
    /// Training reconstructions `D (b_i ⊙ s_i)` mapped back to physical units,
    /// one column per instance.
    pub fn reconstructions(&self) -> Result<DMatrix<f64>> {
        let st = &self.estimate.standardizer;
        let fit = self.state.dictionary.atoms() * self.state.weights();
        let mut out = fit;
        for mut col in out.column_iter_mut() {
            let back = st.destandardize(&col.clone_owned())?;
            col.copy_from(&back);
        }
        Ok(out)
    }
}

/// Standardizes `data`, runs `total_sweeps` sweeps and returns the final
/// sample as the estimate.
pub fn train(data: &Instances, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let standardizer = Standardizer::fit(data)?;
    let matrix = standardizer.standardize_instances(data)?;
    train_standardized(&matrix, standardizer, config)
}

/// As [`train`], for data already in model units.
pub fn train_standardized(
    matrix: &DataMatrix,
    standardizer: Standardizer,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut state = init_state(matrix, &config.hp, config.seed)?;
    let mut trace = Vec::with_capacity(config.total_sweeps);
    for _ in 0..config.total_sweeps {
        state.sweep(matrix, &config.hp)?;
        trace.push(TraceRow::of(&state));
    }
    let estimate = state.estimate(standardizer)?;
    Ok(TrainOutcome {
        estimate,
        state,
        trace,
    })
}
