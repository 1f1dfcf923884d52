//! Model types: hyperparameters, instances, the partitioned dictionary, the
//! point estimate used at predict time, and the full Gibbs state.

use nalgebra::{DMatrix, DMatrixView, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

use crate::data::Standardizer;
use crate::error::{check_dim, Error, Result};

/// Priors of the beta-Bernoulli factor model. Gamma priors are shape–rate.
///
/// `b_beta` is the second beta-process concentration; it is named apart from
/// the binary activation vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub a: f64,
    pub b_beta: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
    pub k: usize,
}

impl Hyperparams {
    /// Defaults: `a = b_beta = 1`, broad `Gamma(1e-6, 1e-6)` precisions.
    pub fn new(k: usize) -> Result<Self> {
        let hp = Hyperparams {
            a: 1.0,
            b_beta: 1.0,
            c: 1e-6,
            d: 1e-6,
            e: 1e-6,
            f: 1e-6,
            k,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("a", self.a),
            ("b_beta", self.b_beta),
            ("c", self.c),
            ("d", self.d),
            ("e", self.e),
            ("f", self.f),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!(
                    "hyperparameter {name} must be finite and positive, got {v}"
                )));
            }
        }
        if self.k < 2 {
            return Err(Error::invalid(format!(
                "atom count K must be at least 2 (Beta prior degenerates at K = {})",
                self.k
            )));
        }
        Ok(())
    }

    /// Parameters of the `Beta(a/K, (K-1) b_beta / K)` prior on each `pi_k`.
    pub fn pi_prior(&self) -> (f64, f64) {
        let k = self.k as f64;
        (self.a / k, (k - 1.0) * self.b_beta / k)
    }
}

/// One forecast case: predictor window `x` and target window `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

impl Instance {
    pub fn new(id: impl Into<String>, x: DVector<f64>, y: DVector<f64>) -> Result<Self> {
        if x.is_empty() || y.is_empty() {
            return Err(Error::invalid(
                "predictor and target windows must be non-empty",
            ));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("instance contains non-finite values"));
        }
        Ok(Instance {
            id: id.into(),
            x,
            y,
        })
    }

    /// The concatenation `[x, y]`.
    pub fn z(&self) -> DVector<f64> {
        let r = self.x.len();
        DVector::from_fn(r + self.y.len(), |j, _| {
            if j < r {
                self.x[j]
            } else {
                self.y[j - r]
            }
        })
    }
}

/// A collection of instances sharing `(q, r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Instances {
    q: usize,
    r: usize,
    items: Vec<Instance>,
}

impl Instances {
    pub fn new(items: Vec<Instance>) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("instance set is empty"))?;
        let (r, q) = (first.x.len(), first.y.len());
        for inst in &items {
            check_dim("instance predictor length", r, inst.x.len())?;
            check_dim("instance target length", q, inst.y.len())?;
        }
        Ok(Instances { q, r, items })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn t(&self) -> usize {
        self.q + self.r
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Instance> {
        self.items.iter()
    }

    pub fn as_slice(&self) -> &[Instance] {
        &self.items
    }

    pub fn into_vec(self) -> Vec<Instance> {
        self.items
    }

    /// Subset by index, preserving the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let items = indices
            .iter()
            .map(|&i| {
                self.items
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("instance index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Instances::new(items)
    }
}

impl<'a> IntoIterator for &'a Instances {
    type Item = &'a Instance;
    type IntoIter = std::slice::Iter<'a, Instance>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

/// Training data as a `t x N` matrix of (standardized) `z` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    pub z: DMatrix<f64>,
    pub q: usize,
    pub r: usize,
}

impl DataMatrix {
    /// Stacks instances as columns without any transformation.
    pub fn from_instances(data: &Instances) -> Self {
        let t = data.t();
        let mut z = DMatrix::zeros(t, data.len());
        for (i, inst) in data.iter().enumerate() {
            z.column_mut(i).copy_from(&inst.z());
        }
        DataMatrix {
            z,
            q: data.q(),
            r: data.r(),
        }
    }

    pub fn n(&self) -> usize {
        self.z.ncols()
    }

    pub fn t(&self) -> usize {
        self.z.nrows()
    }
}

/// `t x K` atom matrix; the first `r` rows form the predictor block, the
/// last `q` rows the target block.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
    q: usize,
    r: usize,
}

impl Dictionary {
    pub fn new(atoms: DMatrix<f64>, q: usize, r: usize) -> Result<Self> {
        if q == 0 || r == 0 {
            return Err(Error::invalid("dictionary needs q >= 1 and r >= 1"));
        }
        check_dim("dictionary rows (q + r)", q + r, atoms.nrows())?;
        if atoms.ncols() == 0 {
            return Err(Error::invalid("dictionary has no atoms"));
        }
        Ok(Dictionary { atoms, q, r })
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub(crate) fn atoms_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.atoms
    }

    pub fn k(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn t(&self) -> usize {
        self.q + self.r
    }

    /// `D_x`: rows `0..r`.
    pub fn predictor_block(&self) -> DMatrixView<'_, f64> {
        self.atoms.rows(0, self.r)
    }

    /// `D_y`: rows `r..r+q`.
    pub fn target_block(&self) -> DMatrixView<'_, f64> {
        self.atoms.rows(self.r, self.q)
    }
}

fn masked(s: &DVector<f64>, b: &[bool]) -> DVector<f64> {
    DVector::from_fn(s.len(), |k, _| if b[k] { s[k] } else { 0.0 })
}

fn check_code(dict: &Dictionary, s: &DVector<f64>, b: &[bool]) -> Result<()> {
    check_dim("coefficient vector length", dict.k(), s.len())?;
    check_dim("activation vector length", dict.k(), b.len())
}

/// Noise-free reconstruction `D (s ⊙ b)`.
pub fn reconstruct(dict: &Dictionary, s: &DVector<f64>, b: &[bool]) -> Result<DVector<f64>> {
    check_code(dict, s, b)?;
    Ok(dict.atoms() * masked(s, b))
}

/// Target part of the reconstruction, `D_y (s ⊙ b)`.
pub fn reconstruct_target(dict: &Dictionary, s: &DVector<f64>, b: &[bool]) -> Result<DVector<f64>> {
    check_code(dict, s, b)?;
    Ok(dict.target_block() * masked(s, b))
}

/// `z − D (s ⊙ b) + d_k s_k b_k`: the residual with atom `k`'s contribution
/// put back.
pub fn residual_excluding(
    dict: &Dictionary,
    s: &DVector<f64>,
    b: &[bool],
    z: &DVector<f64>,
    k: usize,
) -> Result<DVector<f64>> {
    if k >= dict.k() {
        return Err(Error::invalid(format!(
            "atom index {k} out of range for K = {}",
            dict.k()
        )));
    }
    check_dim("z length", dict.t(), z.len())?;
    let mut res = z - reconstruct(dict, s, b)?;
    if b[k] {
        res.axpy(s[k], &dict.atoms().column(k), 1.0);
    }
    Ok(res)
}

/// Point estimate `(D, pi, gamma_s, gamma_e)` plus the standardization fitted
/// on the training data. Everything the scenario sampler needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEstimate {
    pub dictionary: Dictionary,
    pub pi: DVector<f64>,
    pub gamma_s: f64,
    pub gamma_e: f64,
    pub standardizer: Standardizer,
}

impl ModelEstimate {
    pub fn new(
        dictionary: Dictionary,
        pi: DVector<f64>,
        gamma_s: f64,
        gamma_e: f64,
        standardizer: Standardizer,
    ) -> Result<Self> {
        let est = ModelEstimate {
            dictionary,
            pi,
            gamma_s,
            gamma_e,
            standardizer,
        };
        est.validate()?;
        Ok(est)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(
            "activation probabilities",
            self.dictionary.k(),
            self.pi.len(),
        )?;
        if self.pi.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid(
                "activation probabilities must lie in [0, 1]",
            ));
        }
        if !(self.gamma_s > 0.0 && self.gamma_s.is_finite()) {
            return Err(Error::invalid("gamma_s must be positive"));
        }
        if !(self.gamma_e > 0.0 && self.gamma_e.is_finite()) {
            return Err(Error::invalid("gamma_e must be positive"));
        }
        check_dim(
            "standardizer length",
            self.dictionary.t(),
            self.standardizer.len(),
        )?;
        if self.dictionary.atoms().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dictionary contains non-finite entries"));
        }
        Ok(())
    }

    pub fn q(&self) -> usize {
        self.dictionary.q()
    }

    pub fn r(&self) -> usize {
        self.dictionary.r()
    }

    pub fn k(&self) -> usize {
        self.dictionary.k()
    }
}

/// Flat, versionable form of [`ModelEstimate`] used for serialization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelEstimateRepr {
    pub q: usize,
    pub r: usize,
    pub k: usize,
    /// One entry per atom, each of length `q + r`.
    pub atoms: Vec<Vec<f64>>,
    pub pi: Vec<f64>,
    pub gamma_s: f64,
    pub gamma_e: f64,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl From<&ModelEstimate> for ModelEstimateRepr {
    fn from(m: &ModelEstimate) -> Self {
        let d = &m.dictionary;
        ModelEstimateRepr {
            q: d.q(),
            r: d.r(),
            k: d.k(),
            atoms: d
                .atoms()
                .column_iter()
                .map(|c| c.iter().copied().collect())
                .collect(),
            pi: m.pi.iter().copied().collect(),
            gamma_s: m.gamma_s,
            gamma_e: m.gamma_e,
            means: m.standardizer.means().iter().copied().collect(),
            scales: m.standardizer.scales().iter().copied().collect(),
        }
    }
}

impl TryFrom<ModelEstimateRepr> for ModelEstimate {
    type Error = Error;

    fn try_from(repr: ModelEstimateRepr) -> Result<Self> {
        let t = repr.q + repr.r;
        check_dim("serialized atom count", repr.k, repr.atoms.len())?;
        for col in &repr.atoms {
            check_dim("serialized atom length", t, col.len())?;
        }
        let atoms = DMatrix::from_fn(t, repr.k, |j, k| repr.atoms[k][j]);
        let standardizer = Standardizer::new(
            DVector::from_vec(repr.means),
            DVector::from_vec(repr.scales),
        )?;
        ModelEstimate::new(
            Dictionary::new(atoms, repr.q, repr.r)?,
            DVector::from_vec(repr.pi),
            repr.gamma_s,
            repr.gamma_e,
            standardizer,
        )
    }
}

impl Serialize for ModelEstimate {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        ModelEstimateRepr::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ModelEstimate {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let repr = ModelEstimateRepr::deserialize(deserializer)?;
        ModelEstimate::try_from(repr).map_err(serde::de::Error::custom)
    }
}

/// Full latent state of the training chain.
///
/// `s` and `b` are `K x N`: column `i` holds instance `i`'s coefficients and
/// activation mask. The residual cache `z_i − D (b_i ⊙ s_i)` is kept in step
/// with every update and rebuilt at the start of each sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState {
    pub dictionary: Dictionary,
    pub s: DMatrix<f64>,
    pub b: DMatrix<bool>,
    pub pi: DVector<f64>,
    pub gamma_s: f64,
    pub gamma_e: f64,
    pub sweep_count: u64,
    pub seed: u64,
    pub(crate) residual: DMatrix<f64>,
}

impl GibbsState {
    pub fn k(&self) -> usize {
        self.dictionary.k()
    }

    pub fn n(&self) -> usize {
        self.s.ncols()
    }

    /// `w_ik = b_ik s_ik`.
    #[inline]
    pub fn weight(&self, i: usize, k: usize) -> f64 {
        if self.b[(k, i)] {
            self.s[(k, i)]
        } else {
            0.0
        }
    }

    pub fn weights(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.k(), self.n(), |k, i| self.weight(i, k))
    }

    /// Recomputes the residual cache from scratch.
    pub fn refresh_residuals(&mut self, data: &DataMatrix) -> Result<()> {
        check_dim("data dimension t", self.dictionary.t(), data.t())?;
        check_dim("data instance count", self.n(), data.n())?;
        self.residual = &data.z - self.dictionary.atoms() * self.weights();
        Ok(())
    }

    /// Residuals `z_i − D (b_i ⊙ s_i)` as a `t x N` matrix.
    pub fn residuals(&self) -> &DMatrix<f64> {
        &self.residual
    }

    /// Active-atom count: atoms used by at least one instance.
    pub fn active_atoms(&self) -> usize {
        self.b
            .row_iter()
            .filter(|row| row.iter().any(|&v| v))
            .count()
    }

    pub fn activation_total(&self) -> usize {
        self.b.iter().filter(|&&v| v).count()
    }

    /// Current values as a predict-time estimate.
    pub fn estimate(&self, standardizer: Standardizer) -> Result<ModelEstimate> {
        ModelEstimate::new(
            self.dictionary.clone(),
            self.pi.clone(),
            self.gamma_s,
            self.gamma_e,
            standardizer,
        )
    }
}

/// Per-term breakdown of the log joint density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogJointTerms {
    pub atoms: f64,
    pub coefficients: f64,
    pub activations: f64,
    pub pi: f64,
    pub gamma_s: f64,
    pub gamma_e: f64,
    pub likelihood: f64,
}

impl LogJointTerms {
    pub fn total(&self) -> f64 {
        self.atoms
            + self.coefficients
            + self.activations
            + self.pi
            + self.gamma_s
            + self.gamma_e
            + self.likelihood
    }
}

pub(crate) fn gamma_log_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

pub(crate) fn beta_log_pdf(x: f64, a: f64, b: f64) -> f64 {
    ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln()
}

/// Gaussian log-likelihood of the data given the state's residuals.
pub fn data_log_likelihood(residual_sq: f64, n: usize, t: usize, gamma_e: f64) -> f64 {
    0.5 * (n * t) as f64 * (gamma_e.ln() - (2.0 * PI).ln()) - 0.5 * gamma_e * residual_sq
}

/// Log prior × likelihood, term by term. Residuals are recomputed from
/// `data` rather than taken from the cache.
pub fn log_joint_terms(
    state: &GibbsState,
    data: &DataMatrix,
    hp: &Hyperparams,
) -> Result<LogJointTerms> {
    let dict = &state.dictionary;
    check_dim("data dimension t", dict.t(), data.t())?;
    check_dim("data instance count", state.n(), data.n())?;
    check_dim("hyperparameter K", hp.k, dict.k())?;
    let t = dict.t() as f64;
    let ln2pi = (2.0 * PI).ln();

    let atoms = dict
        .atoms()
        .iter()
        .map(|d| 0.5 * (t.ln() - ln2pi) - 0.5 * t * d * d)
        .sum();
    let coefficients = state
        .s
        .iter()
        .map(|s| 0.5 * (state.gamma_s.ln() - ln2pi) - 0.5 * state.gamma_s * s * s)
        .sum();
    let mut activations = 0.0;
    for (k, row) in state.b.row_iter().enumerate() {
        let p = state.pi[k];
        for &on in row.iter() {
            // Skips 0 * ln(0) at the boundaries of [0, 1].
            activations += if on { p.ln() } else { (1.0 - p).ln() };
        }
    }
    let (pa, pb) = hp.pi_prior();
    let pi = state.pi.iter().map(|&p| beta_log_pdf(p, pa, pb)).sum();
    let residual = &data.z - dict.atoms() * state.weights();
    let likelihood =
        data_log_likelihood(residual.norm_squared(), data.n(), data.t(), state.gamma_e);
    let terms = LogJointTerms {
        atoms,
        coefficients,
        activations,
        pi,
        gamma_s: gamma_log_pdf(state.gamma_s, hp.c, hp.d),
        gamma_e: gamma_log_pdf(state.gamma_e, hp.e, hp.f),
        likelihood,
    };
    if !terms.total().is_finite() {
        return Err(Error::Numerical {
            sweep: state.sweep_count,
            update: "log_joint",
            detail: format!("non-finite log joint: {terms:?}"),
        });
    }
    Ok(terms)
}

pub fn log_joint(state: &GibbsState, data: &DataMatrix, hp: &Hyperparams) -> Result<f64> {
    log_joint_terms(state, data, hp).map(|t| t.total())
}
