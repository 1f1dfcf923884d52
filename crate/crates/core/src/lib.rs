//! Time-series scenario forecasting with a beta-Bernoulli dictionary model.
//!
//! Training learns a joint dictionary over concatenated predictor and target
//! windows by Gibbs sampling ([`gibbs`]). At predict time the coefficients of
//! a new window are sampled against the predictor rows only, and each draw is
//! pushed through the target rows to give one scenario ([`forecast`]).
//! [`metrics`] scores scenario ensembles for calibration and sharpness;
//! [`data`] turns hourly CSV series into instances and folds.

pub mod data;
pub mod draws;
pub mod error;
pub mod forecast;
pub mod gibbs;
pub mod metrics;
pub mod model;

pub use data::{
    build_instances, fold_split, load_series, Fold, SeriesTable, Standardizer, WindowSpec,
};
pub use error::{Error, Result};
pub use forecast::{
    forecast, forecast_all, simulate, simulate_prior, Ensemble, ForecastConfig, PredictChain,
    Simulation,
};
pub use gibbs::{init_state, train, TraceRow, TrainConfig, TrainOutcome};
pub use metrics::{
    closest_scenario, horizon_errors, hull_distance, mst_length, mst_rank, rank_histogram,
    sharpness, HorizonErrors, HullDistance, RankHistogram, VerificationCase,
};
pub use model::{
    log_joint, reconstruct, reconstruct_target, residual_excluding, DataMatrix, Dictionary,
    GibbsState, Hyperparams, Instance, Instances, ModelEstimate,
};
