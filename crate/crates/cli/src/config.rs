//! Flat run configuration: defaults, then a JSON file, then command-line
//! overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use scenario_core::{ForecastConfig, Hyperparams, TrainConfig, WindowSpec};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const RESOLVED_NAME: &str = "config.resolved.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub out: PathBuf,
    pub seed: u64,

    /// Series CSV read by `train`, `forecast` and `cv`.
    pub data: Option<PathBuf>,
    /// Model file read by `forecast`.
    pub model: Option<PathBuf>,
    pub scenarios: Option<PathBuf>,
    pub actuals: Option<PathBuf>,
    /// Second scenario set for paired comparison in `evaluate`.
    pub baseline: Option<PathBuf>,

    pub target: String,
    pub predictors: Vec<String>,
    pub horizon: usize,
    pub start_hour: u32,

    pub k: usize,
    pub burn_in: usize,
    pub total_sweeps: usize,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,

    pub n_scenarios: usize,
    pub forecast_burn_in: usize,
    pub thinning: usize,

    pub folds: usize,

    /// Length of the simulated series, in days.
    pub days: usize,
    /// Atoms in the ground-truth model used by `simulate`.
    pub sim_atoms: usize,
    pub sim_pi: f64,
    pub sim_gamma_e: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out: PathBuf::from("out"),
            seed: 0,
            data: None,
            model: None,
            scenarios: None,
            actuals: None,
            baseline: None,
            target: "obs".into(),
            predictors: ["em.ctl", "eta.ctl1", "nmm.ctl", "rsm.ctl1"]
                .map(String::from)
                .to_vec(),
            horizon: 84,
            start_hour: 3,
            k: 100,
            burn_in: 100,
            total_sweeps: 150,
            a: 1.0,
            b: 1.0,
            c: 1e-6,
            d: 1e-6,
            e: 1e-6,
            f: 1e-6,
            n_scenarios: 21,
            forecast_burn_in: 100,
            thinning: 5,
            folds: 10,
            days: 540,
            sim_atoms: 8,
            sim_pi: 0.3,
            sim_gamma_e: 25.0,
        }
    }
}

impl RunConfig {
    /// Layers `file` (if any) and then `overrides` on top of the defaults.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self> {
        let mut merged = match serde_json::to_value(RunConfig::default())? {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let value: Value = serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?;
            let Value::Object(map) = value else {
                bail!("config {} must be a flat JSON object", path.display());
            };
            overlay(&mut merged, map)?;
        }
        overlay(&mut merged, overrides.iter().cloned().collect())?;
        let cfg: RunConfig =
            serde_json::from_value(Value::Object(merged)).context("invalid configuration")?;
        Ok(cfg)
    }

    pub fn hyperparams(&self) -> Result<Hyperparams> {
        let hp = Hyperparams {
            a: self.a,
            b_beta: self.b,
            c: self.c,
            d: self.d,
            e: self.e,
            f: self.f,
            k: self.k,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            burn_in: self.burn_in,
            total_sweeps: self.total_sweeps,
            seed,
            hp: self.hyperparams()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn forecast_config(&self) -> Result<ForecastConfig> {
        let cfg = ForecastConfig {
            n_scenarios: self.n_scenarios,
            burn_in: self.forecast_burn_in,
            thinning: self.thinning,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn window(&self) -> WindowSpec {
        WindowSpec {
            target: self.target.clone(),
            predictors: self.predictors.clone(),
            start_hour_utc: self.start_hour,
            horizon: self.horizon,
        }
    }

    pub fn require_path<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        value
            .as_deref()
            .with_context(|| format!("`{key}` must be set (config file or --set {key}=...)"))
    }
}

fn overlay(base: &mut Map<String, Value>, over: Map<String, Value>) -> Result<()> {
    for (key, value) in over {
        if !base.contains_key(&key) {
            bail!("unknown configuration key `{key}`");
        }
        base.insert(key, value);
    }
    Ok(())
}

/// Parses `key=value`. The value is read as JSON when it parses, otherwise
/// as a plain string, so `k=20` is a number and `data=x.csv` a path.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let Some((key, raw)) = s.split_once('=') else {
        bail!("override `{s}` is not of the form key=value");
    };
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}
