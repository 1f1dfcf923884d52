//! The five pipeline commands. Each writes its outputs plus
//! `config.resolved.json` into `cfg.out`.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, TimeDelta, TimeZone, Utc};
use nalgebra::{DMatrix, DVector};
use scenario_core::draws::{self, std_normal};
use scenario_core::gibbs::write_trace_csv;
use scenario_core::metrics::{mst_ranks, RankHistogram};
use scenario_core::{
    build_instances, fold_split, forecast_all, horizon_errors, hull_distance, load_series,
    rank_histogram, sharpness, simulate as simulate_model, train as train_model, Dictionary,
    Ensemble, HorizonErrors, Instances, ModelEstimate, SeriesTable, Standardizer, VerificationCase,
};
use serde::Serialize;

use crate::config::{RunConfig, RESOLVED_NAME};
use crate::files::{
    file_stem, read_actuals, read_scenarios, write_actuals, write_atomic, write_json,
    write_scenarios, Layout, ModelFile,
};

/// `hours` consecutive instants from `start_hour` UTC on 2020-01-01.
fn hourly_timestamps(start_hour: u32, hours: usize) -> Result<Vec<DateTime<Utc>>> {
    let start = Utc
        .with_ymd_and_hms(2020, 1, 1, start_hour, 0, 0)
        .single()
        .context("start hour must be in 0..=23")?;
    Ok((0..hours)
        .map(|u| start + TimeDelta::hours(u as i64))
        .collect())
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    write_json(&dir.join(RESOLVED_NAME), cfg)
}

fn load_instances(cfg: &RunConfig, layout: &Layout) -> Result<Instances> {
    let path = cfg.require_path(&cfg.data, "data")?;
    let table = load_series(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(build_instances(&table, &layout.window())?)
}

/// Ground-truth model behind `simulate`: random atoms scaled so the signal
/// has roughly unit variance, over a diurnal temperature climatology.
pub fn truth_model(cfg: &RunConfig) -> Result<ModelEstimate> {
    let (h, p) = (cfg.horizon, cfg.predictors.len());
    if p == 0 {
        bail!("at least one predictor column is required");
    }
    let t = h * (p + 1);
    let k = cfg.sim_atoms;
    if k == 0 || !(0.0..=1.0).contains(&cfg.sim_pi) || cfg.sim_pi == 0.0 {
        bail!("simulation needs sim_atoms >= 1 and 0 < sim_pi <= 1");
    }
    let mut rng = draws::substream(cfg.seed, draws::label_key("truth-model"), &[]);
    let sd = 1.0 / (k as f64 * cfg.sim_pi).sqrt();
    let atoms = DMatrix::from_fn(t, k, |_, _| sd * std_normal(&mut rng));
    let means = DVector::from_fn(t, |j, _| {
        let (column, offset) = (j / h, j % h);
        let hour = (cfg.start_hour as usize + offset) % 24;
        let phase = 2.0 * std::f64::consts::PI * (hour as f64 - 9.0) / 24.0;
        // Each predictor carries its own small bias relative to the target.
        let bias = if column < p {
            0.4 * (column as f64 - (p as f64 - 1.0) / 2.0)
        } else {
            0.0
        };
        295.0 + 5.0 * phase.sin() + bias
    });
    let standardizer = Standardizer::new(means, DVector::from_element(t, 2.0))?;
    Ok(ModelEstimate::new(
        Dictionary::new(atoms, h, h * p)?,
        DVector::from_element(k, cfg.sim_pi),
        1.0,
        cfg.sim_gamma_e,
        standardizer,
    )?)
}

/// Draws one window per day from the truth model and lays them end to end:
/// day `d` contributes the first 24 hours of its window and the last day
/// its whole window, so every day's start hour opens a complete window.
pub fn simulate(cfg: &RunConfig) -> Result<()> {
    if cfg.horizon < 24 {
        bail!("simulate needs horizon >= 24 so consecutive days tile the series");
    }
    if cfg.days == 0 {
        bail!("days must be at least 1");
    }
    let theta = truth_model(cfg)?;
    let sim = simulate_model(&theta, cfg.days, cfg.seed)?;
    let (h, days) = (cfg.horizon, cfg.days);
    let hours = 24 * (days - 1) + h;
    let items = sim.instances.as_slice();
    let value = |column: usize, u: usize| {
        let d = (u / 24).min(days - 1);
        let offset = u - 24 * d;
        let inst = &items[d];
        if column < cfg.predictors.len() {
            inst.x[column * h + offset]
        } else {
            inst.y[offset]
        }
    };
    let mut columns = Vec::new();
    for (c, name) in cfg
        .predictors
        .iter()
        .chain(std::iter::once(&cfg.target))
        .enumerate()
    {
        columns.push((
            name.clone(),
            (0..hours).map(|u| Some(value(c, u))).collect(),
        ));
    }
    let table = SeriesTable::new(hourly_timestamps(cfg.start_hour, hours)?, columns)?;

    write_atomic(&cfg.out.join("series.csv"), |w| Ok(table.write_csv(w)?))?;
    ModelFile::new(Layout::of(&cfg.window()), theta)?.save(&cfg.out.join("truth_model.json"))?;
    echo_config(cfg, &cfg.out)
}

fn train_into(cfg: &RunConfig, data: &Instances, seed: u64, dir: &Path) -> Result<ModelFile> {
    let outcome = train_model(data, &cfg.train_config(seed)?)?;
    let model = ModelFile::new(Layout::of(&cfg.window()), outcome.estimate)?;
    model.save(&dir.join("model.json"))?;
    write_atomic(&dir.join("trace.csv"), |w| {
        Ok(write_trace_csv(&outcome.trace, w)?)
    })?;
    Ok(model)
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let data = load_instances(cfg, &Layout::of(&cfg.window()))?;
    train_into(cfg, &data, cfg.seed, &cfg.out)?;
    echo_config(cfg, &cfg.out)
}

pub fn forecast(cfg: &RunConfig) -> Result<()> {
    let model = ModelFile::load(cfg.require_path(&cfg.model, "model")?)?;
    let data = load_instances(cfg, &model.layout)?;
    let ensembles = forecast_all(&model.estimate, &data, &cfg.forecast_config()?)?;
    write_scenarios(&cfg.out.join("scenarios.csv"), &ensembles)?;
    write_actuals(&cfg.out.join("actuals.csv"), &targets(&data))?;
    echo_config(cfg, &cfg.out)
}

fn targets(data: &Instances) -> Vec<(String, DVector<f64>)> {
    data.iter().map(|i| (i.id.clone(), i.y.clone())).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct HistogramSummary {
    pub counts: Vec<u64>,
    pub chi_square: f64,
    pub p_value: f64,
}

impl From<&RankHistogram> for HistogramSummary {
    fn from(h: &RankHistogram) -> Self {
        HistogramSummary {
            counts: h.counts.clone(),
            chi_square: h.chi_square,
            p_value: h.p_value,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorProfiles {
    pub rmse: Vec<f64>,
    pub mae: Vec<f64>,
    pub bias: Vec<f64>,
}

impl From<&HorizonErrors> for ErrorProfiles {
    fn from(e: &HorizonErrors) -> Self {
        let v = |x: &DVector<f64>| x.iter().copied().collect();
        ErrorProfiles {
            rmse: v(&e.rmse),
            mae: v(&e.mae),
            bias: v(&e.bias),
        }
    }
}

/// Metrics for one ensemble set against the actuals.
#[derive(Debug, Clone, Serialize)]
pub struct SetMetrics {
    pub cases: usize,
    pub members: usize,
    pub rank_histogram: HistogramSummary,
    pub horizon_errors: ErrorProfiles,
    pub mean_hull_distance: f64,
    pub hull_not_converged: usize,
    pub mean_sharpness: f64,
    #[serde(skip)]
    pub hull: Vec<f64>,
    #[serde(skip)]
    pub sharpness: Vec<f64>,
    #[serde(skip)]
    pub histogram: Vec<u64>,
    #[serde(skip)]
    pub errors: Option<HorizonErrors>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub horizon: usize,
    #[serde(flatten)]
    pub primary: SetMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<SetMetrics>,
}

fn cases_for(
    ensembles: &[Ensemble],
    actuals: &HashMap<&str, &DVector<f64>>,
) -> Result<Vec<VerificationCase>> {
    ensembles
        .iter()
        .map(|e| {
            let actual = actuals[e.instance_id.as_str()];
            VerificationCase::new(e.scenarios.clone(), actual.clone())
                .with_context(|| format!("instance {}", e.instance_id))
        })
        .collect()
}

fn set_metrics(
    ensembles: &[Ensemble],
    actuals: &HashMap<&str, &DVector<f64>>,
    seed: u64,
) -> Result<SetMetrics> {
    let cases = cases_for(ensembles, actuals)?;
    let members = cases[0].members();
    if cases.iter().any(|c| c.members() != members) {
        bail!("ensembles in one set must all have the same number of scenarios");
    }
    let hist = rank_histogram(&mst_ranks(&cases, seed), members)?;
    let errors = horizon_errors(&cases)?;
    let hulls: Vec<_> = cases.iter().map(hull_distance).collect();
    let sharp = cases
        .iter()
        .map(|c| sharpness(&c.ensemble))
        .collect::<scenario_core::Result<Vec<_>>>()?;
    let n = cases.len() as f64;
    Ok(SetMetrics {
        cases: cases.len(),
        members,
        rank_histogram: (&hist).into(),
        horizon_errors: (&errors).into(),
        mean_hull_distance: hulls.iter().map(|h| h.distance).sum::<f64>() / n,
        hull_not_converged: hulls.iter().filter(|h| !h.converged).count(),
        mean_sharpness: sharp.iter().sum::<f64>() / n,
        hull: hulls.iter().map(|h| h.distance).collect(),
        sharpness: sharp,
        histogram: hist.counts.clone(),
        errors: Some(errors),
    })
}

fn check_coverage(
    label: &str,
    ensembles: &[Ensemble],
    actuals: &HashMap<&str, &DVector<f64>>,
) -> Result<()> {
    let missing: Vec<&str> = ensembles
        .iter()
        .map(|e| e.instance_id.as_str())
        .filter(|id| !actuals.contains_key(id))
        .collect();
    if !missing.is_empty() {
        bail!("{label} instances without actuals: {}", missing.join(", "));
    }
    Ok(())
}

fn csv_writer(w: &mut dyn Write) -> csv::Writer<&mut dyn Write> {
    csv::Writer::from_writer(w)
}

/// Scores `primary` (and `baseline`, on the instances both share) and writes
/// every metric table into `dir`.
pub fn evaluate_sets(
    primary: &[Ensemble],
    actuals: &[(String, DVector<f64>)],
    baseline: Option<&[Ensemble]>,
    seed: u64,
    dir: &Path,
) -> Result<EvaluationReport> {
    if primary.is_empty() {
        bail!("no ensembles to evaluate");
    }
    let by_id: HashMap<&str, &DVector<f64>> =
        actuals.iter().map(|(id, v)| (id.as_str(), v)).collect();
    check_coverage("scenario", primary, &by_id)?;
    let ids: HashSet<&str> = primary.iter().map(|e| e.instance_id.as_str()).collect();
    let orphans: Vec<&str> = actuals
        .iter()
        .map(|(id, _)| id.as_str())
        .filter(|id| !ids.contains(id))
        .collect();
    if !orphans.is_empty() {
        bail!("actual instances without scenarios: {}", orphans.join(", "));
    }
    let q = primary[0].horizon();
    if primary.iter().any(|e| e.horizon() != q) || actuals.iter().any(|(_, v)| v.len() != q) {
        bail!("all ensembles and actuals must share the horizon length {q}");
    }

    // Paired comparison restricts both sets to their common instances.
    let (primary_set, baseline_set): (Vec<Ensemble>, Option<Vec<Ensemble>>) = match baseline {
        None => (primary.to_vec(), None),
        Some(base) => {
            check_coverage("baseline", base, &by_id)?;
            let base_ids: HashMap<&str, &Ensemble> =
                base.iter().map(|e| (e.instance_id.as_str(), e)).collect();
            let common: Vec<Ensemble> = primary
                .iter()
                .filter(|e| base_ids.contains_key(e.instance_id.as_str()))
                .cloned()
                .collect();
            if common.is_empty() {
                bail!("primary and baseline ensembles share no instances");
            }
            let paired = common
                .iter()
                .map(|e| base_ids[e.instance_id.as_str()].clone())
                .collect();
            (common, Some(paired))
        }
    };

    let primary_metrics = set_metrics(&primary_set, &by_id, seed)?;
    let baseline_metrics = baseline_set
        .as_deref()
        .map(|b| set_metrics(b, &by_id, seed))
        .transpose()?;

    write_atomic(&dir.join("rank_histogram.csv"), |w| {
        let mut out = csv_writer(w);
        let mut header = vec!["rank", "count"];
        if baseline_metrics.is_some() {
            header.push("baseline_count");
        }
        out.write_record(&header)?;
        for (j, c) in primary_metrics.histogram.iter().enumerate() {
            let mut rec = vec![(j + 1).to_string(), c.to_string()];
            if let Some(b) = &baseline_metrics {
                rec.push(b.histogram.get(j).map_or(String::new(), |v| v.to_string()));
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    })?;

    write_atomic(&dir.join("horizon_errors.csv"), |w| {
        let mut out = csv_writer(w);
        let mut header = vec!["horizon", "rmse", "mae", "bias"];
        if baseline_metrics.is_some() {
            header.extend(["baseline_rmse", "baseline_mae", "baseline_bias"]);
        }
        out.write_record(&header)?;
        let profiles: Vec<&HorizonErrors> = std::iter::once(&primary_metrics)
            .chain(baseline_metrics.as_ref())
            .filter_map(|m| m.errors.as_ref())
            .collect();
        for h in 0..q {
            let mut rec = vec![(h + 1).to_string()];
            for e in &profiles {
                rec.extend([e.rmse[h], e.mae[h], e.bias[h]].map(|v| v.to_string()));
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    })?;

    let ids: Vec<&str> = primary_set.iter().map(|e| e.instance_id.as_str()).collect();
    let base = baseline_metrics.as_ref();
    write_pairs(
        dir,
        "hull_distance",
        &ids,
        &primary_metrics.hull,
        base.map(|b| &b.hull[..]),
    )?;
    write_pairs(
        dir,
        "sharpness",
        &ids,
        &primary_metrics.sharpness,
        base.map(|b| &b.sharpness[..]),
    )?;

    let fan_dir = dir.join("fan_charts");
    for ens in &primary_set {
        let actual = by_id[ens.instance_id.as_str()];
        write_atomic(
            &fan_dir.join(format!("{}.csv", file_stem(&ens.instance_id))),
            |w| {
                let mut out = csv_writer(w);
                let mut header = vec!["horizon".to_string(), "actual".into(), "mean".into()];
                header.extend((1..=ens.len()).map(|j| format!("s{j:02}")));
                out.write_record(&header)?;
                for h in 0..q {
                    let mut rec = vec![
                        (h + 1).to_string(),
                        actual[h].to_string(),
                        ens.mean[h].to_string(),
                    ];
                    rec.extend(ens.scenarios.column(h).iter().map(|v| v.to_string()));
                    out.write_record(&rec)?;
                }
                out.flush()?;
                Ok(())
            },
        )?;
    }

    let report = EvaluationReport {
        horizon: q,
        primary: primary_metrics,
        baseline: baseline_metrics,
    };
    write_json(&dir.join("metrics.json"), &report)?;
    Ok(report)
}

/// `instance_id,<name>[,baseline_<name>]`, one row per instance.
fn write_pairs(
    dir: &Path,
    name: &str,
    ids: &[&str],
    values: &[f64],
    baseline: Option<&[f64]>,
) -> Result<()> {
    write_atomic(&dir.join(format!("{name}.csv")), |w| {
        let mut out = csv_writer(w);
        let mut header = vec!["instance_id".to_string(), name.to_string()];
        if baseline.is_some() {
            header.push(format!("baseline_{name}"));
        }
        out.write_record(&header)?;
        for (i, id) in ids.iter().enumerate() {
            let mut rec = vec![id.to_string(), values[i].to_string()];
            if let Some(b) = baseline {
                rec.push(b[i].to_string());
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    })
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let primary = read_scenarios(cfg.require_path(&cfg.scenarios, "scenarios")?)?;
    let actuals = read_actuals(cfg.require_path(&cfg.actuals, "actuals")?)?;
    let baseline = cfg.baseline.as_deref().map(read_scenarios).transpose()?;
    evaluate_sets(&primary, &actuals, baseline.as_deref(), cfg.seed, &cfg.out)?;
    echo_config(cfg, &cfg.out)
}

/// Trains and forecasts each contiguous fold, then scores the pooled test
/// cases. Fold `j` uses training seed `seed + j`.
pub fn cv(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::of(&cfg.window());
    let data = load_instances(cfg, &layout)?;
    let folds = fold_split(data.len(), cfg.folds)?;
    let fcfg = cfg.forecast_config()?;
    let mut pooled_ensembles = Vec::new();
    let mut pooled_actuals = Vec::new();
    for (j, fold) in folds.iter().enumerate() {
        let mut run = || -> Result<()> {
            let dir = cfg.out.join(format!("fold_{:02}", j + 1));
            let train_set = data.select(&fold.train)?;
            let test_set = data.select(&fold.test)?;
            let model = train_into(cfg, &train_set, cfg.seed.wrapping_add(j as u64), &dir)?;
            let ensembles = forecast_all(&model.estimate, &test_set, &fcfg)?;
            write_scenarios(&dir.join("scenarios.csv"), &ensembles)?;
            let actuals = targets(&test_set);
            write_actuals(&dir.join("actuals.csv"), &actuals)?;
            evaluate_sets(&ensembles, &actuals, None, cfg.seed, &dir)?;
            echo_config(cfg, &dir)?;
            pooled_ensembles.extend(ensembles);
            pooled_actuals.extend(actuals);
            Ok(())
        };
        run().with_context(|| format!("fold {} of {}", j + 1, folds.len()))?;
    }
    write_scenarios(&cfg.out.join("scenarios.csv"), &pooled_ensembles)?;
    write_actuals(&cfg.out.join("actuals.csv"), &pooled_actuals)?;
    evaluate_sets(&pooled_ensembles, &pooled_actuals, None, cfg.seed, &cfg.out)?;
    echo_config(cfg, &cfg.out)
}
