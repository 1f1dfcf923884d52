//! On-disk formats and atomic writes.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use scenario_core::{Ensemble, ModelEstimate, WindowSpec};
use serde::{Deserialize, Serialize};

pub const MODEL_SCHEMA: &str = "scenario-model/v1";

/// Writes through a temporary sibling and renames it into place, so readers
/// never see a partial file.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().context("output path has no file name")?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let file = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        let mut w = BufWriter::new(file);
        fill(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Column layout the model was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub target: String,
    pub predictors: Vec<String>,
    pub horizon: usize,
    pub start_hour: u32,
}

impl Layout {
    pub fn of(spec: &WindowSpec) -> Self {
        Layout {
            target: spec.target.clone(),
            predictors: spec.predictors.clone(),
            horizon: spec.horizon,
            start_hour: spec.start_hour_utc,
        }
    }

    pub fn window(&self) -> WindowSpec {
        WindowSpec {
            target: self.target.clone(),
            predictors: self.predictors.clone(),
            start_hour_utc: self.start_hour,
            horizon: self.horizon,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema: String,
    pub layout: Layout,
    pub estimate: ModelEstimate,
}

impl ModelFile {
    pub fn new(layout: Layout, estimate: ModelEstimate) -> Result<Self> {
        let expected = (layout.horizon, layout.horizon * layout.predictors.len());
        if (estimate.q(), estimate.r()) != expected {
            bail!(
                "model dimensions q={}, r={} do not match layout ({}, {})",
                estimate.q(),
                estimate.r(),
                expected.0,
                expected.1
            );
        }
        Ok(ModelFile {
            schema: MODEL_SCHEMA.into(),
            layout,
            estimate,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw: serde_json::Value = read_json(path)?;
        let schema = raw
            .get("schema")
            .and_then(|s| s.as_str())
            .unwrap_or("<missing>");
        if schema != MODEL_SCHEMA {
            bail!(
                "{}: unsupported model schema `{schema}` (expected `{MODEL_SCHEMA}`)",
                path.display()
            );
        }
        let file: ModelFile = serde_json::from_value(raw)
            .with_context(|| format!("parsing model {}", path.display()))?;
        ModelFile::new(file.layout, file.estimate)
    }
}

fn horizon_header(first: &[&str], q: usize) -> Vec<String> {
    first
        .iter()
        .map(|s| s.to_string())
        .chain((1..=q).map(|h| format!("h{h:03}")))
        .collect()
}

/// `instance_id,scenario_id,h001..`: one row per scenario (ids `1..=m`)
/// followed by a `mean` row.
pub fn write_scenarios(path: &Path, ensembles: &[Ensemble]) -> Result<()> {
    let q = ensembles.first().map_or(0, |e| e.horizon());
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(horizon_header(&["instance_id", "scenario_id"], q))?;
        for ens in ensembles {
            for (j, row) in ens.scenarios.row_iter().enumerate() {
                let mut rec = vec![ens.instance_id.clone(), (j + 1).to_string()];
                rec.extend(row.iter().map(|v| v.to_string()));
                out.write_record(&rec)?;
            }
            let mut rec = vec![ens.instance_id.clone(), "mean".to_string()];
            rec.extend(ens.mean.iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    })
}

fn parse_values(record: &csv::StringRecord, skip: usize, line: u64) -> Result<Vec<f64>> {
    record
        .iter()
        .skip(skip)
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("line {line}: bad value `{v}`"))
        })
        .collect()
}

/// Reads a scenarios file back; mean rows are recomputed, not trusted.
pub fn read_scenarios(path: &Path) -> Result<Vec<Ensemble>> {
    let mut rdr =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let q = rdr.headers()?.len().saturating_sub(2);
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<Vec<f64>>> = HashMap::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = n as u64 + 2;
        let id = rec.get(0).context("missing instance_id")?.to_string();
        if rec.get(1) == Some("mean") {
            continue;
        }
        let values = parse_values(&rec, 2, line)?;
        if values.len() != q {
            bail!(
                "{} line {line}: expected {q} horizons, found {}",
                path.display(),
                values.len()
            );
        }
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push(values);
    }
    order
        .into_iter()
        .map(|id| {
            let members = &rows[&id];
            let m = DMatrix::from_fn(members.len(), q, |i, h| members[i][h]);
            Ok(Ensemble::new(id, m)?)
        })
        .collect()
}

/// `instance_id,h001..`: the observed target window per instance.
pub fn write_actuals(path: &Path, rows: &[(String, DVector<f64>)]) -> Result<()> {
    let q = rows.first().map_or(0, |(_, y)| y.len());
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(horizon_header(&["instance_id"], q))?;
        for (id, y) in rows {
            let mut rec = vec![id.clone()];
            rec.extend(y.iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    })
}

pub fn read_actuals(path: &Path) -> Result<Vec<(String, DVector<f64>)>> {
    let mut rdr =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec.get(0).context("missing instance_id")?.to_string();
        out.push((id, DVector::from_vec(parse_values(&rec, 1, n as u64 + 2)?)));
    }
    Ok(out)
}

/// File-system-safe name for an instance id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '-'
            }
        })
        .collect()
}
