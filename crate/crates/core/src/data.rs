//! Hourly series ingestion, window assembly, standardization and
//! chronological cross-validation folds.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, TimeDelta, Timelike, Utc};
use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};
use crate::model::{DataMatrix, Instance, Instances};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

/// Aligned hourly series. `None` marks a missing value.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTable {
    timestamps: Vec<DateTime<Utc>>,
    columns: Vec<(String, Vec<Option<f64>>)>,
}

impl SeriesTable {
    pub fn new(
        timestamps: Vec<DateTime<Utc>>,
        columns: Vec<(String, Vec<Option<f64>>)>,
    ) -> Result<Self> {
        for w in timestamps.windows(2) {
            let step = w[1] - w[0];
            if step == TimeDelta::zero() {
                return Err(Error::invalid(format!(
                    "duplicated timestamp {}",
                    w[1].format(TIMESTAMP_FORMAT)
                )));
            }
            if step != TimeDelta::hours(1) {
                return Err(Error::invalid(format!(
                    "timestamps must advance by exactly one hour: {} follows {}",
                    w[1].format(TIMESTAMP_FORMAT),
                    w[0].format(TIMESTAMP_FORMAT)
                )));
            }
        }
        for (name, values) in &columns {
            if values.len() != timestamps.len() {
                return Err(Error::invalid(format!(
                    "column {name} has {} values for {} timestamps",
                    values.len(),
                    timestamps.len()
                )));
            }
        }
        Ok(SeriesTable {
            timestamps,
            columns,
        })
    }

    pub fn timestamps(&self) -> &[DateTime<Utc>] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|(n, _)| n.as_str())
    }

    pub fn column(&self, name: &str) -> Option<&[Option<f64>]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    fn require(&self, name: &str) -> Result<&[Option<f64>]> {
        self.column(name)
            .ok_or_else(|| Error::invalid(format!("column {name} not found")))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.columns.iter().map(|(n, _)| n.clone()));
        w.write_record(&header)?;
        for (i, ts) in self.timestamps.iter().enumerate() {
            let mut row = vec![ts.format(TIMESTAMP_FORMAT).to_string()];
            for (_, values) in &self.columns {
                row.push(values[i].map(|v| v.to_string()).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|n| n.and_utc())
}

/// Reads a `timestamp,<col1>,<col2>,...` CSV. Empty cells become missing.
pub fn read_series<R: Read>(input: R) -> Result<SeriesTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("timestamp") {
        return Err(Error::Parse {
            line: 1,
            message: "first header column must be `timestamp`".into(),
        });
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut timestamps = Vec::new();
    let mut values: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let raw_ts = rec.get(0).unwrap_or_default();
        let ts = parse_timestamp(raw_ts).ok_or_else(|| Error::Parse {
            line,
            message: format!("unparseable timestamp {raw_ts:?}"),
        })?;
        if rec.len() != names.len() + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", names.len() + 1, rec.len()),
            });
        }
        timestamps.push(ts);
        for (j, cell) in rec.iter().skip(1).enumerate() {
            let v = if cell.is_empty() {
                None
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("unparseable value {cell:?} in column {}", names[j]),
                })?;
                if !v.is_finite() {
                    None
                } else {
                    Some(v)
                }
            };
            values[j].push(v);
        }
    }
    SeriesTable::new(timestamps, names.into_iter().zip(values).collect())
}

pub fn load_series(path: impl AsRef<Path>) -> Result<SeriesTable> {
    let file = std::fs::File::open(path.as_ref())?;
    read_series(std::io::BufReader::new(file))
}

/// Where and how long each instance window is.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSpec {
    pub target: String,
    pub predictors: Vec<String>,
    pub start_hour_utc: u32,
    pub horizon: usize,
}

impl WindowSpec {
    pub fn new(target: impl Into<String>, predictors: Vec<String>) -> Self {
        WindowSpec {
            target: target.into(),
            predictors,
            start_hour_utc: 3,
            horizon: 84,
        }
    }
}

/// One instance per day whose `start_hour_utc` window is complete. `x`
/// concatenates the predictor columns in the order given (`r = horizon *
/// predictors`), `y` is the target over the same hours.
pub fn build_instances(table: &SeriesTable, spec: &WindowSpec) -> Result<Instances> {
    if spec.horizon == 0 {
        return Err(Error::invalid("horizon must be at least one hour"));
    }
    if spec.predictors.is_empty() {
        return Err(Error::invalid("at least one predictor column is required"));
    }
    if spec.start_hour_utc > 23 {
        return Err(Error::invalid("start hour must be in 0..=23"));
    }
    let target = table.require(&spec.target)?;
    let predictors = spec
        .predictors
        .iter()
        .map(|p| table.require(p))
        .collect::<Result<Vec<_>>>()?;
    let h = spec.horizon;
    let window = |col: &[Option<f64>], start: usize| -> Option<Vec<f64>> {
        col[start..start + h].iter().copied().collect()
    };

    let mut items = Vec::new();
    for (start, ts) in table.timestamps().iter().enumerate() {
        if ts.hour() != spec.start_hour_utc || ts.minute() != 0 || start + h > table.len() {
            continue;
        }
        let Some(y) = window(target, start) else {
            continue;
        };
        let mut x = Vec::with_capacity(h * predictors.len());
        let mut complete = true;
        for col in &predictors {
            match window(col, start) {
                Some(v) => x.extend(v),
                None => {
                    complete = false;
                    break;
                }
            }
        }
        if complete {
            items.push(Instance::new(
                ts.format(TIMESTAMP_FORMAT).to_string(),
                DVector::from_vec(x),
                DVector::from_vec(y),
            )?);
        }
    }
    if items.is_empty() {
        return Err(Error::invalid("no complete instance windows in table"));
    }
    Instances::new(items)
}

/// Debug dump: `instance_id,kind,offset,value` with kind `x` or `y`.
pub fn write_instance_dump<W: Write>(data: &Instances, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["instance_id", "kind", "offset", "value"])?;
    for inst in data {
        for (kind, v) in [("x", &inst.x), ("y", &inst.y)] {
            for (j, value) in v.iter().enumerate() {
                w.write_record([inst.id.as_str(), kind, &j.to_string(), &value.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-dimension affine map of `z` to zero mean and unit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    means: DVector<f64>,
    scales: DVector<f64>,
}

impl Standardizer {
    pub fn new(means: DVector<f64>, scales: DVector<f64>) -> Result<Self> {
        check_dim("standardizer scales", means.len(), scales.len())?;
        if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("standardizer scales must be positive"));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("standardizer means must be finite"));
        }
        Ok(Standardizer { means, scales })
    }

    /// Mean 0, scale 1 in every dimension.
    pub fn identity(t: usize) -> Self {
        Standardizer {
            means: DVector::zeros(t),
            scales: DVector::from_element(t, 1.0),
        }
    }

    /// Population mean and standard deviation per `z` dimension. Dimensions
    /// without spread keep scale 1.
    pub fn fit(data: &Instances) -> Result<Self> {
        if data.len() < 2 {
            return Err(Error::invalid("standardizer needs at least two instances"));
        }
        let m = DataMatrix::from_instances(data);
        let n = m.n() as f64;
        let means = DVector::from_fn(m.t(), |j, _| m.z.row(j).sum() / n);
        let scales = DVector::from_fn(m.t(), |j, _| {
            let mu = means[j];
            let var = m.z.row(j).iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd > 1e-12 * mu.abs().max(1.0) {
                sd
            } else {
                1.0
            }
        });
        Standardizer::new(means, scales)
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn means(&self) -> &DVector<f64> {
        &self.means
    }

    pub fn scales(&self) -> &DVector<f64> {
        &self.scales
    }

    fn apply_at(&self, offset: usize, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(v.len(), |j, _| {
            (v[j] - self.means[offset + j]) / self.scales[offset + j]
        })
    }

    fn invert_at(&self, offset: usize, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(v.len(), |j, _| {
            v[j] * self.scales[offset + j] + self.means[offset + j]
        })
    }

    pub fn standardize(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("standardize z", self.len(), z.len())?;
        Ok(self.apply_at(0, z))
    }

    pub fn destandardize(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("destandardize z", self.len(), z.len())?;
        Ok(self.invert_at(0, z))
    }

    /// Standardizes a predictor window (the leading `r` dimensions).
    pub fn standardize_x(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() >= self.len() {
            return Err(Error::invalid(
                "predictor window longer than model dimension",
            ));
        }
        Ok(self.apply_at(0, x))
    }

    /// Maps a standardized target window (the trailing `q` dimensions) back
    /// to physical units.
    pub fn destandardize_y(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() >= self.len() {
            return Err(Error::invalid("target window longer than model dimension"));
        }
        Ok(self.invert_at(self.len() - y.len(), y))
    }

    /// Standardized training matrix.
    pub fn standardize_instances(&self, data: &Instances) -> Result<DataMatrix> {
        check_dim("standardizer length", self.len(), data.t())?;
        let mut m = DataMatrix::from_instances(data);
        for mut col in m.z.column_iter_mut() {
            for j in 0..col.len() {
                col[j] = (col[j] - self.means[j]) / self.scales[j];
            }
        }
        Ok(m)
    }
}

/// Train/test index sets of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Contiguous chronological folds: block `j` is the test set of fold `j`.
/// The first `n % k` blocks carry one extra instance.
pub fn fold_split(n: usize, k: usize) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::invalid("need at least two folds"));
    }
    if n < k {
        return Err(Error::invalid(format!(
            "{n} instances cannot fill {k} folds"
        )));
    }
    let (base, extra) = (n / k, n % k);
    let mut start = 0;
    let mut folds = Vec::with_capacity(k);
    for j in 0..k {
        let size = base + usize::from(j < extra);
        let test: Vec<usize> = (start..start + size).collect();
        let train = (0..start).chain(start + size..n).collect();
        folds.push(Fold { train, test });
        start += size;
    }
    Ok(folds)
}
