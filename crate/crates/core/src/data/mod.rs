//! Datasets: CSV ingestion, preprocessing, cross-validation folds and the
//! synthetic benchmark generator.

mod sample;

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::{Family, ParamVector};
use crate::rng::{stream, Purpose};

pub use sample::{gamma, inverse_gaussian, poisson, sample, sample_one, standard_normal};

/// Tokens treated as missing values.
pub const MISSING_TOKENS: [&str; 3] = ["", "NA", "null"];

/// Rows of strings as read from a CSV file, after dropping rows with missing
/// values.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Rows rejected for containing a missing value.
    pub rejected: usize,
}

impl RawTable {
    pub fn from_reader<R: Read>(reader: R) -> Result<RawTable> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if headers.is_empty() || headers.iter().all(String::is_empty) {
            return Err(Error::Parse("CSV has no header".into()));
        }
        let mut seen = BTreeSet::new();
        for h in &headers {
            if !seen.insert(h) {
                return Err(Error::Parse(format!("duplicate column '{h}'")));
            }
        }
        let mut rows = Vec::new();
        let mut rejected = 0;
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != headers.len() {
                return Err(Error::Parse(format!(
                    "line {}: expected {} fields, found {}",
                    rec.position().map_or(0, |p| p.line()),
                    headers.len(),
                    rec.len()
                )));
            }
            let row: Vec<String> = rec.iter().map(|f| f.trim().to_string()).collect();
            if row.iter().any(|f| MISSING_TOKENS.contains(&f.as_str())) {
                rejected += 1;
                continue;
            }
            rows.push(row);
        }
        if rejected > 0 {
            log::info!("rejected {rejected} rows with missing values");
        }
        Ok(RawTable { headers, rows, rejected })
    }

    pub fn from_path(path: &Path) -> Result<RawTable> {
        let file = std::fs::File::open(path)?;
        RawTable::from_reader(file)
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("column '{name}' not found; columns: {}", self.headers.join(", "))))
    }

    fn numeric_column(&self, idx: usize) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r[idx].parse::<f64>().ok().filter(|v| v.is_finite())).collect()
    }
}

/// How one input column becomes model features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum ColumnTransform {
    /// Affine map of `[min, max]` onto `[-1, 1]`.
    Numeric { name: String, min: f64, max: f64 },
    /// One 0/1 indicator per category, in lexicographic order.
    Categorical { name: String, categories: Vec<String> },
}

impl ColumnTransform {
    pub fn name(&self) -> &str {
        match self {
            ColumnTransform::Numeric { name, .. } | ColumnTransform::Categorical { name, .. } => name,
        }
    }

    fn width(&self) -> usize {
        match self {
            ColumnTransform::Numeric { .. } => 1,
            ColumnTransform::Categorical { categories, .. } => categories.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum TargetTransform {
    None,
    Standardize { mean: f64, sd: f64 },
    /// Fit on `log(y)`, invert with `exp`.
    Log,
}

/// Requested target treatment; statistics are filled in when fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMode {
    #[default]
    None,
    Standardize,
    Log,
}

/// Everything needed to apply the same preprocessing to new data and to
/// map features and targets back to original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSpec {
    pub columns: Vec<ColumnTransform>,
    pub target: String,
    pub target_transform: TargetTransform,
}

/// Model-ready data.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub feature_names: Vec<String>,
    /// Binomial trial count, when the response is a count of successes.
    pub trials: Option<u32>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Result<Dataset> {
        if x.nrows() != y.len() {
            return Err(Error::Dimension(format!("{} rows of features for {} targets", x.nrows(), y.len())));
        }
        let feature_names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Ok(Dataset {
            x,
            y,
            feature_names,
            trials: None,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), rows),
            y: self.y.select(Axis(0), rows),
            feature_names: self.feature_names.clone(),
            trials: self.trials,
        }
    }
}

impl TargetTransform {
    fn fit(mode: TargetMode, y: &[f64]) -> Result<TargetTransform> {
        Ok(match mode {
            TargetMode::None => TargetTransform::None,
            TargetMode::Log => TargetTransform::Log,
            TargetMode::Standardize => {
                let n = y.len() as f64;
                let mean = y.iter().sum::<f64>() / n;
                let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                if !(sd > 0.0) {
                    return Err(Error::Domain("cannot standardize a constant target".into()));
                }
                TargetTransform::Standardize { mean, sd }
            }
        })
    }

    pub fn apply(&self, y: f64) -> Result<f64> {
        match *self {
            TargetTransform::None => Ok(y),
            TargetTransform::Standardize { mean, sd } => Ok((y - mean) / sd),
            TargetTransform::Log => {
                if y > 0.0 {
                    Ok(y.ln())
                } else {
                    Err(Error::Domain(format!("log target transform needs y > 0, got {y}")))
                }
            }
        }
    }

    pub fn invert(&self, v: f64) -> f64 {
        match *self {
            TargetTransform::None => v,
            TargetTransform::Standardize { mean, sd } => v * sd + mean,
            TargetTransform::Log => v.exp(),
        }
    }
}

/// Maps `v` from `[min, max]` onto `[-1, 1]`.
pub fn scale_unit(v: f64, min: f64, max: f64) -> f64 {
    2.0 * (v - min) / (max - min) - 1.0
}

pub fn unscale_unit(v: f64, min: f64, max: f64) -> f64 {
    min + (v + 1.0) * 0.5 * (max - min)
}

impl PreprocessSpec {
    /// Learns the preprocessing from `table` and applies it. Columns in
    /// `ignore` are dropped. Quantile smoothing is deliberately not applied.
    pub fn fit(table: &RawTable, target: &str, mode: TargetMode, ignore: &[String]) -> Result<(Dataset, PreprocessSpec)> {
        let target_idx = table.column_index(target)?;
        if table.rows.is_empty() {
            return Err(Error::Domain("no complete rows in the table".into()));
        }
        let mut columns = Vec::new();
        for (c, name) in table.headers.iter().enumerate() {
            if c == target_idx || ignore.iter().any(|pat| matches_pattern(pat, name)) {
                continue;
            }
            let col = match table.numeric_column(c) {
                Some(values) => {
                    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
                    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    if !(max > min) {
                        return Err(Error::Domain(format!(
                            "numeric column '{name}' is constant ({min}); it cannot be scaled"
                        )));
                    }
                    ColumnTransform::Numeric {
                        name: name.clone(),
                        min,
                        max,
                    }
                }
                None => {
                    let cats: BTreeSet<&str> = table.rows.iter().map(|r| r[c].as_str()).collect();
                    ColumnTransform::Categorical {
                        name: name.clone(),
                        categories: cats.into_iter().map(String::from).collect(),
                    }
                }
            };
            columns.push(col);
        }
        if columns.is_empty() {
            return Err(Error::Config("no feature columns left after removing the target".into()));
        }
        let y = parse_target(table, target_idx)?;
        let spec = PreprocessSpec {
            columns,
            target: target.to_string(),
            target_transform: TargetTransform::fit(mode, &y)?,
        };
        let ds = spec.apply(table)?;
        Ok((ds, spec))
    }

    /// Names of the model input columns.
    pub fn feature_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .flat_map(|c| match c {
                ColumnTransform::Numeric { name, .. } => vec![name.clone()],
                ColumnTransform::Categorical { name, categories } => {
                    categories.iter().map(|cat| format!("{name}={cat}")).collect()
                }
            })
            .collect()
    }

    pub fn n_features(&self) -> usize {
        self.columns.iter().map(ColumnTransform::width).sum()
    }

    /// Applies the stored preprocessing to a table with the same columns.
    pub fn apply(&self, table: &RawTable) -> Result<Dataset> {
        let target_idx = table.column_index(&self.target)?;
        let x = self.apply_features(table)?;
        let raw_y = parse_target(table, target_idx)?;
        let y = raw_y
            .iter()
            .map(|&v| self.target_transform.apply(v))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            x,
            y: Array1::from(y),
            feature_names: self.feature_names(),
            trials: None,
        })
    }

    pub fn apply_features(&self, table: &RawTable) -> Result<Array2<f64>> {
        let idx = self
            .columns
            .iter()
            .map(|c| table.column_index(c.name()))
            .collect::<Result<Vec<_>>>()?;
        let mut x = Array2::zeros((table.rows.len(), self.n_features()));
        for (i, row) in table.rows.iter().enumerate() {
            let mut j = 0;
            for (col, &c) in self.columns.iter().zip(&idx) {
                match col {
                    ColumnTransform::Numeric { name, min, max } => {
                        let v: f64 = row[c].parse().map_err(|_| {
                            Error::Domain(format!("row {i}: column '{name}' value '{}' is not numeric", row[c]))
                        })?;
                        x[[i, j]] = scale_unit(v, *min, *max);
                        j += 1;
                    }
                    ColumnTransform::Categorical { name, categories } => {
                        let pos = categories.iter().position(|k| k == &row[c]).ok_or_else(|| {
                            Error::Domain(format!("row {i}: unseen category '{}' in column '{name}'", row[c]))
                        })?;
                        x[[i, j + pos]] = 1.0;
                        j += categories.len();
                    }
                }
            }
        }
        Ok(x)
    }

    /// Maps model input column `j` back to original units.
    pub fn invert_feature(&self, j: usize, v: f64) -> Result<f64> {
        let mut offset = 0;
        for c in &self.columns {
            let w = c.width();
            if j < offset + w {
                return Ok(match c {
                    ColumnTransform::Numeric { min, max, .. } => unscale_unit(v, *min, *max),
                    ColumnTransform::Categorical { .. } => v,
                });
            }
            offset += w;
        }
        Err(Error::Dimension(format!("feature {j} out of range ({} features)", offset)))
    }
}

fn matches_pattern(pattern: &str, name: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => name.starts_with(prefix),
        None => pattern == name,
    }
}

fn parse_target(table: &RawTable, idx: usize) -> Result<Vec<f64>> {
    table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r[idx]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Domain(format!("row {i}: target value '{}' is not numeric", r[idx])))
        })
        .collect()
}

/// Shuffled k-fold assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    /// Row indices of each test fold.
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn test(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    pub fn train(&self, fold: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }
}

/// Shuffles `0..n` with `seed` and cuts it into `k` contiguous folds whose
/// sizes differ by at most one (larger folds first).
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::Config(format!("cannot split {n} rows into {k} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, Purpose::Folds, 0));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold = idx[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(FoldPlan { n, k, seed, folds })
}

pub const SYNTH_FEATURES: usize = 5;

/// The four location/scale/shape generating functions on the unit cube.
pub fn synth_params(x: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != SYNTH_FEATURES {
        return Err(Error::Dimension(format!("synthetic inputs have {SYNTH_FEATURES} columns, got {}", x.ncols())));
    }
    if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("synthetic input {v} is outside [0, 1]")));
    }
    let mut out = Array2::zeros((x.nrows(), 4));
    for (i, r) in x.rows().into_iter().enumerate() {
        let (x1, x2, x3, x4, x5) = (r[0], r[1], r[2], r[3], r[4]);
        out[[i, 0]] = 30.0 / 13.0 * x1 / ((3.0 * x2 + 1.5) - 2.0 * (x3 / 2.0).sin()) + 113.0 / 115.0 * x4 + 0.1 * x5;
        out[[i, 1]] = (-0.0035 * x1 + (x2 - 0.23).powi(2) - 1.42 * x3).exp() + 0.0001 * x4;
        out[[i, 2]] = (4.0 * x1 - 90.0 * x2) / 42.0;
        out[[i, 3]] = (0.0323 * x2 + 0.0123 - 0.0234 * x4).exp();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub family: Family,
    pub n: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(family: Family, seed: u64) -> SynthConfig {
        SynthConfig { family, n: 3000, seed }
    }
}

/// A simulated dataset with its generating parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub family: Family,
    /// Inputs on the unit cube.
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    /// Raw generating functions, one column each.
    pub theta: Array2<f64>,
    /// True distribution parameters.
    pub params: ParamVector,
}

/// Draws inputs uniformly on the unit cube, maps the first `K` generating
/// functions through the family's output activations and samples responses.
pub fn synth_dataset(config: &SynthConfig) -> Result<SynthData> {
    if config.n == 0 {
        return Err(Error::Config("synthetic n must be >= 1".into()));
    }
    let mut rng = stream(config.seed, Purpose::Features, 0);
    let x = Array2::from_shape_simple_fn((config.n, SYNTH_FEATURES), || rng.gen::<f64>());
    let theta = synth_params(x.view())?;
    let k = config.family.k();
    let params = config.family.activate(theta.slice(ndarray::s![.., 0..k]))?;
    let y = sample(&config.family, &params, &mut stream(config.seed, Purpose::Responses, 0))?;
    Ok(SynthData {
        family: config.family,
        x,
        y,
        theta,
        params,
    })
}

impl SynthData {
    pub const HEADER: [&'static str; 10] = [
        "x1",
        "x2",
        "x3",
        "x4",
        "x5",
        "y",
        "true_theta1",
        "true_theta2",
        "true_theta3",
        "true_theta4",
    ];

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(Self::HEADER)?;
        for i in 0..self.y.len() {
            let mut rec: Vec<String> = self.x.row(i).iter().map(|v| format!("{v:?}")).collect();
            rec.push(format!("{:?}", self.y[i]));
            rec.extend(self.theta.row(i).iter().map(|v| format!("{v:?}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// The simulated rows as a table with the CSV column names.
    pub fn to_table(&self) -> Result<RawTable> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        RawTable::from_reader(&buf[..])
    }

    /// Model-ready data on the unit cube (no rescaling).
    pub fn dataset(&self) -> Dataset {
        Dataset {
            x: self.x.clone(),
            y: self.y.clone(),
            feature_names: Self::HEADER[..SYNTH_FEATURES].iter().map(|s| s.to_string()).collect(),
            trials: Some(self.family.trials),
        }
    }
}
