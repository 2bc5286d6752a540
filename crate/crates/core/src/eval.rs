//! Evaluation metrics and fold aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::{Family, ParamVector};

fn check_lengths(y: ArrayView1<f64>, yhat: ArrayView1<f64>) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Domain("metric needs at least one observation".into()));
    }
    if y.len() != yhat.len() {
        return Err(Error::Dimension(format!("{} targets but {} predictions", y.len(), yhat.len())));
    }
    Ok(())
}

pub fn mse(y: ArrayView1<f64>, yhat: ArrayView1<f64>) -> Result<f64> {
    check_lengths(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
}

/// `(2/n) Σ [ln(ŷ/y) + y/ŷ − 1]`.
pub fn mean_gamma_deviance(y: ArrayView1<f64>, yhat: ArrayView1<f64>) -> Result<f64> {
    check_lengths(y, yhat)?;
    let mut sum = 0.0;
    for (i, (&a, &b)) in y.iter().zip(yhat).enumerate() {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::Domain(format!(
                "gamma deviance needs positive values; row {i} has y = {a}, prediction = {b}"
            )));
        }
        let r = a / b;
        // ln(ŷ/y) + y/ŷ - 1 = r - 1 - ln r
        sum += (r - 1.0) - r.ln();
    }
    Ok(2.0 * sum / y.len() as f64)
}

/// Area under the ROC curve from a sweep over the distinct scores, highest
/// first. Between consecutive operating points the area is a rectangle,
/// except where a threshold moves both rates at once (tied scores across
/// classes), which adds the trapezoid, so each tied pair counts one half.
pub fn auc_riemann(y: ArrayView1<f64>, scores: ArrayView1<f64>) -> Result<f64> {
    check_lengths(y, scores)?;
    if let Some((i, v)) = y.iter().enumerate().find(|(_, v)| **v != 0.0 && **v != 1.0) {
        return Err(Error::Domain(format!("AUC needs 0/1 labels; row {i} is {v}")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("AUC scores contain NaN".into()));
    }
    let pos = y.iter().filter(|v| **v == 1.0).count();
    let neg = y.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Domain("AUC needs both classes in the labels".into()));
    }
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if y[order[i]] == 1.0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let dx = (fp - fp0) as f64 / neg as f64;
        let mid = (tp0 + tp) as f64 / 2.0 / pos as f64;
        area += dx * mid;
    }
    Ok(area)
}

/// What a model provides for a likelihood evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Prediction<'a> {
    Params(&'a ParamVector),
    /// Mean predictions only; the remaining parameters are approximated
    /// from the data.
    Mean(ArrayView1<'a, f64>),
}

/// Summed held-out log-likelihood `ℓ = −n · mean NLL`.
pub fn heldout_loglik(family: &Family, pred: Prediction<'_>, y: ArrayView1<f64>) -> Result<f64> {
    let params;
    let params = match pred {
        Prediction::Params(p) => p,
        Prediction::Mean(m) => {
            if m.len() != y.len() {
                return Err(Error::Dimension(format!("{} targets but {} predictions", y.len(), m.len())));
            }
            params = family.approx_params_from_mean(m, y)?;
            &params
        }
    };
    Ok(-(y.len() as f64) * family.nll(params, y)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    LogLikelihood,
    Mse,
    GammaDeviance,
    Auc,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::LogLikelihood => "log_likelihood",
            Metric::Mse => "mse",
            Metric::GammaDeviance => "gamma_deviance",
            Metric::Auc => "auc",
        }
    }

    /// Parses a comma-separated list such as `nll,mse`.
    pub fn parse_list(s: &str) -> Result<Vec<Metric>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m: Metric = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(Error::Config("no metrics requested".into()));
        }
        Ok(out)
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Metric> {
        Ok(match s {
            "nll" | "ll" | "loglik" | "log_likelihood" | "log-likelihood" => Metric::LogLikelihood,
            "mse" => Metric::Mse,
            "gamma-deviance" | "gamma_deviance" | "deviance" => Metric::GammaDeviance,
            "auc" => Metric::Auc,
            other => {
                return Err(Error::Config(format!(
                    "unknown metric '{other}'; valid: nll, mse, gamma-deviance, auc"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
}

/// Per-fold metric values plus their mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: Vec<Metric>,
    pub folds: Vec<BTreeMap<Metric, f64>>,
    pub aggregate: BTreeMap<Metric, Summary>,
}

/// Mean and `k − 1` standard deviation of each metric over folds.
pub fn aggregate_folds(folds: &[BTreeMap<Metric, f64>]) -> Result<MetricReport> {
    if folds.len() < 2 {
        return Err(Error::Domain(format!(
            "standard deviation over folds needs at least 2 folds, got {}",
            folds.len()
        )));
    }
    let metrics: Vec<Metric> = folds[0].keys().copied().collect();
    let mut aggregate = BTreeMap::new();
    for &m in &metrics {
        let vals = folds
            .iter()
            .enumerate()
            .map(|(i, f)| {
                f.get(&m)
                    .copied()
                    .ok_or_else(|| Error::Contract(format!("fold {i} lacks metric {}", m.as_str())))
            })
            .collect::<Result<Vec<f64>>>()?;
        let n = vals.len() as f64;
        let rough = vals.iter().sum::<f64>() / n;
        // second pass removes the rounding of the first
        let mean = rough + vals.iter().map(|v| v - rough).sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        aggregate.insert(m, Summary { mean, sd });
    }
    Ok(MetricReport {
        metrics,
        folds: folds.to_vec(),
        aggregate,
    })
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned text table: one row per fold, then `mean ± (sd)`.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["fold".to_string()];
        header.extend(self.metrics.iter().map(|m| m.as_str().to_string()));
        rows.push(header);
        for (i, f) in self.folds.iter().enumerate() {
            let mut r = vec![(i + 1).to_string()];
            r.extend(self.metrics.iter().map(|m| format!("{:.4}", f[m])));
            rows.push(r);
        }
        let mut agg = vec!["all".to_string()];
        agg.extend(self.metrics.iter().map(|m| {
            let s = self.aggregate[m];
            format!("{:.4} ± ({:.4})", s.mean, s.sd)
        }));
        rows.push(agg);
        let ncol = rows[0].len();
        let widths: Vec<usize> = (0..ncol).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for r in &rows {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:>w$}", w = *w))
                .collect();
            let _ = writeln!(out, "{}", line.join("  "));
        }
        out
    }
}

/// Metrics for one set of predictions.
pub fn evaluate_metrics(
    metrics: &[Metric],
    family: &Family,
    pred: Prediction<'_>,
    mean: ArrayView1<f64>,
    y: ArrayView1<f64>,
) -> Result<BTreeMap<Metric, f64>> {
    let mut out = BTreeMap::new();
    for &m in metrics {
        let v = match m {
            Metric::LogLikelihood => heldout_loglik(family, pred, y)?,
            Metric::Mse => mse(y, mean)?,
            Metric::GammaDeviance => mean_gamma_deviance(y, mean)?,
            Metric::Auc => auc_riemann(y, mean)?,
        };
        out.insert(m, v);
    }
    Ok(out)
}

/// Mann–Whitney pair count; quadratic, kept for cross-checks.
pub fn auc_pairwise(y: ArrayView1<f64>, scores: ArrayView1<f64>) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..y.len() {
        if y[i] != 1.0 {
            continue;
        }
        for j in 0..y.len() {
            if y[j] != 0.0 {
                continue;
            }
            den += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / den
}

/// Constant-mean baseline predictions.
pub fn constant_predictions(value: f64, n: usize) -> Array1<f64> {
    Array1::from_elem(n, value)
}
