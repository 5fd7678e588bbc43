//! Correlations and standardization for comparing attribution scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn check_pair(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim("correlation", format!("{what}: lengths {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Undefined(format!("{what}: need at least two points")));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::numerical(what.to_string(), "non-finite input"));
    }
    Ok(())
}

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b, "pearson correlation")?;
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Undefined("pearson correlation: input has zero variance".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the average of their positions.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Pearson correlation of the rank vectors.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b, "spearman correlation")?;
    pearson(&ranks(a), &ranks(b)).map_err(|_| Error::Undefined("spearman correlation: all values tied".into()))
}

/// Zero mean, unit population standard deviation.
pub fn standardize(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::Undefined("standardization: need at least two values".into()));
    }
    let m = mean(x);
    let sd = population_std(x);
    if sd == 0.0 || !sd.is_finite() {
        return Err(Error::Undefined("standardization: input has zero variance".into()));
    }
    Ok(x.iter().map(|v| (v - m) / sd).collect())
}

pub fn population_std(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Pearson,
    Spearman,
}

impl Metric {
    pub fn apply(self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self {
            Metric::Pearson => pearson(a, b),
            Metric::Spearman => spearman(a, b),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Pearson => "pearson",
            Metric::Spearman => "spearman",
        }
    }
}

/// Scores indexed `[subset][train dataset]`.
pub type ScoreTable = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub method: String,
    pub metric: Metric,
    /// Per run, the per-subset correlations.
    pub per_subset: Vec<Vec<f64>>,
    pub mean: f64,
    pub std: f64,
    pub n_runs: usize,
    pub n_subsets: usize,
}

/// Correlation across training datasets within each test subset.
pub fn subset_correlations(method: &ScoreTable, truth: &ScoreTable, metric: Metric) -> Result<Vec<f64>> {
    if method.len() != truth.len() || method.iter().zip(truth).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::Schema("method and ground-truth tables differ in shape".into()));
    }
    if method.is_empty() {
        return Err(Error::Schema("no subsets to correlate".into()));
    }
    method.iter().zip(truth).map(|(a, b)| metric.apply(a, b)).collect()
}

/// Pools per-subset correlations of several runs into mean and population
/// standard deviation.
pub fn correlation_report(method: &str, runs: &[(ScoreTable, ScoreTable)], metric: Metric) -> Result<CorrelationReport> {
    if runs.is_empty() {
        return Err(Error::Schema("no runs to evaluate".into()));
    }
    let per_subset = runs.iter().map(|(m, t)| subset_correlations(m, t, metric)).collect::<Result<Vec<_>>>()?;
    let n_subsets = per_subset[0].len();
    if per_subset.iter().any(|r| r.len() != n_subsets) {
        return Err(Error::Schema("runs disagree on the number of subsets".into()));
    }
    let flat: Vec<f64> = per_subset.iter().flatten().copied().collect();
    Ok(CorrelationReport {
        method: method.into(),
        metric,
        mean: mean(&flat),
        std: population_std(&flat),
        per_subset,
        n_runs: runs.len(),
        n_subsets,
    })
}
