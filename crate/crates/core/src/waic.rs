//! WAIC: mean log-likelihood across architectures minus its variance.
//!
//! For a log-likelihood matrix `ll[i][j] = log p(x_i | α_j)` with column
//! weights `w_j` (uniform `1/M` when absent), each sample gets
//!
//! ```text
//! μ_i = Σ_j w_j ll_ij,   v_i = Σ_j w_j (ll_ij − μ_i)²,   waic_i = μ_i − v_i
//! ```
//!
//! The Monte-Carlo objective over `M` sampled architectures normalizes both
//! moments by `M` (population variance), so it converges to the exact
//! expectation/variance over the architecture distribution.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search::{ArchDistribution, ArchSample};

/// Largest architecture space [`waic_exact`] will enumerate.
pub const MAX_ENUMERATION: u128 = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct LogLikMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl LogLikMatrix {
    /// `data` is row-major `rows × cols`.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Data(format!("log-likelihood matrix is empty ({rows}x{cols})")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(at) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite log-likelihood at sample {}, architecture {}",
                at / cols,
                at % cols
            )));
        }
        Ok(LogLikMatrix {
            rows,
            cols,
            data,
            weights: None,
        })
    }

    /// One column per architecture/model.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Shape("columns differ in length".into()));
        }
        let data = (0..rows)
            .flat_map(|i| columns.iter().map(move |c| c[i]))
            .collect();
        Self::new(rows, cols, data)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.cols {
            return Err(Error::Shape(format!(
                "{} weights for {} columns",
                weights.len(),
                self.cols
            )));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Parameter(format!(
                "column weights must be nonnegative and sum to 1 (sum {sum})"
            )));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Explicit weights, or `1/M` each.
    pub fn effective_weights(&self) -> Vec<f64> {
        self.weights
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.cols as f64; self.cols])
    }

    /// Adds `c` to every entry.
    pub fn shifted(&self, c: f64) -> Self {
        LogLikMatrix {
            data: self.data.iter().map(|v| v + c).collect(),
            ..self.clone()
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["sample_id".to_string()];
        header.extend((0..self.cols).map(|j| format!("arch_{j}")));
        w.write_record(&header)?;
        for i in 0..self.rows {
            let mut rec = vec![i.to_string()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.get(0) != Some("sample_id") {
            return Err(Error::Data("log-likelihood CSV must start with sample_id".into()));
        }
        for (j, h) in header.iter().skip(1).enumerate() {
            if h != format!("arch_{j}") {
                return Err(Error::Data(format!("unexpected column {h}")));
            }
        }
        let cols = header.len() - 1;
        let mut data = Vec::new();
        let mut rows = 0;
        for rec in r.records() {
            let rec = rec?;
            for v in rec.iter().skip(1) {
                data.push(parse_f64(v)?);
            }
            rows += 1;
        }
        Self::new(rows, cols, data)
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Data(format!("not a number: {s:?}")))
}

/// Weighted mean and variance of one row, in fixed column order.
pub fn weighted_moments(row: &[f64], weights: &[f64]) -> (f64, f64) {
    let mut mean = 0.0;
    for (v, w) in row.iter().zip(weights) {
        mean += w * v;
    }
    let mut var = 0.0;
    for (v, w) in row.iter().zip(weights) {
        var += w * (v - mean) * (v - mean);
    }
    (mean, var)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    #[default]
    Sum,
    Mean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaicReport {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub score: Vec<f64>,
}

impl WaicReport {
    pub fn len(&self) -> usize {
        self.score.len()
    }

    pub fn is_empty(&self) -> bool {
        self.score.is_empty()
    }

    pub fn aggregate(&self, how: Aggregate) -> f64 {
        let total: f64 = self.score.iter().sum();
        match how {
            Aggregate::Sum => total,
            Aggregate::Mean => total / self.score.len() as f64,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sample_id", "mean", "variance", "waic"])?;
        for i in 0..self.len() {
            w.write_record([
                i.to_string(),
                self.mean[i].to_string(),
                self.variance[i].to_string(),
                self.score[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["sample_id", "mean", "variance", "waic"] {
            return Err(Error::Data("WAIC CSV header must be sample_id,mean,variance,waic".into()));
        }
        let mut out = WaicReport {
            mean: Vec::new(),
            variance: Vec::new(),
            score: Vec::new(),
        };
        for rec in r.records() {
            let rec = rec?;
            out.mean.push(parse_f64(&rec[1])?);
            out.variance.push(parse_f64(&rec[2])?);
            out.score.push(parse_f64(&rec[3])?);
        }
        Ok(out)
    }

    pub fn read_path(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f)
    }
}

pub fn waic_per_sample(ll: &LogLikMatrix) -> WaicReport {
    let w = ll.effective_weights();
    let mut report = WaicReport {
        mean: Vec::with_capacity(ll.rows),
        variance: Vec::with_capacity(ll.rows),
        score: Vec::with_capacity(ll.rows),
    };
    for i in 0..ll.rows {
        let (m, v) = weighted_moments(ll.row(i), &w);
        report.mean.push(m);
        report.variance.push(v);
        report.score.push(m - v);
    }
    report
}

/// Negative summed WAIC of a batch and its gradient w.r.t. each entry.
#[derive(Clone, Debug)]
pub struct McObjective {
    pub loss: f64,
    /// Row-major `∂loss/∂ll_ij`.
    pub grad: Vec<f64>,
    pub report: WaicReport,
}

/// `loss = −Σ_i (μ_i − v_i)`, with `∂loss/∂ll_ij = −w_j (1 − 2 (ll_ij − μ_i))`.
pub fn waic_mc_objective(ll: &LogLikMatrix) -> McObjective {
    let w = ll.effective_weights();
    let report = waic_per_sample(ll);
    let mut grad = Vec::with_capacity(ll.rows * ll.cols);
    for i in 0..ll.rows {
        let mu = report.mean[i];
        for (j, &v) in ll.row(i).iter().enumerate() {
            grad.push(-w[j] * (1.0 - 2.0 * (v - mu)));
        }
    }
    McObjective {
        loss: -report.aggregate(Aggregate::Sum),
        grad,
        report,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactWaic {
    /// Sample average of the per-sample expected log-likelihood.
    pub mean_term: f64,
    /// Sample average of the per-sample variance across architectures.
    pub variance_term: f64,
    /// `mean_term − variance_term`.
    pub score: f64,
    /// Variance of the dataset-averaged log-likelihood across architectures.
    pub dataset_variance: f64,
    pub per_sample: WaicReport,
    pub architectures: usize,
}

/// Visits every discrete architecture of `dist` with its probability.
pub fn enumerate_architectures(
    dist: &ArchDistribution,
    mut visit: impl FnMut(&ArchSample, f64) -> Result<()>,
) -> Result<usize> {
    let k = dist.num_ops();
    let rows = dist.rows();
    let count = (k as u128).checked_pow(rows as u32).unwrap_or(u128::MAX);
    if count > MAX_ENUMERATION {
        return Err(Error::Capacity(format!(
            "{count} architectures exceed the enumeration limit {MAX_ENUMERATION}"
        )));
    }
    let mut choices = vec![0usize; rows];
    for _ in 0..count {
        let sample = ArchSample::discrete(choices.clone(), k)?;
        let p = dist.arch_log_prob(&sample)?.exp();
        visit(&sample, p)?;
        for c in choices.iter_mut() {
            *c += 1;
            if *c < k {
                break;
            }
            *c = 0;
        }
    }
    Ok(count as usize)
}

/// Exact WAIC by enumerating every architecture; `oracle` returns the
/// per-sample log-likelihoods of one architecture.
pub fn waic_exact(
    dist: &ArchDistribution,
    mut oracle: impl FnMut(&ArchSample) -> Result<Vec<f64>>,
) -> Result<ExactWaic> {
    let mut columns = Vec::new();
    let mut probs = Vec::new();
    let count = enumerate_architectures(dist, |arch, p| {
        columns.push(oracle(arch)?);
        probs.push(p);
        Ok(())
    })?;
    let total: f64 = probs.iter().sum();
    let weights: Vec<f64> = probs.iter().map(|p| p / total).collect();
    let ll = LogLikMatrix::from_columns(&columns)?;
    let n = ll.rows() as f64;
    let per_sample = waic_per_sample(&ll.clone().with_weights(weights.clone())?);
    let mean_term = per_sample.mean.iter().sum::<f64>() / n;
    let variance_term = per_sample.variance.iter().sum::<f64>() / n;
    let dataset_means: Vec<f64> = columns.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let (_, dataset_variance) = weighted_moments(&dataset_means, &weights);
    Ok(ExactWaic {
        mean_term,
        variance_term,
        score: mean_term - variance_term,
        dataset_variance,
        per_sample,
        architectures: count,
    })
}
