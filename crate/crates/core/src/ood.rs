//! Detection metrics for in-distribution (positive, higher score) versus
//! out-of-distribution scores.
//!
//! Thresholds sweep the distinct scores in descending order and classify a
//! sample as in-distribution when its score is at least the threshold, so
//! tied scores always move together.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSets {
    in_scores: Vec<f64>,
    out_scores: Vec<f64>,
}

/// One threshold: counts of in/out samples scoring at least `threshold`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Step {
    tp: u64,
    fp: u64,
}

impl ScoredSets {
    pub fn new(in_scores: Vec<f64>, out_scores: Vec<f64>) -> Result<Self> {
        if in_scores.is_empty() || out_scores.is_empty() {
            return Err(Error::Data("both score sets must be nonempty".into()));
        }
        if in_scores.iter().chain(&out_scores).any(|v| !v.is_finite()) {
            return Err(Error::Data("scores must be finite".into()));
        }
        Ok(ScoredSets { in_scores, out_scores })
    }

    pub fn in_scores(&self) -> &[f64] {
        &self.in_scores
    }

    pub fn out_scores(&self) -> &[f64] {
        &self.out_scores
    }

    pub fn swapped(&self) -> Self {
        ScoredSets {
            in_scores: self.out_scores.clone(),
            out_scores: self.in_scores.clone(),
        }
    }

    fn n_in(&self) -> u64 {
        self.in_scores.len() as u64
    }

    fn n_out(&self) -> u64 {
        self.out_scores.len() as u64
    }

    /// Cumulative counts after each distinct score, descending; starts at (0, 0).
    fn steps(&self) -> Vec<Step> {
        let mut all: Vec<(f64, bool)> = self
            .in_scores
            .iter()
            .map(|&s| (s, true))
            .chain(self.out_scores.iter().map(|&s| (s, false)))
            .collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut steps = vec![Step { tp: 0, fp: 0 }];
        let mut cur = Step { tp: 0, fp: 0 };
        let mut k = 0;
        while k < all.len() {
            let t = all[k].0;
            while k < all.len() && all[k].0 == t {
                if all[k].1 {
                    cur.tp += 1;
                } else {
                    cur.fp += 1;
                }
                k += 1;
            }
            steps.push(cur);
        }
        steps
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

pub fn roc_curve(s: &ScoredSets) -> Vec<RocPoint> {
    let (n_in, n_out) = (s.n_in() as f64, s.n_out() as f64);
    s.steps()
        .into_iter()
        .map(|st| RocPoint {
            fpr: st.fp as f64 / n_out,
            tpr: st.tp as f64 / n_in,
        })
        .collect()
}

/// Trapezoidal area under the ROC curve, accumulated in integer counts.
pub fn auroc(s: &ScoredSets) -> f64 {
    let steps = s.steps();
    let mut twice_area: u128 = 0;
    for w in steps.windows(2) {
        twice_area += (w[1].fp - w[0].fp) as u128 * (w[1].tp + w[0].tp) as u128;
    }
    twice_area as f64 / (2.0 * s.n_in() as f64 * s.n_out() as f64)
}

/// Precision-recall points; the first point sits at recall 0 with the
/// precision of the first threshold.
pub fn pr_curve(s: &ScoredSets) -> Vec<PrPoint> {
    let n_in = s.n_in() as f64;
    let steps = s.steps();
    let mut out = Vec::with_capacity(steps.len());
    for st in &steps[1..] {
        let precision = st.tp as f64 / (st.tp + st.fp) as f64;
        if out.is_empty() {
            out.push(PrPoint { recall: 0.0, precision });
        }
        out.push(PrPoint {
            recall: st.tp as f64 / n_in,
            precision,
        });
    }
    out
}

/// Step-wise average precision `Σ ΔR · P`.
pub fn aupr(s: &ScoredSets) -> f64 {
    let steps = s.steps();
    let mut sum = 0.0;
    for w in steps.windows(2) {
        let d_tp = w[1].tp - w[0].tp;
        if d_tp > 0 {
            sum += d_tp as f64 * (w[1].tp as f64 / (w[1].tp + w[1].fp) as f64);
        }
    }
    // Rounding in the sum can overshoot the exact bound by an ulp.
    (sum / s.n_in() as f64).min(1.0)
}

/// Smallest false-positive rate over thresholds whose TPR reaches `target`.
pub fn fpr_at_tpr(s: &ScoredSets, target: f64) -> Result<f64> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::Parameter(format!("target TPR must lie in (0, 1], got {target}")));
    }
    let (n_in, n_out) = (s.n_in() as f64, s.n_out() as f64);
    Ok(s.steps()
        .into_iter()
        .filter(|st| st.tp as f64 / n_in >= target)
        .map(|st| st.fp as f64 / n_out)
        .fold(f64::INFINITY, f64::min))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub count_in: Vec<u64>,
    pub count_out: Vec<u64>,
}

/// Equal-width bins over the joint range of both sets.
pub fn histogram(s: &ScoredSets, bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Parameter("histogram needs at least one bin".into()));
    }
    let all = s.in_scores.iter().chain(&s.out_scores);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let bins = if lo == hi { 1 } else { bins };
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|b| lo + b as f64 * width).collect();
    edges.push(hi);
    let bin_of = |v: f64| {
        if width == 0.0 {
            0
        } else {
            (((v - lo) / width) as usize).min(bins - 1)
        }
    };
    let mut count_in = vec![0; bins];
    let mut count_out = vec![0; bins];
    for &v in &s.in_scores {
        count_in[bin_of(v)] += 1;
    }
    for &v in &s.out_scores {
        count_out[bin_of(v)] += 1;
    }
    Ok(Histogram {
        edges,
        count_in,
        count_out,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub fpr_at_95_tpr: f64,
    pub auroc: f64,
    pub aupr: f64,
    pub n_in: usize,
    pub n_out: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionReport {
    pub metrics: Metrics,
    pub roc: Vec<RocPoint>,
    pub pr: Vec<PrPoint>,
    pub histogram: Histogram,
}

pub const DEFAULT_BINS: usize = 50;

pub fn evaluate(s: &ScoredSets, bins: usize) -> Result<DetectionReport> {
    Ok(DetectionReport {
        metrics: Metrics {
            fpr_at_95_tpr: fpr_at_tpr(s, 0.95)?,
            auroc: auroc(s),
            aupr: aupr(s),
            n_in: s.in_scores.len(),
            n_out: s.out_scores.len(),
        },
        roc: roc_curve(s),
        pr: pr_curve(s),
        histogram: histogram(s, bins)?,
    })
}

impl DetectionReport {
    /// Writes `report.json`, `roc.csv`, `pr.csv` and `hist.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let json = dir.join("report.json");
        let mut text = serde_json::to_string_pretty(&self.metrics)?;
        text.push('\n');
        std::fs::write(&json, text).map_err(|e| Error::io(&json, e))?;

        let mut w = csv::Writer::from_path(dir.join("roc.csv"))?;
        w.write_record(["fpr", "tpr"])?;
        for p in &self.roc {
            w.write_record([p.fpr.to_string(), p.tpr.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(dir.join("roc.csv"), e))?;

        let mut w = csv::Writer::from_path(dir.join("pr.csv"))?;
        w.write_record(["recall", "precision"])?;
        for p in &self.pr {
            w.write_record([p.recall.to_string(), p.precision.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(dir.join("pr.csv"), e))?;

        let h = &self.histogram;
        let mut w = csv::Writer::from_path(dir.join("hist.csv"))?;
        w.write_record(["bin_left", "bin_right", "count_in", "count_out"])?;
        for b in 0..h.count_in.len() {
            w.write_record([
                h.edges[b].to_string(),
                h.edges[b + 1].to_string(),
                h.count_in[b].to_string(),
                h.count_out[b].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(dir.join("hist.csv"), e))
    }
}
