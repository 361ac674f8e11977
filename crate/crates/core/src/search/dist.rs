//! Architecture distribution φ and Gumbel-Softmax sampling.
//!
//! φ is stored as unnormalized logits, one row per searched edge. A relaxed
//! sample computes, per row,
//!
//! ```text
//! b̃_k = softmax_k((max(log φ_k, -30) + g_k) / τ),   g_k = -ln(-ln u_k),  u_k ~ U(0, 1)
//! ```
//!
//! and keeps the noise `g` so the same sample can be re-evaluated or
//! differentiated with respect to the logits. A discrete sample is the
//! one-hot Gumbel-argmax of the same quantity, which is an exact draw from
//! `Categorical(softmax(logits))`.

use rand::Rng as _;
use rand_distr::Open01;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng;

/// Floor applied to `log φ` before adding Gumbel noise.
pub const LOG_PROB_FLOOR: f64 = -30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    Relaxed,
    Discrete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSample {
    mode: SampleMode,
    rows: usize,
    num_ops: usize,
    weights: Vec<f64>,
    choices: Option<Vec<usize>>,
    gumbel: Option<Vec<f64>>,
    tau: Option<f64>,
    seed: Option<u64>,
}

impl ArchSample {
    /// One-hot sample selecting `choices[row]` on every row.
    pub fn discrete(choices: Vec<usize>, num_ops: usize) -> Result<Self> {
        if let Some(&bad) = choices.iter().find(|&&c| c >= num_ops) {
            return Err(Error::Parameter(format!("op index {bad} out of range 0..{num_ops}")));
        }
        let rows = choices.len();
        let mut weights = vec![0.0; rows * num_ops];
        for (r, &c) in choices.iter().enumerate() {
            weights[r * num_ops + c] = 1.0;
        }
        Ok(ArchSample {
            mode: SampleMode::Discrete,
            rows,
            num_ops,
            weights,
            choices: Some(choices),
            gumbel: None,
            tau: None,
            seed: None,
        })
    }

    /// Relaxed sample from explicit simplex weights (no noise record).
    pub fn relaxed_from_weights(rows: usize, num_ops: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != rows * num_ops {
            return Err(Error::Shape(format!(
                "{rows}x{num_ops} weights expected, got {}",
                weights.len()
            )));
        }
        for r in 0..rows {
            let row = &weights[r * num_ops..(r + 1) * num_ops];
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&w| !(w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Parameter(format!("row {r} is not on the simplex")));
            }
        }
        Ok(ArchSample {
            mode: SampleMode::Relaxed,
            rows,
            num_ops,
            weights,
            choices: None,
            gumbel: None,
            tau: None,
            seed: None,
        })
    }

    pub fn mode(&self) -> SampleMode {
        self.mode
    }

    pub fn is_discrete(&self) -> bool {
        self.mode == SampleMode::Discrete
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn num_ops(&self) -> usize {
        self.num_ops
    }

    /// Row-major `rows × num_ops` simplex weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.num_ops..(r + 1) * self.num_ops]
    }

    pub fn choices(&self) -> Option<&[usize]> {
        self.choices.as_deref()
    }

    pub fn gumbel(&self) -> Option<&[f64]> {
        self.gumbel.as_deref()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchDistribution {
    rows: usize,
    num_ops: usize,
    logits: Vec<f64>,
    tau: f64,
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("temperature must be positive, got {tau}")))
    }
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|&v| v - lse).collect()
}

fn softmax_into(y: &[f64], out: &mut [f64]) {
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(y) {
        *o = (v - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

fn argmax_first(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl ArchDistribution {
    /// Uniform distribution (all logits zero).
    pub fn uniform(rows: usize, num_ops: usize, tau: f64) -> Result<Self> {
        Self::from_logits(rows, num_ops, vec![0.0; rows * num_ops], tau)
    }

    pub fn from_logits(rows: usize, num_ops: usize, logits: Vec<f64>, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        if num_ops == 0 || logits.len() != rows * num_ops {
            return Err(Error::Shape(format!(
                "{rows}x{num_ops} logits expected, got {}",
                logits.len()
            )));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("logits must be finite".into()));
        }
        Ok(ArchDistribution {
            rows,
            num_ops,
            logits,
            tau,
        })
    }

    /// Per-row logits from probabilities (`log p`, with zero mapped to the floor).
    pub fn from_probs(rows: usize, num_ops: usize, probs: &[f64], tau: f64) -> Result<Self> {
        let logits = probs
            .iter()
            .map(|&p| if p > 0.0 { p.ln() } else { LOG_PROB_FLOOR * 2.0 })
            .collect();
        Self::from_logits(rows, num_ops, logits, tau)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn num_ops(&self) -> usize {
        self.num_ops
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn set_tau(&mut self, tau: f64) -> Result<()> {
        check_tau(tau)?;
        self.tau = tau;
        Ok(())
    }

    fn logit_row(&self, r: usize) -> &[f64] {
        &self.logits[r * self.num_ops..(r + 1) * self.num_ops]
    }

    pub fn log_probs(&self, r: usize) -> Vec<f64> {
        log_softmax(self.logit_row(r))
    }

    pub fn probs(&self, r: usize) -> Vec<f64> {
        self.log_probs(r).into_iter().map(f64::exp).collect()
    }

    fn draw_gumbel(&self, seed: u64) -> Vec<f64> {
        let mut r = rng(seed);
        (0..self.rows * self.num_ops)
            .map(|_| {
                let u: f64 = r.sample(Open01);
                -(-u.ln()).ln()
            })
            .collect()
    }

    pub fn sample_relaxed(&self, seed: u64) -> Result<ArchSample> {
        let mut sample = self.relaxed_with_noise(self.draw_gumbel(seed))?;
        sample.seed = Some(seed);
        Ok(sample)
    }

    /// Relaxed sample at fixed Gumbel noise `gumbel` (`rows × num_ops`).
    pub fn relaxed_with_noise(&self, gumbel: Vec<f64>) -> Result<ArchSample> {
        check_tau(self.tau)?;
        if gumbel.len() != self.rows * self.num_ops {
            return Err(Error::Shape("gumbel noise does not match the logits".into()));
        }
        let k = self.num_ops;
        let mut weights = vec![0.0; self.rows * k];
        let mut y = vec![0.0; k];
        for r in 0..self.rows {
            let lp = self.log_probs(r);
            for i in 0..k {
                y[i] = (lp[i].max(LOG_PROB_FLOOR) + gumbel[r * k + i]) / self.tau;
            }
            softmax_into(&y, &mut weights[r * k..(r + 1) * k]);
        }
        Ok(ArchSample {
            mode: SampleMode::Relaxed,
            rows: self.rows,
            num_ops: k,
            weights,
            choices: None,
            gumbel: Some(gumbel),
            tau: Some(self.tau),
            seed: None,
        })
    }

    pub fn sample_discrete(&self, seed: u64) -> ArchSample {
        let gumbel = self.draw_gumbel(seed);
        let k = self.num_ops;
        let choices = (0..self.rows)
            .map(|r| {
                let lp = self.log_probs(r);
                let scores: Vec<f64> = (0..k)
                    .map(|i| lp[i].max(LOG_PROB_FLOOR) + gumbel[r * k + i])
                    .collect();
                argmax_first(&scores)
            })
            .collect();
        let mut sample = ArchSample::discrete(choices, k).expect("choices in range");
        sample.gumbel = Some(gumbel);
        sample.seed = Some(seed);
        sample
    }

    /// Per-row argmax of the logits; ties go to the lowest op index.
    pub fn most_likely(&self) -> ArchSample {
        let choices = (0..self.rows).map(|r| argmax_first(self.logit_row(r))).collect();
        ArchSample::discrete(choices, self.num_ops).expect("choices in range")
    }

    /// `Σ_rows log softmax(logits)[choice]` for a discrete sample.
    pub fn arch_log_prob(&self, sample: &ArchSample) -> Result<f64> {
        let Some(choices) = sample.choices() else {
            return Err(Error::Usage("arch_log_prob needs a discrete sample".into()));
        };
        if sample.rows != self.rows || sample.num_ops != self.num_ops {
            return Err(Error::Shape(format!(
                "sample is {}x{}, distribution is {}x{}",
                sample.rows, sample.num_ops, self.rows, self.num_ops
            )));
        }
        Ok(choices
            .iter()
            .enumerate()
            .map(|(r, &c)| self.log_probs(r)[c])
            .sum())
    }

    /// Pulls `∂L/∂b̃` back to `∂L/∂logits` through the relaxation at the
    /// sample's recorded noise and temperature.
    pub fn relaxed_backward(&self, sample: &ArchSample, grad_weights: &[f64]) -> Result<Vec<f64>> {
        let (Some(_), Some(tau)) = (sample.gumbel(), sample.tau) else {
            return Err(Error::Usage(
                "relaxed_backward needs a relaxed sample drawn from a distribution".into(),
            ));
        };
        if sample.mode != SampleMode::Relaxed {
            return Err(Error::Usage("relaxed_backward needs a relaxed sample".into()));
        }
        let k = self.num_ops;
        if grad_weights.len() != self.rows * k || sample.rows != self.rows {
            return Err(Error::Shape("gradient does not match the logits".into()));
        }
        let mut out = vec![0.0; self.rows * k];
        for r in 0..self.rows {
            let b = sample.row(r);
            let g = &grad_weights[r * k..(r + 1) * k];
            let inner: f64 = b.iter().zip(g).map(|(b, g)| b * g).sum();
            let lp = self.log_probs(r);
            let g_lp: Vec<f64> = (0..k)
                .map(|i| {
                    if lp[i] < LOG_PROB_FLOOR {
                        0.0
                    } else {
                        b[i] * (g[i] - inner) / tau
                    }
                })
                .collect();
            let total: f64 = g_lp.iter().sum();
            for i in 0..k {
                out[r * k + i] = g_lp[i] - lp[i].exp() * total;
            }
        }
        Ok(out)
    }
}
