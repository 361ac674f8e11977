//! Joint optimization of flow parameters θ and architecture logits φ
//! against the negative Monte-Carlo WAIC of each batch.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::SearchConfig;
use super::schedule::anneal_tau;
use super::{clip_global_norm, sample_batch};
use crate::error::{Error, Result};
use crate::flow::{checkpoint, FlowModel, FlowTrace};
use crate::rng::{derive, derive_tagged};
use crate::search::{ArchDistribution, ArchSample};
use crate::tensor::Tensor;
use crate::waic::{waic_mc_objective, LogLikMatrix};

pub const THETA_FILE: &str = "theta.nads";
pub const STATE_FILE: &str = "search_state.json";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub tau: f64,
    /// Global norm before clipping.
    pub grad_norm: f64,
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "loss", "tau", "grad_norm"])?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.loss.to_string(),
            r.tau.to_string(),
            r.grad_norm.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<trace>", e))
}

#[derive(Serialize, Deserialize)]
struct SavedState {
    step: usize,
    rows: usize,
    num_ops: usize,
    logits: Vec<f64>,
    adam: Adam,
    trace: Vec<TraceRow>,
}

/// Stateful search loop; one [`step`](Searcher::step) per iteration.
#[derive(Clone, Debug)]
pub struct Searcher {
    config: SearchConfig,
    data: Tensor,
    model: FlowModel,
    dist: ArchDistribution,
    adam: Adam,
    step: usize,
    trace: Vec<TraceRow>,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub model: FlowModel,
    pub dist: ArchDistribution,
    pub trace: Vec<TraceRow>,
    pub skipped_updates: u64,
}

/// Negative summed WAIC of `batch` over the relaxed samples `archs`, with
/// its gradients with respect to θ and the logits of `dist`.
#[derive(Clone, Debug)]
pub struct LossAndGrad {
    pub loss: f64,
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
}

pub fn waic_loss_and_grad(
    model: &FlowModel,
    dist: &ArchDistribution,
    batch: &Tensor,
    archs: &[ArchSample],
) -> Result<LossAndGrad> {
    if archs.is_empty() {
        return Err(Error::Parameter("at least one architecture sample is needed".into()));
    }
    let forwards: Vec<(Vec<f64>, FlowTrace)> = archs
        .par_iter()
        .map(|a| {
            let (out, trace) = model.forward_trace(batch, a)?;
            Ok((FlowModel::log_prob_of(&out), trace))
        })
        .collect::<Result<_>>()?;
    let columns: Vec<Vec<f64>> = forwards.iter().map(|(ll, _)| ll.clone()).collect();
    let obj = waic_mc_objective(&LogLikMatrix::from_columns(&columns)?);
    let m = archs.len();
    let n = batch.batch();
    let per_arch: Vec<(Vec<f64>, Vec<f64>)> = forwards
        .par_iter()
        .zip(archs.par_iter())
        .enumerate()
        .map(|(j, ((_, trace), arch))| {
            let upstream: Vec<f64> = (0..n).map(|i| obj.grad[i * m + j]).collect();
            let g = model.backward(trace, &upstream)?;
            let g_phi = dist.relaxed_backward(arch, &g.arch)?;
            Ok((g.params, g_phi))
        })
        .collect::<Result<_>>()?;
    let mut theta = vec![0.0; model.num_params()];
    let mut phi = vec![0.0; dist.logits().len()];
    for (g_theta, g_phi) in &per_arch {
        for (a, b) in theta.iter_mut().zip(g_theta) {
            *a += b;
        }
        for (a, b) in phi.iter_mut().zip(g_phi) {
            *a += b;
        }
    }
    Ok(LossAndGrad {
        loss: obj.loss,
        theta,
        phi,
    })
}

fn uniform_relaxed(rows: usize, k: usize) -> Result<ArchSample> {
    ArchSample::relaxed_from_weights(rows, k, vec![1.0 / k as f64; rows * k])
}

impl Searcher {
    pub fn new(config: SearchConfig, data: &Tensor) -> Result<Self> {
        config.validate()?;
        if data.batch() == 0 {
            return Err(Error::Data("search needs a nonempty dataset".into()));
        }
        let [_, c, h, w] = data.shape();
        let spec = config.flow_spec([c, h, w]);
        let mut model = FlowModel::new(spec, derive_tagged(config.seed, "search/model"))?;
        let rows = model.spec().arch_rows();
        let k = config.space.ops.len();
        let tau = anneal_tau(&config.tau, 0)?;
        let dist = ArchDistribution::uniform(rows, k, tau)?;
        let init = sample_batch(data, config.init_batch, derive_tagged(config.seed, "search/init"));
        model.initialize_actnorm(&init, &uniform_relaxed(rows, k)?)?;
        let adam = Adam::new(model.num_params() + rows * k, config.beta1, config.beta2, config.epsilon);
        Ok(Searcher {
            config,
            data: data.clone(),
            model,
            dist,
            adam,
            step: 0,
            trace: Vec::new(),
        })
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }

    pub fn model(&self) -> &FlowModel {
        &self.model
    }

    pub fn dist(&self) -> &ArchDistribution {
        &self.dist
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    /// Completed iterations.
    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn skipped_updates(&self) -> u64 {
        self.adam.skipped()
    }

    /// Relaxed samples used at iteration `step`.
    pub fn arch_samples_at(&self, step: usize) -> Result<Vec<ArchSample>> {
        let root = derive_tagged(self.config.seed, "search/arch");
        let m = self.config.arch_samples as u64;
        (0..m)
            .map(|j| self.dist.sample_relaxed(derive(root, step as u64 * m + j)))
            .collect()
    }

    /// One iteration. On failure the state is left as it was before the call.
    pub fn step(&mut self) -> Result<TraceRow> {
        let tau = anneal_tau(&self.config.tau, self.step)?;
        self.dist.set_tau(tau)?;
        let batch = sample_batch(
            &self.data,
            self.config.batch_size,
            derive(derive_tagged(self.config.seed, "search/batch"), self.step as u64),
        );
        let archs = self.arch_samples_at(self.step)?;
        let lg = waic_loss_and_grad(&self.model, &self.dist, &batch, &archs).map_err(|e| match e {
            Error::Data(msg) => Error::Divergence(format!(
                "step {}: {msg}; keeping the last good state",
                self.step
            )),
            Error::Numeric { layer, what } => Error::Divergence(format!(
                "step {}: non-finite {what} in layer {layer}; keeping the last good state",
                self.step
            )),
            other => other,
        })?;
        if !lg.loss.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite loss at step {}; keeping the last good state",
                self.step
            )));
        }
        let n_theta = self.model.num_params();
        let mut grad = lg.theta;
        grad.extend_from_slice(&lg.phi);
        let grad_norm = clip_global_norm(&mut grad, self.config.grad_clip);

        let mut params = self.model.params();
        params.extend_from_slice(self.dist.logits());
        let backup = self.adam.clone();
        let lr = self.config.learning_rate;
        let lr_phi = self.config.arch_learning_rate.unwrap_or(lr);
        self.adam.step_split(&mut params, &grad, n_theta, lr, lr_phi);
        if params.iter().any(|p| !p.is_finite()) {
            self.adam = backup;
            return Err(Error::Divergence(format!(
                "parameters became non-finite at step {}; keeping the last good state",
                self.step
            )));
        }
        self.model.set_params(&params[..n_theta])?;
        self.dist.logits_mut().copy_from_slice(&params[n_theta..]);
        let row = TraceRow {
            step: self.step,
            loss: lg.loss,
            tau,
            grad_norm,
        };
        self.trace.push(row);
        self.step += 1;
        Ok(row)
    }

    /// Runs until the configured iteration count.
    pub fn run(&mut self) -> Result<()> {
        while self.step < self.config.iterations {
            self.step()?;
        }
        Ok(())
    }

    pub fn into_outcome(self) -> SearchOutcome {
        SearchOutcome {
            skipped_updates: self.adam.skipped(),
            model: self.model,
            dist: self.dist,
            trace: self.trace,
        }
    }

    /// Writes θ and the optimizer/logit state into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        checkpoint::save(&self.model, &dir.join(THETA_FILE))?;
        let state = SavedState {
            step: self.step,
            rows: self.dist.rows(),
            num_ops: self.dist.num_ops(),
            logits: self.dist.logits().to_vec(),
            adam: self.adam.clone(),
            trace: self.trace.clone(),
        };
        let path = dir.join(STATE_FILE);
        std::fs::write(&path, serde_json::to_vec(&state)?).map_err(|e| Error::io(&path, e))
    }

    /// Continues a run saved by [`save`](Self::save) under the same config and data.
    pub fn resume(config: SearchConfig, data: &Tensor, dir: &Path) -> Result<Self> {
        config.validate()?;
        let model = checkpoint::load(&dir.join(THETA_FILE))?;
        let path = dir.join(STATE_FILE);
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let state: SavedState = serde_json::from_slice(&bytes)?;
        let [_, c, h, w] = data.shape();
        if *model.spec() != config.flow_spec([c, h, w]) {
            return Err(Error::Checkpoint("saved model does not match the search config".into()));
        }
        let tau = anneal_tau(&config.tau, state.step)?;
        let dist = ArchDistribution::from_logits(state.rows, state.num_ops, state.logits, tau)?;
        if state.adam.len() != model.num_params() + dist.logits().len() {
            return Err(Error::Checkpoint("optimizer state does not match the model".into()));
        }
        Ok(Searcher {
            config,
            data: data.clone(),
            model,
            dist,
            adam: state.adam,
            step: state.step,
            trace: state.trace,
        })
    }
}

/// Runs a full search.
pub fn search(data: &Tensor, config: &SearchConfig) -> Result<SearchOutcome> {
    let mut s = Searcher::new(config.clone(), data)?;
    s.run()?;
    Ok(s.into_outcome())
}
