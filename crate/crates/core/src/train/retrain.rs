//! Maximum-likelihood training of one fixed discrete architecture.

use super::adam::Adam;
use super::config::{RetrainConfig, RetrainInit};
use super::{clip_global_norm, sample_batch};
use crate::error::{Error, Result};
use crate::flow::{FlowModel, FlowSpec};
use crate::rng::{derive, derive_tagged};
use crate::search::ArchSample;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct RetrainOutcome {
    pub model: FlowModel,
    /// Mean negative log-likelihood of each step's batch, before its update.
    pub losses: Vec<f64>,
    pub skipped_updates: u64,
}

/// Starting model for `retrain`, before any update.
pub fn initial_model(
    spec: &FlowSpec,
    arch: &ArchSample,
    data: &Tensor,
    config: &RetrainConfig,
    warm_start: Option<&FlowModel>,
) -> Result<FlowModel> {
    match config.init {
        RetrainInit::Fresh => {
            let mut m = FlowModel::new(spec.clone(), derive_tagged(config.seed, "retrain/model"))?;
            let init = sample_batch(data, config.init_batch, derive_tagged(config.seed, "retrain/init"));
            m.initialize_actnorm(&init, arch)?;
            Ok(m)
        }
        RetrainInit::Identity => FlowModel::identity(spec.clone(), derive_tagged(config.seed, "retrain/model")),
        RetrainInit::WarmStart => {
            let m = warm_start
                .ok_or_else(|| Error::Config("warm-start retraining needs the search parameters".into()))?;
            if m.spec() != spec {
                return Err(Error::Config("warm-start model has a different architecture spec".into()));
            }
            Ok(m.clone())
        }
    }
}

pub fn retrain(
    spec: &FlowSpec,
    arch: &ArchSample,
    data: &Tensor,
    config: &RetrainConfig,
    warm_start: Option<&FlowModel>,
) -> Result<RetrainOutcome> {
    config.validate()?;
    if !arch.is_discrete() {
        return Err(Error::Usage("retraining needs a discrete architecture".into()));
    }
    if data.batch() == 0 {
        return Err(Error::Data("retraining needs a nonempty dataset".into()));
    }
    let mut model = initial_model(spec, arch, data, config, warm_start)?;
    let mut adam = Adam::new(model.num_params(), config.beta1, config.beta2, config.epsilon);
    let batch_root = derive_tagged(config.seed, "retrain/batch");
    let mut losses = Vec::with_capacity(config.iterations);
    for step in 0..config.iterations {
        let batch = sample_batch(data, config.batch_size, derive(batch_root, step as u64));
        let (out, trace) = model.forward_trace(&batch, arch).map_err(|e| match e {
            Error::Numeric { layer, what } => {
                Error::Divergence(format!("non-finite {what} in layer {layer} at retraining step {step}"))
            }
            other => other,
        })?;
        let ll = FlowModel::log_prob_of(&out);
        let n = ll.len() as f64;
        let loss = -ll.iter().sum::<f64>() / n;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("non-finite retraining loss at step {step}")));
        }
        let upstream = vec![-1.0 / n; ll.len()];
        let mut grad = model.backward(&trace, &upstream)?.params;
        clip_global_norm(&mut grad, config.grad_clip);
        let mut params = model.params();
        adam.step(&mut params, &grad, config.learning_rate);
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence(format!("parameters became non-finite at step {step}")));
        }
        model.set_params(&params)?;
        losses.push(loss);
    }
    Ok(RetrainOutcome {
        model,
        losses,
        skipped_updates: adam.skipped(),
    })
}
