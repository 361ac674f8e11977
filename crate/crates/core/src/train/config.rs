//! Search and retraining configuration with named profiles.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schedule::TauSchedule;
use crate::error::{Error, Result};
use crate::flow::FlowSpec;
use crate::search::{CellTopology, LogitTying, OpKind, SearchSpace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub learning_rate: f64,
    /// Separate rate for the architecture logits; `None` shares `learning_rate`.
    pub arch_learning_rate: Option<f64>,
    pub batch_size: usize,
    pub iterations: usize,
    /// Relaxed architecture samples per step.
    pub arch_samples: usize,
    pub tau: TauSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip over θ and φ together.
    pub grad_clip: f64,
    pub seed: u64,
    pub blocks: usize,
    pub flows_per_block: usize,
    pub space: SearchSpace,
    /// Samples used for data-dependent actnorm initialization.
    pub init_batch: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            learning_rate: 1e-5,
            arch_learning_rate: None,
            batch_size: 4,
            iterations: 2000,
            arch_samples: 4,
            tau: TauSchedule::default(),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grad_clip: 50.0,
            seed: 0,
            blocks: 2,
            flows_per_block: 4,
            space: SearchSpace::default(),
            init_batch: 256,
        }
    }
}

/// Candidate ops of the two-op toy space; the second is the useful one.
pub const TOY_OPS: [OpKind; 2] = [OpKind::Zero, OpKind::Identity];

fn toy_space() -> SearchSpace {
    SearchSpace {
        topology: CellTopology::chain(3).expect("valid chain"),
        ops: TOY_OPS.to_vec(),
        tying: LogitTying::PerStep,
    }
}

impl SearchConfig {
    /// Large-scale settings: 4 blocks of 32 steps for 10000 iterations.
    pub fn paper() -> Self {
        SearchConfig {
            iterations: 10_000,
            blocks: 4,
            flows_per_block: 32,
            ..Self::default()
        }
    }

    /// 2-D data with the two-op chain space.
    pub fn toy() -> Self {
        SearchConfig {
            learning_rate: 5e-3,
            arch_learning_rate: Some(2e-2),
            batch_size: 64,
            iterations: 2000,
            blocks: 1,
            flows_per_block: 2,
            space: toy_space(),
            ..Self::default()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::default()),
            "paper" => Ok(Self::paper()),
            "toy" => Ok(Self::toy()),
            other => Err(Error::Config(format!("unknown profile {other:?} (desk, paper, toy)"))),
        }
    }

    pub fn flow_spec(&self, input_shape: [usize; 3]) -> FlowSpec {
        FlowSpec {
            input_shape,
            blocks: self.blocks,
            flows_per_block: self.flows_per_block,
            space: self.space.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("learning_rate", self.learning_rate)?;
        if let Some(lr) = self.arch_learning_rate {
            positive("arch_learning_rate", lr)?;
        }
        positive("epsilon", self.epsilon)?;
        positive("grad_clip", self.grad_clip)?;
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("arch_samples", self.arch_samples),
            ("blocks", self.blocks),
            ("flows_per_block", self.flows_per_block),
            ("init_batch", self.init_batch),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        self.tau.validate()?;
        self.space.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

/// How a retrained model's parameters start.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrainInit {
    /// Random parameters and data-dependent actnorm.
    #[default]
    Fresh,
    /// Every layer starts as the identity map.
    Identity,
    /// Starts from the shared search parameters.
    WarmStart,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub ensemble_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub init: RetrainInit,
    pub init_batch: usize,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        RetrainConfig {
            iterations: 2000,
            learning_rate: 1e-5,
            batch_size: 4,
            ensemble_size: 5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grad_clip: 50.0,
            seed: 0,
            init: RetrainInit::Fresh,
            init_batch: 256,
        }
    }
}

impl RetrainConfig {
    pub fn paper() -> Self {
        RetrainConfig {
            iterations: 150_000,
            ..Self::default()
        }
    }

    pub fn toy() -> Self {
        RetrainConfig {
            iterations: 1500,
            learning_rate: 5e-3,
            batch_size: 128,
            ensemble_size: 3,
            ..Self::default()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::default()),
            "paper" => Ok(Self::paper()),
            "toy" => Ok(Self::toy()),
            other => Err(Error::Config(format!("unknown profile {other:?} (desk, paper, toy)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.grad_clip > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::Config("grad_clip and epsilon must be positive".into()));
        }
        if self.batch_size == 0 || self.ensemble_size == 0 || self.init_batch == 0 {
            return Err(Error::Config("batch_size, ensemble_size and init_batch must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// A config file: optional profile name, then field overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub profile: Option<String>,
    #[serde(default)]
    pub search: Option<serde_json::Value>,
    #[serde(default)]
    pub retrain: Option<serde_json::Value>,
}

fn merge(base: &mut serde_json::Value, over: &serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    // Tagged enums are replaced whole so stale fields cannot leak.
                    Some(slot) if slot.is_object() && !v.get("kind").is_some() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Config(format!("config file {} not found", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn resolve(&self, default_profile: &str) -> Result<(SearchConfig, RetrainConfig)> {
        let profile = self.profile.as_deref().unwrap_or(default_profile);
        let mut search = serde_json::to_value(SearchConfig::profile(profile)?)?;
        let mut retrain = serde_json::to_value(RetrainConfig::profile(profile)?)?;
        if let Some(s) = &self.search {
            merge(&mut search, s);
        }
        if let Some(r) = &self.retrain {
            merge(&mut retrain, r);
        }
        let search: SearchConfig =
            serde_json::from_value(search).map_err(|e| Error::Config(format!("search config: {e}")))?;
        let retrain: RetrainConfig =
            serde_json::from_value(retrain).map_err(|e| Error::Config(format!("retrain config: {e}")))?;
        search.validate()?;
        retrain.validate()?;
        Ok((search, retrain))
    }
}
