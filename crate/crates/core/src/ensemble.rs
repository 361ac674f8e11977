//! Probability-weighted ensembles of retrained architectures.
//!
//! Members are discrete architectures drawn from the searched distribution,
//! each retrained from scratch and weighted by its normalized probability
//! `w_i = p_φ(α_i) / Σ_j p_φ(α_j)`. Flows have no per-member predictive
//! variance, so the ensemble variance of `log p(x)` is the weighted spread of
//! the member log-likelihoods.

use std::path::{Path, PathBuf};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::flow::{checkpoint, FlowModel, FlowSpec};
use crate::rng::{derive, derive_tagged, rng};
use crate::search::{ArchDistribution, ArchSample};
use crate::tensor::Tensor;
use crate::train::{retrain, RetrainConfig};
use crate::waic::{waic_per_sample, LogLikMatrix, WaicReport};

pub const MANIFEST_FILE: &str = "ensemble.json";

#[derive(Clone, Debug)]
pub struct EnsembleMember {
    pub arch: ArchSample,
    pub model: FlowModel,
    /// `log p_φ(α)`.
    pub log_mass: f64,
    pub weight: f64,
    /// Retraining seed.
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Ensemble {
    members: Vec<EnsembleMember>,
    pub seed: u64,
    /// Identifier of the distribution the members were drawn from.
    pub source: String,
    pub standardizer: Option<Standardizer>,
}

/// `exp(l_i − logsumexp(l))`.
pub fn normalize_log_weights(log_masses: &[f64]) -> Result<Vec<f64>> {
    if log_masses.is_empty() {
        return Err(Error::Parameter("no masses to normalize".into()));
    }
    let max = log_masses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Parameter("masses must include a finite log value".into()));
    }
    let shifted: Vec<f64> = log_masses.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = shifted.iter().sum();
    Ok(shifted.into_iter().map(|s| s / total).collect())
}

impl Ensemble {
    pub fn new(members: Vec<EnsembleMember>, seed: u64, source: impl Into<String>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Parameter("an ensemble needs at least one member".into()))?;
        let shape = first.model.spec().input_shape;
        if members.iter().any(|m| m.model.spec().input_shape != shape) {
            return Err(Error::Shape("ensemble members disagree on the input shape".into()));
        }
        let sum: f64 = members.iter().map(|m| m.weight).sum();
        if members.iter().any(|m| !(m.weight >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Parameter(format!("member weights must sum to 1 (got {sum})")));
        }
        Ok(Ensemble {
            members,
            seed,
            source: source.into(),
            standardizer: None,
        })
    }

    /// Members with weights recomputed from their log masses.
    pub fn from_log_masses(mut members: Vec<EnsembleMember>, seed: u64, source: impl Into<String>) -> Result<Self> {
        let masses: Vec<f64> = members.iter().map(|m| m.log_mass).collect();
        for (m, w) in members.iter_mut().zip(normalize_log_weights(&masses)?) {
            m.weight = w;
        }
        Self::new(members, seed, source)
    }

    pub fn members(&self) -> &[EnsembleMember] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.weight).collect()
    }

    /// Member log-likelihoods of `x` as a weighted matrix, one column per member.
    pub fn log_lik_matrix(&self, x: &Tensor) -> Result<LogLikMatrix> {
        let columns = self
            .members
            .par_iter()
            .map(|m| m.model.log_prob(x, &m.arch))
            .collect::<Result<Vec<_>>>()?;
        LogLikMatrix::from_columns(&columns)?.with_weights(self.weights())
    }

    pub fn waic(&self, x: &Tensor) -> Result<WaicReport> {
        Ok(waic_per_sample(&self.log_lik_matrix(x)?))
    }

    /// `Σ_i w_i log p(x | α_i)` per sample.
    pub fn mean_loglik(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.waic(x)?.mean)
    }

    /// Weighted variance of the member log-likelihoods per sample.
    pub fn var_loglik(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.waic(x)?.variance)
    }

    /// Draws `count` samples at latent temperature `temperature`. With
    /// `member = None` each draw picks a member by weight.
    pub fn generate(&self, count: usize, temperature: f64, seed: u64, member: Option<usize>) -> Result<Tensor> {
        if !(temperature >= 0.0 && temperature.is_finite()) {
            return Err(Error::Parameter(format!("temperature must be nonnegative, got {temperature}")));
        }
        if let Some(i) = member {
            if i >= self.len() {
                return Err(Error::Parameter(format!("member {i} out of range")));
            }
        }
        let [c, h, w] = self.members[0].model.spec().input_shape;
        let mut pick = rng(derive_tagged(seed, "generate/member"));
        let mut latent_rng = rng(derive_tagged(seed, "generate/latent"));
        let weights = self.weights();
        let mut out = Vec::with_capacity(count * c * h * w);
        for _ in 0..count {
            let i = member.unwrap_or_else(|| {
                let u: f64 = pick.random();
                let mut acc = 0.0;
                weights
                    .iter()
                    .position(|w| {
                        acc += w;
                        u < acc
                    })
                    .unwrap_or(weights.len() - 1)
            });
            let m = &self.members[i];
            let z = m.model.sample_latents(1, temperature, &mut latent_rng);
            let x = m.model.inverse(&z, &m.arch)?;
            if !x.all_finite() {
                return Err(Error::Numeric {
                    layer: 0,
                    what: format!("generated sample from member {i} is not finite"),
                });
            }
            out.extend_from_slice(x.data());
        }
        Tensor::from_vec([count, c, h, w], out)
    }
}

/// Draws `m` architectures from `dist` and retrains each independently.
pub fn build_ensemble(
    dist: &ArchDistribution,
    spec: &FlowSpec,
    data: &Tensor,
    config: &RetrainConfig,
    m: usize,
    seed: u64,
    warm_start: Option<&FlowModel>,
) -> Result<Ensemble> {
    if m == 0 {
        return Err(Error::Parameter("ensemble size must be at least 1".into()));
    }
    let arch_root = derive_tagged(seed, "ensemble/arch");
    let train_root = derive_tagged(seed, "ensemble/retrain");
    let archs: Vec<ArchSample> = (0..m).map(|i| dist.sample_discrete(derive(arch_root, i as u64))).collect();
    let results: Vec<Result<EnsembleMember>> = archs
        .into_par_iter()
        .enumerate()
        .map(|(i, arch)| {
            let member_seed = derive(train_root, i as u64);
            let cfg = RetrainConfig {
                seed: member_seed,
                ..config.clone()
            };
            let out = retrain(spec, &arch, data, &cfg, warm_start)?;
            Ok(EnsembleMember {
                log_mass: dist.arch_log_prob(&arch)?,
                arch,
                model: out.model,
                weight: 0.0,
                seed: member_seed,
            })
        })
        .collect();
    let mut members = Vec::with_capacity(m);
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(member) => members.push(member),
            Err(e) => {
                return Err(Error::Divergence(format!(
                    "retraining member {i} of {m} failed ({} earlier members finished): {e}",
                    members.len()
                )))
            }
        }
    }
    Ensemble::from_log_masses(members, seed, "")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberRecord {
    pub checkpoint: PathBuf,
    /// Human-readable op listing.
    pub arch: String,
    pub choices: Vec<usize>,
    pub log_mass: f64,
    pub raw_mass: f64,
    pub weight: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub source: String,
    pub seed: u64,
    pub flow: FlowSpec,
    #[serde(default)]
    pub standardizer: Option<Standardizer>,
    pub members: Vec<MemberRecord>,
}

impl Ensemble {
    /// Writes member checkpoints and the manifest into `dir`.
    pub fn save(&self, dir: &Path) -> Result<EnsembleManifest> {
        let spec = self.members[0].model.spec();
        let mut records = Vec::with_capacity(self.len());
        for (i, m) in self.members.iter().enumerate() {
            let name = PathBuf::from(format!("member_{i}.nads"));
            checkpoint::save(&m.model, &dir.join(&name))?;
            records.push(MemberRecord {
                checkpoint: name,
                arch: m.model.spec().space.export_sample(&m.arch)?,
                choices: m.arch.choices().expect("members are discrete").to_vec(),
                log_mass: m.log_mass,
                raw_mass: m.log_mass.exp(),
                weight: m.weight,
                seed: m.seed,
            });
        }
        let manifest = EnsembleManifest {
            source: self.source.clone(),
            seed: self.seed,
            flow: spec.clone(),
            standardizer: self.standardizer.clone(),
            members: records,
        };
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    /// Loads an ensemble from its manifest; checkpoints resolve next to it.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        if !manifest_path.exists() {
            return Err(Error::MissingArtifact(manifest_path.to_path_buf()));
        }
        let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let manifest: EnsembleManifest = serde_json::from_str(&text)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let mut members = Vec::with_capacity(manifest.members.len());
        for rec in &manifest.members {
            let model = checkpoint::load(&base.join(&rec.checkpoint))?;
            if model.spec() != &manifest.flow {
                return Err(Error::Checkpoint(format!(
                    "{} does not match the manifest's flow spec",
                    rec.checkpoint.display()
                )));
            }
            let arch = ArchSample::discrete(rec.choices.clone(), manifest.flow.space.ops.len())?;
            members.push(EnsembleMember {
                arch,
                model,
                log_mass: rec.log_mass,
                weight: rec.weight,
                seed: rec.seed,
            });
        }
        let mut ens = Ensemble::new(members, manifest.seed, manifest.source)?;
        ens.standardizer = manifest.standardizer;
        Ok(ens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_normalization() {
        let w = normalize_log_weights(&[0.2f64.ln(), 0.2f64.ln(), 0.1f64.ln()]).unwrap();
        for (a, b) in w.iter().zip([0.4, 0.4, 0.2]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(normalize_log_weights(&[-3.0]).unwrap(), vec![1.0]);
        // Tiny masses that underflow linear space still normalize.
        let w = normalize_log_weights(&[-2000.0, -2000.0 + 2f64.ln()]).unwrap();
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!(normalize_log_weights(&[]).is_err());
    }
}
