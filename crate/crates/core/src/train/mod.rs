//! Optimization: the WAIC architecture search and plain likelihood
//! retraining of sampled architectures.

pub mod adam;
pub mod config;
pub mod retrain;
pub mod schedule;
pub mod search;

pub use adam::Adam;
pub use config::{ConfigFile, RetrainConfig, RetrainInit, SearchConfig, TOY_OPS};
pub use retrain::{initial_model, retrain, RetrainOutcome};
pub use schedule::{anneal_tau, TauSchedule};
pub use search::{search, waic_loss_and_grad, write_trace_csv, LossAndGrad, SearchOutcome, Searcher, TraceRow};

use crate::rng::rng;
use crate::tensor::Tensor;

/// Scales `grad` in place to global norm at most `max_norm`; returns the
/// norm before scaling.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// `size` distinct samples (all of them, in random order, when `size ≥ N`).
pub fn sample_batch(data: &Tensor, size: usize, seed: u64) -> Tensor {
    let n = data.batch();
    let idx = rand::seq::index::sample(&mut rng(seed), n, size.min(n)).into_vec();
    data.gather(&idx)
}
