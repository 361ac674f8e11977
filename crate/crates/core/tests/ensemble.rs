mod common;

use std::f64::consts::PI;

use common::*;
use nads::ensemble::*;
use nads::flow::FlowModel;
use nads::search::{ArchDistribution, SearchSpace};
use nads::train::{RetrainConfig, SearchConfig};
use nads::waic::waic_per_sample;
use nads::Tensor;
use proptest::prelude::*;

/// Scalar identity flow whose density at x is N(a·x + b; 0, 1)·a.
fn scalar_member(scale: f64, bias: f64, log_mass: f64) -> EnsembleMember {
    let s = spec([1, 1, 1], 1, 1, SearchSpace::default());
    let mut model = FlowModel::identity(s, 0).unwrap();
    model.steps_mut()[0].actnorm.set(&[scale], &[bias]).unwrap();
    EnsembleMember {
        arch: random_discrete(model.spec().arch_rows(), 9, 0),
        model,
        log_mass,
        weight: 0.0,
        seed: 0,
    }
}

fn unit_normal_ll(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * PI).ln()
}

#[test]
fn weights_follow_normalized_masses() {
    let e = Ensemble::from_log_masses(
        vec![
            scalar_member(1.0, 0.0, 0.2f64.ln()),
            scalar_member(1.0, 0.1, 0.2f64.ln()),
            scalar_member(1.0, 0.2, 0.1f64.ln()),
        ],
        0,
        "t",
    )
    .unwrap();
    for (w, e) in e.weights().iter().zip([0.4, 0.4, 0.2]) {
        assert!((w - e).abs() < 1e-15);
    }
    let one = Ensemble::from_log_masses(vec![scalar_member(1.0, 0.0, -17.0)], 0, "t").unwrap();
    assert_eq!(one.weights(), vec![1.0]);
    assert!(Ensemble::new(vec![scalar_member(1.0, 0.0, 0.0)], 0, "t").is_err());
    assert!(Ensemble::new(vec![], 0, "t").is_err());
}

#[test]
fn two_member_moments() {
    // At x = 0 the members give ll = log N(0) ± 1.
    let x = Tensor::from_vec([1, 1, 1, 1], vec![0.0]).unwrap();
    let e = Ensemble::from_log_masses(
        vec![scalar_member(1f64.exp(), 0.0, 0.0), scalar_member((-1f64).exp(), 0.0, 0.0)],
        0,
        "t",
    )
    .unwrap();
    let base = unit_normal_ll(0.0);
    let r = e.waic(&x).unwrap();
    assert!((r.mean[0] - base).abs() < 1e-12);
    assert!((r.variance[0] - 1.0).abs() < 1e-12);
    assert!((r.score[0] - (base - 1.0)).abs() < 1e-12);
}

#[test]
fn ensemble_scores_agree_with_the_matrix_path() {
    let x = normal_tensor([40, 1, 1, 1], 3);
    let e = Ensemble::from_log_masses(
        vec![
            scalar_member(0.8, 0.3, -1.0),
            scalar_member(1.3, -0.2, -0.5),
            scalar_member(2.0, 0.0, -2.5),
        ],
        0,
        "t",
    )
    .unwrap();
    let direct = e.waic(&x).unwrap();
    let via_matrix = waic_per_sample(&e.log_lik_matrix(&x).unwrap());
    assert_eq!(direct, via_matrix);
    assert_eq!(e.mean_loglik(&x).unwrap(), direct.mean);
    assert_eq!(e.var_loglik(&x).unwrap(), direct.variance);

    // Brute force from per-member densities.
    let w = e.weights();
    let members = [(0.8, 0.3), (1.3, -0.2), (2.0, 0.0)];
    for (i, &v) in x.data().iter().enumerate() {
        let ll: Vec<f64> = members.iter().map(|&(a, b)| unit_normal_ll(a * v + b) + f64::ln(a)).collect();
        let mean: f64 = ll.iter().zip(&w).map(|(l, w)| l * w).sum();
        let var: f64 = ll.iter().zip(&w).map(|(l, w)| w * (l - mean).powi(2)).sum();
        assert!((direct.mean[i] - mean).abs() < 1e-12);
        assert!((direct.variance[i] - var).abs() < 1e-12);
        assert!(direct.score[i] <= direct.mean[i]);
    }
}

#[test]
fn identical_members_reduce_to_the_single_model() {
    let x = normal_tensor([25, 1, 1, 1], 4);
    let single = scalar_member(1.7, 0.4, 0.0);
    let expect = single.model.log_prob(&x, &single.arch).unwrap();
    let e = Ensemble::from_log_masses(vec![single.clone(), single.clone(), single], 0, "t").unwrap();
    let r = e.waic(&x).unwrap();
    for (i, want) in expect.iter().enumerate() {
        assert!((r.mean[i] - want).abs() < 1e-12);
        assert!(r.variance[i].abs() < 1e-20);
        assert!((r.score[i] - want).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn rescaling_masses_leaves_weights_unchanged(
        masses in prop::collection::vec(-30.0f64..5.0, 1..8),
        shift in -500.0f64..500.0,
    ) {
        let a = normalize_log_weights(&masses).unwrap();
        let shifted: Vec<f64> = masses.iter().map(|m| m + shift).collect();
        let b = normalize_log_weights(&shifted).unwrap();
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}

fn tiny_setup() -> (nads::flow::FlowSpec, Tensor, RetrainConfig) {
    let x = l_mixture(300, 2);
    let s = SearchConfig::toy().flow_spec([1, 1, 2]);
    let cfg = RetrainConfig {
        iterations: 5,
        ..RetrainConfig::toy()
    };
    (s, x, cfg)
}

#[test]
fn degenerate_distribution_gives_equal_weights() {
    let (s, x, cfg) = tiny_setup();
    let rows = s.arch_rows();
    let probs: Vec<f64> = (0..rows).flat_map(|_| [0.0, 1.0]).collect();
    let dist = ArchDistribution::from_probs(rows, 2, &probs, 1.0).unwrap();
    let e = build_ensemble(&dist, &s, &x, &cfg, 4, 9, None).unwrap();
    assert_eq!(e.len(), 4);
    for m in e.members() {
        assert_eq!(m.arch.choices().unwrap(), vec![1; rows].as_slice());
        assert!((m.weight - 0.25).abs() < 1e-15);
    }
    // Each member is retrained with its own seed.
    assert_ne!(e.members()[0].model.params(), e.members()[1].model.params());
    assert!(build_ensemble(&dist, &s, &x, &cfg, 0, 9, None).is_err());
}

#[test]
fn building_is_deterministic() {
    let (s, x, cfg) = tiny_setup();
    let dist = ArchDistribution::uniform(s.arch_rows(), 2, 1.0).unwrap();
    let a = build_ensemble(&dist, &s, &x, &cfg, 3, 5, None).unwrap();
    let b = build_ensemble(&dist, &s, &x, &cfg, 3, 5, None).unwrap();
    for (p, q) in a.members().iter().zip(b.members()) {
        assert_eq!(p.arch, q.arch);
        assert_eq!(p.model.params(), q.model.params());
        assert_eq!(p.weight, q.weight);
    }
}

#[test]
fn save_and_load_round_trip() {
    let (s, x, cfg) = tiny_setup();
    let dist = ArchDistribution::uniform(s.arch_rows(), 2, 1.0).unwrap();
    let e = build_ensemble(&dist, &s, &x, &cfg, 3, 1, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = e.save(dir.path()).unwrap();
    assert_eq!(manifest.members.len(), 3);
    let back = Ensemble::load(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(back.weights(), e.weights());
    assert_eq!(back.waic(&x).unwrap(), e.waic(&x).unwrap());

    std::fs::remove_file(dir.path().join("member_1.nads")).unwrap();
    assert!(matches!(
        Ensemble::load(&dir.path().join(MANIFEST_FILE)),
        Err(nads::Error::MissingArtifact(_))
    ));
    assert!(matches!(
        Ensemble::load(&dir.path().join("absent.json")),
        Err(nads::Error::MissingArtifact(_))
    ));
}

#[test]
fn generation() {
    let (s, x, cfg) = tiny_setup();
    let dist = ArchDistribution::uniform(s.arch_rows(), 2, 1.0).unwrap();
    let e = build_ensemble(&dist, &s, &x, &cfg, 2, 3, None).unwrap();
    let g = e.generate(7, 0.8, 11, None).unwrap();
    assert_eq!(g.shape(), [7, 1, 1, 2]);
    assert!(g.all_finite());
    assert_eq!(g, e.generate(7, 0.8, 11, None).unwrap());
    assert_ne!(g, e.generate(7, 0.8, 12, None).unwrap());

    // Zero temperature maps the latent origin through each member.
    let cold = e.generate(3, 0.0, 1, Some(1)).unwrap();
    assert_eq!(cold, e.generate(3, 0.0, 99, Some(1)).unwrap());
    assert!(cold.data().chunks(2).all(|p| p == &cold.data()[..2]));
    assert!(e.generate(1, -1.0, 0, None).is_err());
    assert!(e.generate(1, 1.0, 0, Some(2)).is_err());
}
