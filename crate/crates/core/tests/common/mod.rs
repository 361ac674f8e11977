#![allow(dead_code)]

use nads::flow::{FlowModel, FlowSpec};
use nads::rng::rng;
use nads::search::{ArchSample, CellTopology, LogitTying, OpKind, SearchSpace};
use nads::Tensor;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn normal_tensor(shape: [usize; 4], seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.sample::<f64, _>(StandardNormal))
}

pub fn spec(shape: [usize; 3], blocks: usize, k: usize, space: SearchSpace) -> FlowSpec {
    FlowSpec {
        input_shape: shape,
        blocks,
        flows_per_block: k,
        space,
    }
}

pub fn space(nodes: usize, ops: &[OpKind]) -> SearchSpace {
    SearchSpace {
        topology: CellTopology::dense(nodes).unwrap(),
        ops: ops.to_vec(),
        tying: LogitTying::PerStep,
    }
}

pub fn random_discrete(rows: usize, k: usize, seed: u64) -> ArchSample {
    let mut r = rng(seed);
    ArchSample::discrete((0..rows).map(|_| r.random_range(0..k)).collect(), k).unwrap()
}

pub fn random_relaxed(rows: usize, k: usize, seed: u64) -> ArchSample {
    let mut r = rng(seed);
    let mut w = Vec::with_capacity(rows * k);
    for _ in 0..rows {
        let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        w.extend(raw.iter().map(|v| v / total));
    }
    ArchSample::relaxed_from_weights(rows, k, w).unwrap()
}

/// Initialized model whose parameters are pushed away from the
/// near-identity initialization by `jitter` standard deviations.
pub fn random_model(spec: FlowSpec, arch: &ArchSample, seed: u64, jitter: f64) -> FlowModel {
    let [c, h, w] = spec.input_shape;
    let mut m = FlowModel::new(spec, seed).unwrap();
    m.initialize_actnorm(&normal_tensor([8, c, h, w], seed ^ 0x5eed), arch)
        .unwrap();
    let mut r = rng(seed.wrapping_add(1));
    let p: Vec<f64> = m
        .params()
        .iter()
        .map(|v| v + jitter * r.sample::<f64, _>(StandardNormal))
        .collect();
    m.set_params(&p).unwrap();
    m
}

/// Central-difference Jacobian of `f` at `x`; row `i` holds ∂f_i/∂x.
pub fn jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> DMatrix<f64> {
    let n = x.len();
    let m = f(x).len();
    let mut j = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    for k in 0..n {
        xp[k] = x[k] + h;
        let up = f(&xp);
        xp[k] = x[k] - h;
        let down = f(&xp);
        xp[k] = x[k];
        for i in 0..m {
            j[(i, k)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    j
}

pub fn log_abs_det(j: DMatrix<f64>) -> f64 {
    j.lu().determinant().abs().ln()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Three-component L-shaped mixture, standardized. Its conditional structure
/// rewards a coupling that actually looks at the conditioning half.
pub fn l_mixture(count: usize, seed: u64) -> Tensor {
    use nads::data::{make_synthetic, Family, Standardizer, SyntheticSpec};
    let d = make_synthetic(&SyntheticSpec {
        family: Family::GaussianMixture {
            means: vec![[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]],
            std: 0.3,
        },
        count,
        seed,
    })
    .unwrap();
    Standardizer::fit(d.tensor()).unwrap().apply(d.tensor()).unwrap()
}

pub fn nads_command(seed: Option<u64>) -> std::process::Command {
    let mut c = std::process::Command::new(env!("CARGO_BIN_EXE_nads"));
    c.env_remove("NADS_SEED");
    if let Some(s) = seed {
        c.env("NADS_SEED", s.to_string());
    }
    c
}

/// Runs the binary; returns (exit code, stderr).
pub fn nads(seed: Option<u64>, args: &[&str]) -> (i32, String) {
    let out = nads_command(seed).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

pub fn nads_ok(seed: Option<u64>, args: &[&str]) {
    let (code, err) = nads(seed, args);
    assert_eq!(code, 0, "nads {args:?} failed: {err}");
}

pub struct PipelineSize {
    pub train: usize,
    pub ood: usize,
    pub iterations: usize,
    pub members: usize,
}

/// synth → search → ensemble → score (in and out) → eval, all under `dir`.
/// Returns the eval output directory.
pub fn toy_pipeline(dir: &std::path::Path, seed: u64, size: &PipelineSize) -> std::path::PathBuf {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let s = Some(seed);
    nads_ok(s, &["synth", "--family", "two_moons", "--count", &size.train.to_string(), "--out", &p("train.csv")]);
    nads_ok(s, &["synth", "--family", "two_moons", "--count", &size.ood.to_string(), "--out", &p("test.csv")]);
    nads_ok(
        s,
        &["synth", "--family", "shifted_gaussian", "--count", &size.ood.to_string(), "--shift", "4,4", "--std", "1", "--out", &p("ood.csv")],
    );
    std::fs::write(
        dir.join("data.json"),
        r#"{"train":"train.csv","test":"test.csv","ood":"ood.csv","standardize":true}"#,
    )
    .unwrap();
    let iters = size.iterations.to_string();
    let members = size.members.to_string();
    nads_ok(s, &["search", "--profile", "toy", "--data", &p("data.json"), "--out", &p("search"), "--iterations", &iters]);
    nads_ok(
        s,
        &["ensemble", "--profile", "toy", "--search", &p("search"), "--data", &p("data.json"), "--out", &p("ensemble"), "--members", &members],
    );
    nads_ok(s, &["score", "--ensemble", &p("ensemble"), "--data", &p("test.csv"), "--out", &p("in.csv")]);
    nads_ok(s, &["score", "--ensemble", &p("ensemble"), "--data", &p("ood.csv"), "--out", &p("out.csv")]);
    nads_ok(s, &["eval", "--in-report", &p("in.csv"), "--out-report", &p("out.csv"), "--out", &p("eval")]);
    dir.join("eval")
}

pub fn read_metrics(eval_dir: &std::path::Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(eval_dir.join("report.json")).unwrap()).unwrap()
}
