//! Command-line pipeline: synth → search → ensemble → score → eval, plus
//! generate. Every command validates its inputs before it creates or
//! touches the output location, and writes one run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, DataManifest, Dataset, Domain, Family, Split, Standardizer, SyntheticSpec};
use crate::ensemble::{build_ensemble, Ensemble, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::flow::checkpoint;
use crate::ood::{evaluate, ScoredSets, DEFAULT_BINS};
use crate::rng::derive_tagged;
use crate::search::{ArchDistribution, OpKind};
use crate::tensor::Tensor;
use crate::train::{write_trace_csv, ConfigFile, RetrainConfig, RetrainInit, SearchConfig, Searcher, TauSchedule};
use crate::waic::WaicReport;

pub const PHI_FILE: &str = "phi.json";
pub const STANDARDIZER_FILE: &str = "standardizer.json";
pub const RUN_MANIFEST: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(name = "nads", version, about = "Architecture distribution search over normalizing flows")]
pub struct Cli {
    /// Root seed for every random stream.
    #[arg(long, env = "NADS_SEED", global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic 2-D point cloud as CSV.
    Synth(SynthArgs),
    /// Search an architecture distribution.
    Search(SearchArgs),
    /// Sample and retrain an ensemble from a search result.
    Ensemble(EnsembleArgs),
    /// Per-sample WAIC of a dataset under an ensemble.
    Score(ScoreArgs),
    /// Detection metrics from in- and out-of-distribution WAIC reports.
    Eval(EvalArgs),
    /// Draw samples from ensemble members.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum FamilyArg {
    TwoMoons,
    Rings,
    GaussianMixture,
    ShiftedGaussian,
}

#[derive(Args, Debug, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub family: FamilyArg,
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Mean of the shifted Gaussian, `x,y`.
    #[arg(long, default_value = "4,4", value_delimiter = ',')]
    pub shift: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub std: f64,
}

#[derive(Args, Debug, Serialize)]
pub struct SearchArgs {
    /// JSON config: optional `profile`, then `search` / `retrain` overrides.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Data manifest JSON.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// desk, paper or toy; applies when the config names none.
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub arch_learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub arch_samples: Option<usize>,
    /// Constant Gumbel-Softmax temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub flows_per_block: Option<usize>,
    /// Comma-separated candidate op names.
    #[arg(long, value_delimiter = ',')]
    pub ops: Option<Vec<String>>,
    /// Continue from the state already in `--out`.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct EnsembleArgs {
    /// Output directory of `nads search`.
    #[arg(long)]
    pub search: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub profile: Option<String>,
    /// Ensemble size.
    #[arg(long)]
    pub members: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Start retraining from the shared search parameters.
    #[arg(long)]
    pub warm_start: bool,
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct ScoreArgs {
    /// Ensemble manifest, or the directory holding it.
    #[arg(long)]
    pub ensemble: PathBuf,
    /// CSV point cloud or IDX image file.
    #[arg(long)]
    pub data: PathBuf,
    /// Output WAIC CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub in_report: PathBuf,
    #[arg(long)]
    pub out_report: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub ensemble: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value_t = 0.7)]
    pub temperature: f64,
    /// Use one member instead of sampling members by weight.
    #[arg(long)]
    pub member: Option<usize>,
    /// `.csv` for 2-D data, anything else writes IDX.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub dry_run: bool,
}

/// Record of one invocation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub output: PathBuf,
    /// File name → SHA-256 hex digest.
    pub artifacts: BTreeMap<String, String>,
    /// Phase → milliseconds.
    pub timings_ms: BTreeMap<String, u128>,
    pub dry_run: bool,
}

impl RunManifest {
    fn new(command: &str, config: serde_json::Value, output: &Path, dry_run: bool) -> Self {
        RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            output: output.to_path_buf(),
            artifacts: BTreeMap::new(),
            timings_ms: BTreeMap::new(),
            dry_run,
        }
    }

    fn hash(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_name()
            .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        self.artifacts.insert(name, hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    fn time(&mut self, phase: &str, start: Instant) {
        self.timings_ms.insert(phase.into(), start.elapsed().as_millis());
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Architecture logits on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiFile {
    pub ops: Vec<OpKind>,
    pub rows: usize,
    pub tau: f64,
    pub logits: Vec<f64>,
}

impl PhiFile {
    pub fn from_dist(dist: &ArchDistribution, ops: &[OpKind]) -> Self {
        PhiFile {
            ops: ops.to_vec(),
            rows: dist.rows(),
            tau: dist.tau(),
            logits: dist.logits().to_vec(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn dist(&self) -> Result<ArchDistribution> {
        ArchDistribution::from_logits(self.rows, self.ops.len(), self.logits.clone(), self.tau)
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Manifest path for commands whose output is a single file.
fn sidecar(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.{RUN_MANIFEST}"))
}

fn parent_dir(out: &Path) -> &Path {
    out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

fn load_config(path: Option<&Path>, profile: Option<&str>) -> Result<(SearchConfig, RetrainConfig)> {
    let file = match path {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    file.resolve(profile.unwrap_or("desk"))
}

/// Training split of a data manifest plus the standardizer fitted on it.
fn load_training_data(manifest: &Path, seed: u64) -> Result<(Dataset, Option<Standardizer>)> {
    let (m, base) = DataManifest::load(manifest)?;
    let path = DataManifest::resolve(&base, &m.train);
    let train = data::load_any(&path, derive_tagged(seed, "data/train"))?;
    if !m.standardize {
        return Ok((train, None));
    }
    let s = Standardizer::fit(train.tensor())?;
    let t = s.apply(train.tensor())?;
    Ok((Dataset::new(train.name.clone(), Split::Train, Domain::Continuous, t)?, Some(s)))
}

fn apply_standardizer(s: Option<&Standardizer>, t: Tensor) -> Result<Tensor> {
    match s {
        Some(s) => s.apply(&t),
        None => Ok(t),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        // Fails only if a pool already exists, e.g. when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(a, cli.seed.unwrap_or(0)),
        Command::Search(a) => cmd_search(a, cli.seed),
        Command::Ensemble(a) => cmd_ensemble(a, cli.seed),
        Command::Score(a) => cmd_score(a, cli.seed.unwrap_or(0)),
        Command::Eval(a) => cmd_eval(a),
        Command::Generate(a) => cmd_generate(a, cli.seed.unwrap_or(0)),
    }
}

fn cmd_synth(a: SynthArgs, root: u64) -> Result<()> {
    let family = match a.family {
        FamilyArg::TwoMoons => Family::TwoMoons {
            radius: a.radius,
            noise: a.noise,
        },
        FamilyArg::Rings => Family::Rings {
            radii: vec![a.radius, 2.0 * a.radius],
            noise: a.noise,
        },
        FamilyArg::GaussianMixture => Family::GaussianMixture {
            means: vec![[-a.radius, 0.0], [a.radius, 0.0]],
            std: a.std,
        },
        FamilyArg::ShiftedGaussian => {
            let [x, y] = a.shift[..] else {
                return Err(Error::Config("--shift takes two values, x,y".into()));
            };
            Family::ShiftedGaussian { shift: [x, y], std: a.std }
        }
    };
    let tag = a.out.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    let spec = SyntheticSpec {
        family,
        count: a.count,
        seed: derive_tagged(root, &format!("synth/{tag}")),
    };
    let d = data::make_synthetic(&spec)?;
    create_dir(parent_dir(&a.out))?;
    data::write_points_csv(d.tensor(), &a.out)?;
    let mut manifest = RunManifest::new("synth", serde_json::to_value(&spec)?, &a.out, false);
    manifest.seeds.insert("root".into(), root);
    manifest.seeds.insert("synth".into(), spec.seed);
    manifest.hash(&a.out)?;
    manifest.write(&sidecar(&a.out))
}

fn cmd_search(a: SearchArgs, root: Option<u64>) -> Result<()> {
    let start = Instant::now();
    let (mut cfg, _) = load_config(a.config.as_deref(), a.profile.as_deref())?;
    if let Some(v) = a.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.arch_learning_rate {
        cfg.arch_learning_rate = Some(v);
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.arch_samples {
        cfg.arch_samples = v;
    }
    if let Some(v) = a.tau {
        cfg.tau = TauSchedule::Constant { tau: v };
    }
    if let Some(v) = a.blocks {
        cfg.blocks = v;
    }
    if let Some(v) = a.flows_per_block {
        cfg.flows_per_block = v;
    }
    if let Some(names) = &a.ops {
        cfg.space.ops = names
            .iter()
            .map(|n| OpKind::from_name(n.trim()).ok_or_else(|| Error::Config(format!("unknown op {n:?}"))))
            .collect::<Result<_>>()?;
    }
    let data_seed = root.unwrap_or(cfg.seed);
    if let Some(r) = root {
        cfg.seed = derive_tagged(r, "search");
    }
    cfg.validate()?;
    let (train, standardizer) = load_training_data(&a.data, data_seed)?;
    cfg.flow_spec(train.sample_shape()).layout().map_err(|e| Error::Config(e.to_string()))?;

    let mut manifest = RunManifest::new("search", serde_json::to_value(&cfg)?, &a.out, a.dry_run);
    manifest.inputs.push(a.data.clone());
    manifest.inputs.extend(a.config.clone());
    manifest.seeds.insert("root".into(), data_seed);
    manifest.seeds.insert("search".into(), cfg.seed);
    if a.resume && !a.out.join(crate::train::search::STATE_FILE).exists() {
        return Err(Error::MissingArtifact(a.out.join(crate::train::search::STATE_FILE)));
    }
    manifest.time("validate", start);
    create_dir(&a.out)?;
    if a.dry_run {
        return manifest.write(&a.out.join(RUN_MANIFEST));
    }

    let t = Instant::now();
    let mut searcher = if a.resume {
        Searcher::resume(cfg.clone(), train.tensor(), &a.out)?
    } else {
        Searcher::new(cfg.clone(), train.tensor())?
    };
    let result = searcher.run();
    manifest.time("search", t);
    // Whatever happened, persist the last good state.
    searcher.save(&a.out)?;
    let trace_path = a.out.join("trace.csv");
    let f = std::fs::File::create(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
    write_trace_csv(searcher.trace(), f)?;
    let phi_path = a.out.join(PHI_FILE);
    write_json(&phi_path, &PhiFile::from_dist(searcher.dist(), &cfg.space.ops))?;
    let arch_path = a.out.join("architecture.txt");
    let text = cfg.space.export_distribution(searcher.dist())?;
    std::fs::write(&arch_path, text).map_err(|e| Error::io(&arch_path, e))?;
    let mut outputs = vec![phi_path, arch_path, trace_path, a.out.join(crate::train::search::THETA_FILE)];
    if let Some(s) = &standardizer {
        let p = a.out.join(STANDARDIZER_FILE);
        write_json(&p, s)?;
        outputs.push(p);
    }
    for p in &outputs {
        manifest.hash(p)?;
    }
    manifest.time("total", start);
    manifest.write(&a.out.join(RUN_MANIFEST))?;
    result
}

fn cmd_ensemble(a: EnsembleArgs, root: Option<u64>) -> Result<()> {
    let start = Instant::now();
    let (_, mut cfg) = load_config(a.config.as_deref(), a.profile.as_deref())?;
    if let Some(v) = a.members {
        cfg.ensemble_size = v;
    }
    if let Some(v) = a.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if a.warm_start {
        cfg.init = RetrainInit::WarmStart;
    }
    let data_seed = root.unwrap_or(cfg.seed);
    if let Some(r) = root {
        cfg.seed = derive_tagged(r, "ensemble");
    }
    cfg.validate()?;
    let phi_path = a.search.join(PHI_FILE);
    let phi = PhiFile::load(&phi_path)?;
    let dist = phi.dist()?;
    let theta = checkpoint::load(&a.search.join(crate::train::search::THETA_FILE))?;
    let spec = theta.spec().clone();
    if spec.space.ops != phi.ops || spec.arch_rows() != phi.rows {
        return Err(Error::Config("phi.json does not match the searched model".into()));
    }
    let std_path = a.search.join(STANDARDIZER_FILE);
    let standardizer: Option<Standardizer> = if std_path.exists() {
        let text = std::fs::read_to_string(&std_path).map_err(|e| Error::io(&std_path, e))?;
        Some(serde_json::from_str(&text)?)
    } else {
        None
    };
    let (m, base) = DataManifest::load(&a.data)?;
    let raw = data::load_any(&DataManifest::resolve(&base, &m.train), derive_tagged(data_seed, "data/train"))?;
    if raw.sample_shape() != spec.input_shape {
        return Err(Error::Config(format!(
            "training data shape {:?} does not match the searched model {:?}",
            raw.sample_shape(),
            spec.input_shape
        )));
    }
    let train = apply_standardizer(standardizer.as_ref(), raw.into_tensor())?;

    let mut manifest = RunManifest::new("ensemble", serde_json::to_value(&cfg)?, &a.out, a.dry_run);
    manifest.inputs.extend([phi_path.clone(), a.data.clone()]);
    manifest.seeds.insert("root".into(), data_seed);
    manifest.seeds.insert("ensemble".into(), cfg.seed);
    manifest.time("validate", start);
    create_dir(&a.out)?;
    if a.dry_run {
        return manifest.write(&a.out.join(RUN_MANIFEST));
    }
    let t = Instant::now();
    let warm = (cfg.init == RetrainInit::WarmStart).then_some(&theta);
    let mut ens = build_ensemble(&dist, &spec, &train, &cfg, cfg.ensemble_size, cfg.seed, warm)?;
    manifest.time("retrain", t);
    let phi_bytes = std::fs::read(&phi_path).map_err(|e| Error::io(&phi_path, e))?;
    ens.source = format!("phi.json sha256:{}", hex::encode(Sha256::digest(&phi_bytes)));
    ens.standardizer = standardizer;
    let saved = ens.save(&a.out)?;
    for rec in &saved.members {
        manifest.hash(&a.out.join(&rec.checkpoint))?;
    }
    manifest.hash(&a.out.join(MANIFEST_FILE))?;
    manifest.time("total", start);
    manifest.write(&a.out.join(RUN_MANIFEST))
}

fn ensemble_manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

fn cmd_score(a: ScoreArgs, root: u64) -> Result<()> {
    let start = Instant::now();
    let ens = Ensemble::load(&ensemble_manifest_path(&a.ensemble))?;
    let d = data::load_any(&a.data, derive_tagged(root, "data/score"))?;
    let spec = ens.members()[0].model.spec();
    if d.sample_shape() != spec.input_shape {
        return Err(Error::Config(format!(
            "data shape {:?} does not match the ensemble {:?}",
            d.sample_shape(),
            spec.input_shape
        )));
    }
    let x = apply_standardizer(ens.standardizer.as_ref(), d.into_tensor())?;
    let mut manifest = RunManifest::new("score", serde_json::to_value(&a)?, &a.out, a.dry_run);
    manifest.inputs.extend([a.ensemble.clone(), a.data.clone()]);
    manifest.seeds.insert("root".into(), root);
    manifest.time("validate", start);
    create_dir(parent_dir(&a.out))?;
    if a.dry_run {
        return manifest.write(&sidecar(&a.out));
    }
    let report = ens.waic(&x)?;
    let f = std::fs::File::create(&a.out).map_err(|e| Error::io(&a.out, e))?;
    report.write_csv(f)?;
    manifest.hash(&a.out)?;
    manifest.time("total", start);
    manifest.write(&sidecar(&a.out))
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let start = Instant::now();
    let read = |p: &Path| -> Result<WaicReport> {
        WaicReport::read_path(p).map_err(|e| match e {
            Error::MissingArtifact(_) => e,
            other => Error::Config(format!("{}: {other}", p.display())),
        })
    };
    let inr = read(&a.in_report)?;
    let outr = read(&a.out_report)?;
    let sets = ScoredSets::new(inr.score, outr.score).map_err(|e| Error::Config(e.to_string()))?;
    let report = evaluate(&sets, a.bins).map_err(|e| Error::Config(e.to_string()))?;
    let mut manifest = RunManifest::new("eval", serde_json::to_value(&a)?, &a.out, a.dry_run);
    manifest.inputs.extend([a.in_report.clone(), a.out_report.clone()]);
    create_dir(&a.out)?;
    if a.dry_run {
        return manifest.write(&a.out.join(RUN_MANIFEST));
    }
    report.write(&a.out)?;
    for f in ["report.json", "roc.csv", "pr.csv", "hist.csv"] {
        manifest.hash(&a.out.join(f))?;
    }
    manifest.time("total", start);
    manifest.write(&a.out.join(RUN_MANIFEST))
}

fn cmd_generate(a: GenerateArgs, root: u64) -> Result<()> {
    let start = Instant::now();
    let ens = Ensemble::load(&ensemble_manifest_path(&a.ensemble))?;
    if a.count == 0 {
        return Err(Error::Config("--count must be positive".into()));
    }
    let csv_out = a.out.extension().is_some_and(|e| e == "csv");
    let shape = ens.members()[0].model.spec().input_shape;
    if csv_out && shape.iter().product::<usize>() != 2 {
        return Err(Error::Config("CSV output needs 2-D data".into()));
    }
    let seed = derive_tagged(root, "generate");
    let mut manifest = RunManifest::new("generate", serde_json::to_value(&a)?, &a.out, a.dry_run);
    manifest.inputs.push(a.ensemble.clone());
    manifest.seeds.insert("root".into(), root);
    manifest.seeds.insert("generate".into(), seed);
    create_dir(parent_dir(&a.out))?;
    if a.dry_run {
        return manifest.write(&sidecar(&a.out));
    }
    let x = ens.generate(a.count, a.temperature, seed, a.member)?;
    let x = match &ens.standardizer {
        Some(s) => s.invert(&x),
        None => x,
    };
    if csv_out {
        data::write_points_csv(&x, &a.out)?;
    } else {
        // Back to 8-bit intensities.
        let q = x.map(|v| (v * 256.0).floor().clamp(0.0, 255.0));
        let d = Dataset::new("generated", Split::Test, Domain::Discrete, q)?;
        data::write_idx(&d, &a.out)?;
    }
    manifest.hash(&a.out)?;
    manifest.time("total", start);
    manifest.write(&sidecar(&a.out))
}
