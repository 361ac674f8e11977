//! Datasets: IDX image files, 2-D point clouds, synthetic densities,
//! dequantization and standardization.

use std::f64::consts::{LN_2, PI};
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_tagged, rng};
use crate::tensor::Tensor;

pub const IDX_UBYTE_1D: u32 = 0x0000_0801;
pub const IDX_UBYTE_3D: u32 = 0x0000_0803;
pub const IDX_UBYTE_4D: u32 = 0x0000_0804;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// Integer intensities in `0..=255`.
    Discrete,
    Continuous,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub split: Split,
    domain: Domain,
    tensor: Tensor,
}

impl Dataset {
    pub fn new(name: impl Into<String>, split: Split, domain: Domain, tensor: Tensor) -> Result<Self> {
        if tensor.batch() == 0 || tensor.sample_len() == 0 {
            return Err(Error::Data("dataset has no samples".into()));
        }
        match domain {
            Domain::Discrete => {
                if let Some(v) = tensor
                    .data()
                    .iter()
                    .find(|v| !(v.fract() == 0.0 && (0.0..=255.0).contains(*v)))
                {
                    return Err(Error::Data(format!("discrete dataset holds non-byte value {v}")));
                }
            }
            Domain::Continuous => {
                if !tensor.all_finite() {
                    return Err(Error::Data("dataset holds non-finite values".into()));
                }
            }
        }
        Ok(Dataset {
            name: name.into(),
            split,
            domain,
            tensor,
        })
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    pub fn len(&self) -> usize {
        self.tensor.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(C, H, W)` of one sample.
    pub fn sample_shape(&self) -> [usize; 3] {
        let [_, c, h, w] = self.tensor.shape();
        [c, h, w]
    }

    pub fn dims(&self) -> usize {
        self.tensor.sample_len()
    }
}

fn be_u32(buf: &[u8], at: usize) -> Result<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Data("truncated IDX header".into()))
}

/// Parses an unsigned-byte IDX image file (3-D `N×H×W` or 4-D `N×C×H×W`).
pub fn parse_idx_images(buf: &[u8], name: &str) -> Result<Dataset> {
    let magic = be_u32(buf, 0)?;
    let shape = match magic {
        IDX_UBYTE_3D => [be_u32(buf, 4)? as usize, 1, be_u32(buf, 8)? as usize, be_u32(buf, 12)? as usize],
        IDX_UBYTE_4D => [
            be_u32(buf, 4)? as usize,
            be_u32(buf, 8)? as usize,
            be_u32(buf, 12)? as usize,
            be_u32(buf, 16)? as usize,
        ],
        IDX_UBYTE_1D => {
            return Err(Error::Data("IDX file holds labels, not images".into()));
        }
        m => return Err(Error::Data(format!("bad IDX magic {m:#010x}"))),
    };
    let header = if magic == IDX_UBYTE_3D { 16 } else { 20 };
    if shape[0] == 0 {
        return Err(Error::Data("IDX file declares zero images".into()));
    }
    let n: usize = shape.iter().product();
    let payload = &buf[header..];
    if payload.len() < n {
        return Err(Error::Data(format!(
            "truncated IDX payload: {} of {n} bytes",
            payload.len()
        )));
    }
    if payload.len() > n {
        return Err(Error::Data("trailing bytes after IDX payload".into()));
    }
    let data = payload.iter().map(|&b| b as f64).collect();
    Dataset::new(name, Split::Train, Domain::Discrete, Tensor::from_vec(shape, data)?)
}

pub fn parse_idx_labels(buf: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(buf, 0)?;
    if magic != IDX_UBYTE_1D {
        return Err(Error::Data(format!("bad IDX label magic {magic:#010x}")));
    }
    let n = be_u32(buf, 4)? as usize;
    let payload = &buf[8..];
    if payload.len() != n {
        return Err(Error::Data(format!("IDX label payload has {} of {n} bytes", payload.len())));
    }
    Ok(payload.to_vec())
}

pub fn load_idx(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path.file_stem().map_or_else(|| "idx".into(), |s| s.to_string_lossy().into_owned());
    parse_idx_images(&buf, &name)
}

/// Serializes a discrete dataset; single-channel data uses the 3-D layout.
pub fn idx_bytes(d: &Dataset) -> Result<Vec<u8>> {
    if d.domain != Domain::Discrete {
        return Err(Error::Usage("only discrete datasets can be written as IDX".into()));
    }
    let [n, c, h, w] = d.tensor.shape();
    let mut out = Vec::with_capacity(20 + d.tensor.len());
    if c == 1 {
        out.extend_from_slice(&IDX_UBYTE_3D.to_be_bytes());
        for v in [n, h, w] {
            out.extend_from_slice(&(v as u32).to_be_bytes());
        }
    } else {
        out.extend_from_slice(&IDX_UBYTE_4D.to_be_bytes());
        for v in [n, c, h, w] {
            out.extend_from_slice(&(v as u32).to_be_bytes());
        }
    }
    out.extend(d.tensor.data().iter().map(|&v| v as u8));
    Ok(out)
}

pub fn write_idx(d: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, idx_bytes(d)?).map_err(|e| Error::io(path, e))
}

/// `x' = (x + u) / 256` with `u ~ U[0, 1)`.
pub fn dequantize(d: &Dataset, seed: u64) -> Result<Dataset> {
    if d.domain != Domain::Discrete {
        return Err(Error::Usage("dataset is already continuous".into()));
    }
    let mut r = rng(seed);
    let mut t = d.tensor.clone();
    t.data_mut().iter_mut().for_each(|x| *x = (*x + r.random::<f64>()) / 256.0);
    Dataset::new(d.name.clone(), d.split, Domain::Continuous, t)
}

/// Bits per dimension of one log-density over `dims` dimensions of data
/// scaled from 256 levels to `[0, 1)`.
pub fn bits_per_dim(log_prob: f64, dims: usize) -> Result<f64> {
    if dims == 0 {
        return Err(Error::Parameter("bits per dim needs at least one dimension".into()));
    }
    Ok(-log_prob / (dims as f64 * LN_2) + 8.0)
}

pub fn mean_bits_per_dim(log_probs: &[f64], dims: usize) -> Result<f64> {
    if log_probs.is_empty() {
        return Err(Error::Data("no log-densities".into()));
    }
    let mean = log_probs.iter().sum::<f64>() / log_probs.len() as f64;
    bits_per_dim(mean, dims)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// Two interleaved half circles of radius `radius`, centered on their
    /// joint centroid, with isotropic Gaussian noise.
    TwoMoons { radius: f64, noise: f64 },
    /// Concentric circles picked uniformly.
    Rings { radii: Vec<f64>, noise: f64 },
    /// Equal-weight isotropic components.
    GaussianMixture { means: Vec<[f64; 2]>, std: f64 },
    ShiftedGaussian { shift: [f64; 2], std: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(flatten)]
    pub family: Family,
    pub count: usize,
    pub seed: u64,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::TwoMoons { .. } => "two_moons",
            Family::Rings { .. } => "rings",
            Family::GaussianMixture { .. } => "gaussian_mixture",
            Family::ShiftedGaussian { .. } => "shifted_gaussian",
        }
    }
}

/// Draws `count` points as an `(N, 1, 1, 2)` continuous dataset.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.count == 0 {
        return Err(Error::Parameter("synthetic count must be at least 1".into()));
    }
    let mut r = rng(derive_tagged(spec.seed, spec.family.name()));
    let normal = |r: &mut crate::rng::Rng| r.sample::<f64, _>(StandardNormal);
    let mut data = Vec::with_capacity(2 * spec.count);
    match &spec.family {
        Family::TwoMoons { radius, noise } => {
            for _ in 0..spec.count {
                let t = PI * r.random::<f64>();
                let (x, y) = if r.random::<bool>() {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                data.push(radius * (x - 0.5) + noise * normal(&mut r));
                data.push(radius * (y - 0.25) + noise * normal(&mut r));
            }
        }
        Family::Rings { radii, noise } => {
            if radii.is_empty() {
                return Err(Error::Parameter("rings need at least one radius".into()));
            }
            for _ in 0..spec.count {
                let rad = radii[r.random_range(0..radii.len())];
                let t = 2.0 * PI * r.random::<f64>();
                data.push(rad * t.cos() + noise * normal(&mut r));
                data.push(rad * t.sin() + noise * normal(&mut r));
            }
        }
        Family::GaussianMixture { means, std } => {
            if means.is_empty() {
                return Err(Error::Parameter("mixture needs at least one component".into()));
            }
            for _ in 0..spec.count {
                let m = means[r.random_range(0..means.len())];
                data.push(m[0] + std * normal(&mut r));
                data.push(m[1] + std * normal(&mut r));
            }
        }
        Family::ShiftedGaussian { shift, std } => {
            for _ in 0..spec.count {
                data.push(shift[0] + std * normal(&mut r));
                data.push(shift[1] + std * normal(&mut r));
            }
        }
    }
    let t = Tensor::from_vec([spec.count, 1, 1, 2], data)?;
    Dataset::new(spec.family.name(), Split::Train, Domain::Continuous, t)
}

/// Per-dimension affine map to zero mean and unit variance, fitted on one
/// dataset and reusable on others.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(t: &Tensor) -> Result<Self> {
        let n = t.batch();
        if n < 2 {
            return Err(Error::Data("standardization needs at least two samples".into()));
        }
        let d = t.sample_len();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(t.sample(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(t.sample(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, t: &Tensor) -> Result<Tensor> {
        let d = t.sample_len();
        if d != self.mean.len() {
            return Err(Error::Shape(format!(
                "standardizer fitted on {} dimensions, got {d}",
                self.mean.len()
            )));
        }
        let mut out = t.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v = (*v - self.mean[k % d]) / self.std[k % d];
        }
        Ok(out)
    }

    pub fn invert(&self, t: &Tensor) -> Tensor {
        let d = self.mean.len();
        let mut out = t.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v * self.std[k % d] + self.mean[k % d];
        }
        out
    }
}

pub fn read_points_csv(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["x0", "x1"] {
        return Err(Error::Data(format!("{}: point CSV header must be x0,x1", path.display())));
    }
    let mut data = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        for v in rec.iter() {
            data.push(
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Data(format!("{}: not a number {v:?}", path.display())))?,
            );
        }
    }
    let n = data.len() / 2;
    let name = path.file_stem().map_or_else(|| "points".into(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, Split::Train, Domain::Continuous, Tensor::from_vec([n, 1, 1, 2], data)?)
}

pub fn write_points_csv(t: &Tensor, path: &Path) -> Result<()> {
    if t.sample_len() != 2 {
        return Err(Error::Shape("point CSV needs 2-D samples".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x0", "x1"])?;
    for i in 0..t.batch() {
        let s = t.sample(i);
        w.write_record([s[0].to_string(), s[1].to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads `.csv` point clouds or IDX images (dequantized with `seed`).
pub fn load_any(path: &Path, seed: u64) -> Result<Dataset> {
    if path.extension().is_some_and(|e| e == "csv") {
        read_points_csv(path)
    } else {
        dequantize(&load_idx(path)?, seed)
    }
}

/// Names the data files of one experiment. Relative paths resolve against
/// the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataManifest {
    pub train: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default)]
    pub ood: Option<PathBuf>,
    /// Fit a standardizer on `train` and apply it to every split.
    #[serde(default)]
    pub standardize: bool,
}

impl DataManifest {
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DataManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, base))
    }

    pub fn resolve(base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}
