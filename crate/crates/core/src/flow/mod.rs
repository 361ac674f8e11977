//! Multi-scale invertible flow.
//!
//! A model is `B` blocks; each block squeezes, applies `K` steps of
//! actnorm → invertible 1×1 → affine coupling, and (except the last block)
//! splits off the first half of its channels as a latent. All latents are
//! scored under a standard normal prior, so
//! `log p(x) = Σ_d log N(z_d; 0, 1) + Σ_layers log|det J|`.
//!
//! Gradients are computed by hand: [`FlowModel::forward_trace`] records the
//! inputs of every layer and [`FlowModel::backward`] walks them in reverse.

pub mod actnorm;
pub mod checkpoint;
pub mod coupling;
pub mod inv1x1;
pub mod squeeze;

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use actnorm::ActNorm;
pub use coupling::AffineCoupling;
pub use inv1x1::Inv1x1;

use crate::error::{Error, Result};
use crate::rng::{rng, Rng};
use crate::search::{ArchSample, EdgeWeights, SearchSpace};
use crate::tensor::Tensor;

/// Coupling logit used to configure an (numerically) identity coupling.
pub const IDENTITY_LOGIT: f64 = 40.0;

const LAYERS_PER_STEP: usize = 3;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn next_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    /// Sample shape `(C, H, W)`.
    pub input_shape: [usize; 3],
    pub blocks: usize,
    pub flows_per_block: usize,
    #[serde(default)]
    pub space: SearchSpace,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub input: [usize; 3],
    pub factors: (usize, usize),
    pub squeezed: [usize; 3],
    /// Channels split off after the block; 0 for the last block.
    pub split: usize,
}

impl BlockLayout {
    fn remaining(&self) -> [usize; 3] {
        [self.squeezed[0] - self.split, self.squeezed[1], self.squeezed[2]]
    }
}

impl FlowSpec {
    pub fn layout(&self) -> Result<Vec<BlockLayout>> {
        if self.blocks == 0 || self.flows_per_block == 0 {
            return Err(Error::Parameter("flow needs at least one block and one step".into()));
        }
        if self.input_shape.contains(&0) {
            return Err(Error::Parameter(format!("empty input shape {:?}", self.input_shape)));
        }
        self.space.validate()?;
        let mut shape = self.input_shape;
        let mut out = Vec::with_capacity(self.blocks);
        for b in 0..self.blocks {
            let (fh, fw) = squeeze::factors(shape)?;
            let squeezed = [shape[0] * fh * fw, shape[1] / fh, shape[2] / fw];
            let split = if b + 1 < self.blocks {
                if squeezed[0] < 2 {
                    return Err(Error::Parameter(format!(
                        "block {b} has {} channel(s); cannot split",
                        squeezed[0]
                    )));
                }
                squeezed[0] / 2
            } else {
                0
            };
            let layout = BlockLayout {
                input: shape,
                factors: (fh, fw),
                squeezed,
                split,
            };
            shape = layout.remaining();
            out.push(layout);
        }
        Ok(out)
    }

    pub fn dims(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn arch_rows(&self) -> usize {
        self.space.num_rows(self.blocks, self.flows_per_block)
    }
}

#[derive(Clone, Debug)]
pub struct FlowStep {
    pub actnorm: ActNorm,
    pub inv: Inv1x1,
    pub coupling: AffineCoupling,
}

#[derive(Debug)]
pub struct FlowModel {
    spec: FlowSpec,
    layout: Vec<BlockLayout>,
    steps: Vec<FlowStep>,
    version: u64,
}

impl Clone for FlowModel {
    fn clone(&self) -> Self {
        FlowModel {
            spec: self.spec.clone(),
            layout: self.layout.clone(),
            steps: self.steps.clone(),
            version: next_version(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FlowOutput {
    pub latents: Vec<Tensor>,
    pub logdet: Vec<f64>,
}

#[derive(Clone, Debug)]
struct StepTrace {
    x_act: Tensor,
    x_inv: Tensor,
    coupling: Option<coupling::CouplingCache>,
}

/// Activations cached by [`FlowModel::forward_trace`].
#[derive(Clone, Debug)]
pub struct FlowTrace {
    version: u64,
    arch: ArchSample,
    steps: Vec<StepTrace>,
    latents: Vec<Tensor>,
}

impl FlowTrace {
    pub fn batch(&self) -> usize {
        self.latents[0].batch()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowGrads {
    /// Same order as [`FlowModel::params`].
    pub params: Vec<f64>,
    /// `∂L/∂b̃`, row-major `rows × ops`; zero for discrete samples.
    pub arch: Vec<f64>,
}

pub fn standard_normal_logpdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * PI).ln()
}

impl FlowModel {
    /// Random initialization: rotation 1×1 weights, N(0, 0.05²) cell
    /// parameters, uninitialized actnorm.
    pub fn new(spec: FlowSpec, seed: u64) -> Result<Self> {
        let layout = spec.layout()?;
        let mut r = rng(seed);
        let mut steps = Vec::with_capacity(spec.blocks * spec.flows_per_block);
        for block in &layout {
            let c = block.squeezed[0];
            for _ in 0..spec.flows_per_block {
                steps.push(FlowStep {
                    actnorm: ActNorm::new(c),
                    inv: Inv1x1::random(c, &mut r),
                    coupling: AffineCoupling::new(c, &spec.space, &mut r),
                });
            }
        }
        Ok(FlowModel {
            spec,
            layout,
            steps,
            version: next_version(),
        })
    }

    /// Every layer configured as the identity map: unit actnorm, identity
    /// 1×1, and couplings emitting `s = IDENTITY_LOGIT, t = 0`.
    pub fn identity(spec: FlowSpec, seed: u64) -> Result<Self> {
        let mut model = Self::new(spec, seed)?;
        for step in model.steps.iter_mut() {
            let c = step.actnorm.channels();
            step.actnorm.set(&vec![1.0; c], &vec![0.0; c])?;
            step.inv = Inv1x1::identity(c);
            if let Some(cell) = step.coupling.cell_mut() {
                cell.set_constant_output(IDENTITY_LOGIT, 0.0);
            }
        }
        model.touch();
        Ok(model)
    }

    pub fn spec(&self) -> &FlowSpec {
        &self.spec
    }

    pub fn layout(&self) -> &[BlockLayout] {
        &self.layout
    }

    pub fn steps(&self) -> &[FlowStep] {
        &self.steps
    }

    /// Mutable access to the layers; invalidates outstanding traces.
    pub fn steps_mut(&mut self) -> &mut [FlowStep] {
        self.touch();
        &mut self.steps
    }

    fn touch(&mut self) {
        self.version = next_version();
    }

    pub fn is_initialized(&self) -> bool {
        self.steps.iter().all(|s| s.actnorm.is_initialized())
    }

    pub fn num_params(&self) -> usize {
        self.steps
            .iter()
            .map(|s| s.actnorm.num_params() + s.inv.num_params() + s.coupling.num_params())
            .sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for s in &self.steps {
            s.actnorm.write_params(&mut out);
            s.inv.write_params(&mut out);
            s.coupling.write_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "model has {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut at = 0;
        for s in self.steps.iter_mut() {
            at += s.actnorm.read_params(&params[at..]);
            at += s.inv.read_params(&params[at..]);
            at += s.coupling.read_params(&params[at..]);
        }
        self.touch();
        Ok(())
    }

    /// Per-sample latent shapes `(C, H, W)` in output order.
    pub fn latent_shapes(&self) -> Vec<[usize; 3]> {
        self.layout
            .iter()
            .map(|b| {
                if b.split > 0 {
                    [b.split, b.squeezed[1], b.squeezed[2]]
                } else {
                    b.squeezed
                }
            })
            .collect()
    }

    fn check_arch(&self, arch: &ArchSample) -> Result<()> {
        let rows = self.spec.arch_rows();
        let ops = self.spec.space.ops.len();
        if arch.rows() != rows || arch.num_ops() != ops {
            return Err(Error::Shape(format!(
                "architecture is {}x{}, model expects {rows}x{ops}",
                arch.rows(),
                arch.num_ops()
            )));
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let [_, c, h, w] = x.shape();
        if [c, h, w] != self.spec.input_shape || x.batch() == 0 {
            return Err(Error::Shape(format!(
                "input {:?} does not match model input {:?}",
                x.shape(),
                self.spec.input_shape
            )));
        }
        Ok(())
    }

    fn edge_weights<'a>(&self, arch: &'a ArchSample, block: usize, step: usize) -> EdgeWeights<'a> {
        let e = self.spec.space.topology.num_edges();
        let k = arch.num_ops();
        let slot = self.spec.space.slot(block, step, self.spec.flows_per_block);
        EdgeWeights {
            weights: &arch.weights()[slot * e * k..(slot + 1) * e * k],
            num_ops: k,
            discrete: arch.is_discrete(),
        }
    }

    fn finite(t: &Tensor, layer: usize, what: &str) -> Result<()> {
        if t.all_finite() {
            Ok(())
        } else {
            Err(Error::Numeric {
                layer,
                what: what.to_string(),
            })
        }
    }

    fn run(&self, x: &Tensor, arch: &ArchSample, keep: bool) -> Result<(FlowOutput, Option<Vec<StepTrace>>)> {
        self.check_input(x)?;
        self.check_arch(arch)?;
        let n = x.batch();
        let mut logdet = vec![0.0; n];
        let mut latents = Vec::with_capacity(self.layout.len());
        let mut traces = keep.then(|| Vec::with_capacity(self.steps.len()));
        let mut h = x.clone();
        let k = self.spec.flows_per_block;
        for (b, block) in self.layout.iter().enumerate() {
            h = squeeze::squeeze(&h, block.factors.0, block.factors.1);
            let plane = h.plane();
            for s in 0..k {
                let idx = b * k + s;
                let step = &self.steps[idx];
                let layer = idx * LAYERS_PER_STEP;
                if !step.actnorm.is_initialized() {
                    return Err(Error::NotInitialized { layer });
                }
                let x_act = h;
                let a = step.actnorm.forward(&x_act);
                Self::finite(&a, layer, "actnorm output")?;
                let ld = step.actnorm.logdet(plane);
                let y = step.inv.forward(&a);
                Self::finite(&y, layer + 1, "1x1 output")?;
                let ld = ld + step.inv.logdet(plane);
                let (out, cld, cache) = step.coupling.forward(&y, self.edge_weights(arch, b, s), layer + 2)?;
                Self::finite(&out, layer + 2, "coupling output")?;
                for (l, c) in logdet.iter_mut().zip(&cld) {
                    *l += ld + c;
                }
                if let Some(t) = traces.as_mut() {
                    t.push(StepTrace {
                        x_act,
                        x_inv: a,
                        coupling: cache,
                    });
                }
                h = out;
            }
            if block.split > 0 {
                latents.push(h.slice_channels(0..block.split));
                h = h.slice_channels(block.split..h.channels());
            }
        }
        latents.push(h);
        Ok((FlowOutput { latents, logdet }, traces))
    }

    pub fn forward(&self, x: &Tensor, arch: &ArchSample) -> Result<FlowOutput> {
        Ok(self.run(x, arch, false)?.0)
    }

    pub fn forward_trace(&self, x: &Tensor, arch: &ArchSample) -> Result<(FlowOutput, FlowTrace)> {
        let (out, steps) = self.run(x, arch, true)?;
        let trace = FlowTrace {
            version: self.version,
            arch: arch.clone(),
            steps: steps.expect("trace requested"),
            latents: out.latents.clone(),
        };
        Ok((out, trace))
    }

    pub fn log_prob_of(out: &FlowOutput) -> Vec<f64> {
        let mut lp = out.logdet.clone();
        for z in &out.latents {
            let per = z.sample_len();
            for (i, &v) in z.data().iter().enumerate() {
                lp[i / per] += standard_normal_logpdf(v);
            }
        }
        lp
    }

    pub fn log_prob(&self, x: &Tensor, arch: &ArchSample) -> Result<Vec<f64>> {
        Ok(Self::log_prob_of(&self.forward(x, arch)?))
    }

    /// Gradients of a loss `L` given `upstream[n] = ∂L/∂log p(x_n)`.
    pub fn backward(&self, trace: &FlowTrace, upstream: &[f64]) -> Result<FlowGrads> {
        if trace.version != self.version {
            return Err(Error::Usage(
                "trace was recorded before the model last changed; run forward_trace again".into(),
            ));
        }
        if upstream.len() != trace.batch() {
            return Err(Error::Shape(format!(
                "upstream gradient has {} entries for a batch of {}",
                upstream.len(),
                trace.batch()
            )));
        }
        let arch = &trace.arch;
        let mut grads = vec![0.0; self.num_params()];
        let mut grad_arch = vec![0.0; arch.weights().len()];
        let mut offsets = Vec::with_capacity(self.steps.len());
        let mut at = 0;
        for s in &self.steps {
            offsets.push(at);
            at += s.actnorm.num_params() + s.inv.num_params() + s.coupling.num_params();
        }
        let u_total: f64 = upstream.iter().sum();

        let prior_grad = |z: &Tensor| {
            let per = z.sample_len();
            let mut g = z.clone();
            for (i, v) in g.data_mut().iter_mut().enumerate() {
                *v *= -upstream[i / per];
            }
            g
        };

        let nb = self.layout.len();
        let k = self.spec.flows_per_block;
        let e = self.spec.space.topology.num_edges();
        let ops = arch.num_ops();
        let mut g = prior_grad(&trace.latents[nb - 1]);
        let mut zi = nb - 1;
        for (b, block) in self.layout.iter().enumerate().rev() {
            if block.split > 0 {
                zi -= 1;
                g = Tensor::concat_channels(&prior_grad(&trace.latents[zi]), &g)?;
            }
            for s in (0..k).rev() {
                let idx = b * k + s;
                let step = &self.steps[idx];
                let st = &trace.steps[idx];
                let off = offsets[idx];
                let n_act = step.actnorm.num_params();
                let n_inv = step.inv.num_params();
                let n_cpl = step.coupling.num_params();
                let slot = self.spec.space.slot(b, s, k);
                let ga = &mut grad_arch[slot * e * ops..(slot + 1) * e * ops];
                g = step.coupling.backward(
                    st.coupling.as_ref(),
                    self.edge_weights(arch, b, s),
                    &g,
                    upstream,
                    &mut grads[off + n_act + n_inv..off + n_act + n_inv + n_cpl],
                    ga,
                );
                g = step.inv.backward(&st.x_inv, &g, u_total, &mut grads[off + n_act..off + n_act + n_inv]);
                g = step.actnorm.backward(&st.x_act, &g, u_total, &mut grads[off..off + n_act]);
            }
            g = squeeze::unsqueeze(&g, block.factors.0, block.factors.1);
        }
        Ok(FlowGrads {
            params: grads,
            arch: grad_arch,
        })
    }

    pub fn inverse(&self, latents: &[Tensor], arch: &ArchSample) -> Result<Tensor> {
        self.check_arch(arch)?;
        let shapes = self.latent_shapes();
        if latents.len() != shapes.len() {
            return Err(Error::Shape(format!(
                "expected {} latents, got {}",
                shapes.len(),
                latents.len()
            )));
        }
        let n = latents[0].batch();
        for (z, s) in latents.iter().zip(&shapes) {
            let [zn, c, h, w] = z.shape();
            if zn != n || [c, h, w] != *s {
                return Err(Error::Shape(format!("latent {:?} does not match {:?}", z.shape(), s)));
            }
        }
        let k = self.spec.flows_per_block;
        let mut h = latents[latents.len() - 1].clone();
        let mut zi = latents.len() - 1;
        for (b, block) in self.layout.iter().enumerate().rev() {
            if block.split > 0 {
                zi -= 1;
                h = Tensor::concat_channels(&latents[zi], &h)?;
            }
            for s in (0..k).rev() {
                let idx = b * k + s;
                let step = &self.steps[idx];
                let layer = idx * LAYERS_PER_STEP;
                if !step.actnorm.is_initialized() {
                    return Err(Error::NotInitialized { layer });
                }
                h = step.coupling.inverse(&h, self.edge_weights(arch, b, s), layer + 2)?;
                h = step.inv.inverse(&h)?;
                h = step.actnorm.inverse(&h);
                Self::finite(&h, layer, "inverse output")?;
            }
            h = squeeze::unsqueeze(&h, block.factors.0, block.factors.1);
        }
        Ok(h)
    }

    /// Data-dependent actnorm initialization: every actnorm is set so that
    /// its output on `batch` (under `arch`) has zero mean and unit variance
    /// per channel.
    pub fn initialize_actnorm(&mut self, batch: &Tensor, arch: &ArchSample) -> Result<()> {
        self.check_input(batch)?;
        self.check_arch(arch)?;
        let k = self.spec.flows_per_block;
        let mut h = batch.clone();
        for b in 0..self.layout.len() {
            let block = self.layout[b];
            h = squeeze::squeeze(&h, block.factors.0, block.factors.1);
            for s in 0..k {
                let idx = b * k + s;
                self.steps[idx].actnorm.initialize(&h)?;
                let step = &self.steps[idx];
                let a = step.actnorm.forward(&h);
                let y = step.inv.forward(&a);
                let weights = self.edge_weights(arch, b, s);
                h = step.coupling.forward(&y, weights, idx * LAYERS_PER_STEP + 2)?.0;
            }
            if block.split > 0 {
                h = h.slice_channels(block.split..h.channels());
            }
        }
        self.touch();
        Ok(())
    }

    /// Draws latents from `N(0, temperature²)`.
    pub fn sample_latents(&self, count: usize, temperature: f64, rng: &mut Rng) -> Vec<Tensor> {
        self.latent_shapes()
            .into_iter()
            .map(|[c, h, w]| {
                Tensor::from_fn([count, c, h, w], |_| temperature * rng.sample::<f64, _>(StandardNormal))
            })
            .collect()
    }
}

/// Concatenates the latents of sample `i` into one vector.
pub fn flatten_latents(latents: &[Tensor], i: usize) -> Vec<f64> {
    latents.iter().flat_map(|z| z.sample(i).iter().copied()).collect()
}
