//! Candidate operations for coupling-cell edges.
//!
//! Every op maps a `(N, C, H, W)` tensor to the same shape. Convolutions are
//! ReLU → depthwise `k×k` (dilation 1 or 2, "same" padding) → pointwise `1×1`,
//! without bias. Pools use a 3×3 window at stride 1 over valid positions only.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::tensor::Tensor;

/// Standard deviation of the Gaussian used to initialize conv kernels.
pub const KERNEL_INIT_STD: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    #[serde(rename = "avg_pool_3x3")]
    AvgPool3x3,
    #[serde(rename = "max_pool_3x3")]
    MaxPool3x3,
    #[serde(rename = "skip_connect")]
    SkipConnect,
    #[serde(rename = "sep_conv_3x3")]
    SepConv3x3,
    #[serde(rename = "sep_conv_5x5")]
    SepConv5x5,
    #[serde(rename = "dil_conv_3x3")]
    DilConv3x3,
    #[serde(rename = "dil_conv_5x5")]
    DilConv5x5,
    #[serde(rename = "identity")]
    Identity,
    #[serde(rename = "zero")]
    Zero,
}

/// Activations an op keeps for its backward pass.
#[derive(Clone, Debug)]
pub enum OpCache {
    None,
    Conv { relu: Tensor, depthwise: Tensor },
    MaxPool { argmax: Vec<usize> },
}

impl OpKind {
    pub const ALL: [OpKind; 9] = [
        OpKind::AvgPool3x3,
        OpKind::MaxPool3x3,
        OpKind::SkipConnect,
        OpKind::SepConv3x3,
        OpKind::SepConv5x5,
        OpKind::DilConv3x3,
        OpKind::DilConv5x5,
        OpKind::Identity,
        OpKind::Zero,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::AvgPool3x3 => "avg_pool_3x3",
            OpKind::MaxPool3x3 => "max_pool_3x3",
            OpKind::SkipConnect => "skip_connect",
            OpKind::SepConv3x3 => "sep_conv_3x3",
            OpKind::SepConv5x5 => "sep_conv_5x5",
            OpKind::DilConv3x3 => "dil_conv_3x3",
            OpKind::DilConv5x5 => "dil_conv_5x5",
            OpKind::Identity => "identity",
            OpKind::Zero => "zero",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|op| op.name() == name)
    }

    /// `(kernel, dilation)` for the convolutional ops.
    fn conv_geometry(self) -> Option<(usize, usize)> {
        match self {
            OpKind::SepConv3x3 => Some((3, 1)),
            OpKind::SepConv5x5 => Some((5, 1)),
            OpKind::DilConv3x3 => Some((3, 2)),
            OpKind::DilConv5x5 => Some((5, 2)),
            _ => None,
        }
    }

    pub fn param_count(self, channels: usize) -> usize {
        match self.conv_geometry() {
            Some((k, _)) => channels * k * k + channels * channels,
            None => 0,
        }
    }

    pub fn init_params(self, channels: usize, rng: &mut Rng) -> Vec<f64> {
        let normal = Normal::new(0.0, KERNEL_INIT_STD).expect("valid std");
        (0..self.param_count(channels))
            .map(|_| normal.sample(rng))
            .collect()
    }

    pub fn forward(self, params: &[f64], x: &Tensor) -> (Tensor, OpCache) {
        match self {
            OpKind::Identity | OpKind::SkipConnect => (x.clone(), OpCache::None),
            OpKind::Zero => (Tensor::zeros(x.shape()), OpCache::None),
            OpKind::AvgPool3x3 => (avg_pool(x), OpCache::None),
            OpKind::MaxPool3x3 => {
                let (y, argmax) = max_pool(x);
                (y, OpCache::MaxPool { argmax })
            }
            _ => {
                let (k, dil) = self.conv_geometry().unwrap();
                let c = x.channels();
                let (kernel, pointwise) = params.split_at(c * k * k);
                let relu = x.map(|v| v.max(0.0));
                let depthwise = depthwise_conv(&relu, kernel, k, dil);
                let y = channel_matmul(&depthwise, pointwise, c);
                (y, OpCache::Conv { relu, depthwise })
            }
        }
    }

    /// Returns the gradient w.r.t. the op input and accumulates parameter
    /// gradients into `grad_params` (same layout as `params`).
    pub fn backward(
        self,
        params: &[f64],
        x: &Tensor,
        cache: &OpCache,
        grad_out: &Tensor,
        grad_params: &mut [f64],
    ) -> Tensor {
        match self {
            OpKind::Identity | OpKind::SkipConnect => grad_out.clone(),
            OpKind::Zero => Tensor::zeros(x.shape()),
            OpKind::AvgPool3x3 => avg_pool_backward(grad_out),
            OpKind::MaxPool3x3 => {
                let OpCache::MaxPool { argmax } = cache else {
                    unreachable!("max pool cache")
                };
                let mut gx = Tensor::zeros(x.shape());
                let gxd = gx.data_mut();
                for (o, &src) in argmax.iter().enumerate() {
                    gxd[src] += grad_out.data()[o];
                }
                gx
            }
            _ => {
                let OpCache::Conv { relu, depthwise } = cache else {
                    unreachable!("conv cache")
                };
                let (k, dil) = self.conv_geometry().unwrap();
                let c = x.channels();
                let (kernel, pointwise) = params.split_at(c * k * k);
                let (g_kernel, g_pointwise) = grad_params.split_at_mut(c * k * k);
                let g_dw = channel_matmul_backward(grad_out, depthwise, pointwise, c, g_pointwise);
                let mut g_relu = depthwise_conv_backward(relu, kernel, k, dil, &g_dw, g_kernel);
                for (g, &v) in g_relu.data_mut().iter_mut().zip(x.data()) {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                }
                g_relu
            }
        }
    }
}

impl std::fmt::Display for OpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Valid-window bounds of a 3×3 stride-1 window centered at `i` over `0..n`.
#[inline]
fn window(i: usize, n: usize) -> (usize, usize) {
    (i.saturating_sub(1), (i + 2).min(n))
}

fn avg_pool(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let mut y = Tensor::zeros(x.shape());
    let src = x.data();
    let dst = y.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..h {
            let (i0, i1) = window(i, h);
            for j in 0..w {
                let (j0, j1) = window(j, w);
                let mut acc = 0.0;
                for a in i0..i1 {
                    for b in j0..j1 {
                        acc += src[base + a * w + b];
                    }
                }
                dst[base + i * w + j] = acc / ((i1 - i0) * (j1 - j0)) as f64;
            }
        }
    }
    y
}

fn avg_pool_backward(g: &Tensor) -> Tensor {
    let [n, c, h, w] = g.shape();
    let mut gx = Tensor::zeros(g.shape());
    let src = g.data();
    let dst = gx.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..h {
            let (i0, i1) = window(i, h);
            for j in 0..w {
                let (j0, j1) = window(j, w);
                let share = src[base + i * w + j] / ((i1 - i0) * (j1 - j0)) as f64;
                for a in i0..i1 {
                    for b in j0..j1 {
                        dst[base + a * w + b] += share;
                    }
                }
            }
        }
    }
    gx
}

/// Ties route to the first maximal element in row-major window order.
fn max_pool(x: &Tensor) -> (Tensor, Vec<usize>) {
    let [n, c, h, w] = x.shape();
    let mut y = Tensor::zeros(x.shape());
    let mut argmax = vec![0usize; x.len()];
    let src = x.data();
    let dst = y.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..h {
            let (i0, i1) = window(i, h);
            for j in 0..w {
                let (j0, j1) = window(j, w);
                let mut best = f64::NEG_INFINITY;
                let mut best_at = base + i * w + j;
                for a in i0..i1 {
                    for b in j0..j1 {
                        let at = base + a * w + b;
                        if src[at] > best {
                            best = src[at];
                            best_at = at;
                        }
                    }
                }
                dst[base + i * w + j] = best;
                argmax[base + i * w + j] = best_at;
            }
        }
    }
    (y, argmax)
}

fn depthwise_conv(x: &Tensor, kernel: &[f64], k: usize, dil: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    let half = (k / 2) as isize;
    let mut y = Tensor::zeros(x.shape());
    let src = x.data();
    let dst = y.data_mut();
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * h * w;
            let kern = &kernel[ch * k * k..(ch + 1) * k * k];
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for ky in 0..k {
                        let a = i as isize + (ky as isize - half) * dil as isize;
                        if a < 0 || a >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let b = j as isize + (kx as isize - half) * dil as isize;
                            if b < 0 || b >= w as isize {
                                continue;
                            }
                            acc += kern[ky * k + kx] * src[base + a as usize * w + b as usize];
                        }
                    }
                    dst[base + i * w + j] = acc;
                }
            }
        }
    }
    y
}

fn depthwise_conv_backward(
    x: &Tensor,
    kernel: &[f64],
    k: usize,
    dil: usize,
    g: &Tensor,
    g_kernel: &mut [f64],
) -> Tensor {
    let [n, c, h, w] = x.shape();
    let half = (k / 2) as isize;
    let mut gx = Tensor::zeros(x.shape());
    let src = x.data();
    let gsrc = g.data();
    let gdst = gx.data_mut();
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * h * w;
            let kern = &kernel[ch * k * k..(ch + 1) * k * k];
            let gk = &mut g_kernel[ch * k * k..(ch + 1) * k * k];
            for i in 0..h {
                for j in 0..w {
                    let go = gsrc[base + i * w + j];
                    if go == 0.0 {
                        continue;
                    }
                    for ky in 0..k {
                        let a = i as isize + (ky as isize - half) * dil as isize;
                        if a < 0 || a >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let b = j as isize + (kx as isize - half) * dil as isize;
                            if b < 0 || b >= w as isize {
                                continue;
                            }
                            let at = base + a as usize * w + b as usize;
                            gk[ky * k + kx] += go * src[at];
                            gdst[at] += go * kern[ky * k + kx];
                        }
                    }
                }
            }
        }
    }
    gx
}

/// `y[n, o, p] = Σ_c weight[o, c] · x[n, c, p]` with `weight` of shape `(out, c)`.
pub(crate) fn channel_matmul(x: &Tensor, weight: &[f64], out: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    debug_assert_eq!(weight.len(), out * c);
    let mut y = Tensor::zeros([n, out, h, w]);
    let src = x.data();
    let dst = y.data_mut();
    for s in 0..n {
        for o in 0..out {
            let yo = &mut dst[(s * out + o) * plane..(s * out + o + 1) * plane];
            for ci in 0..c {
                let wv = weight[o * c + ci];
                if wv == 0.0 {
                    continue;
                }
                let xi = &src[(s * c + ci) * plane..(s * c + ci + 1) * plane];
                for (a, b) in yo.iter_mut().zip(xi) {
                    *a += wv * b;
                }
            }
        }
    }
    y
}

/// Backward of [`channel_matmul`]: accumulates `∂/∂weight` and returns `∂/∂x`.
pub(crate) fn channel_matmul_backward(
    g: &Tensor,
    x: &Tensor,
    weight: &[f64],
    out: usize,
    g_weight: &mut [f64],
) -> Tensor {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let mut gx = Tensor::zeros(x.shape());
    let gsrc = g.data();
    let xsrc = x.data();
    let gdst = gx.data_mut();
    for s in 0..n {
        for o in 0..out {
            let go = &gsrc[(s * out + o) * plane..(s * out + o + 1) * plane];
            for ci in 0..c {
                let xi = &xsrc[(s * c + ci) * plane..(s * c + ci + 1) * plane];
                g_weight[o * c + ci] += go.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
                let wv = weight[o * c + ci];
                let gi = &mut gdst[(s * c + ci) * plane..(s * c + ci + 1) * plane];
                for (a, b) in gi.iter_mut().zip(go) {
                    *a += wv * b;
                }
            }
        }
    }
    gx
}

/// Fills a tensor with standard-normal noise.
#[cfg(test)]
pub(crate) fn random_tensor(shape: [usize; 4], rng: &mut Rng) -> Tensor {
    use rand::Rng as _;
    Tensor::from_fn(shape, |_| rng.sample(rand_distr::StandardNormal))
}
