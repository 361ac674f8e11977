//! Invertible 1×1 convolution in PLU form:
//! `W = P · L · (U + diag(sign · exp(log_s)))` with `P` fixed, `L` unit lower
//! triangular and `U` strictly upper triangular, so `log|det W| = Σ log_s`.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Inv1x1 {
    channels: usize,
    /// Row `i` of `P · M` is row `perm[i]` of `M`.
    perm: Vec<usize>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    log_s: Vec<f64>,
    sign: Vec<f64>,
}

fn tri_len(c: usize) -> usize {
    c * (c - 1) / 2
}

impl Inv1x1 {
    pub fn identity(channels: usize) -> Self {
        Inv1x1 {
            channels,
            perm: (0..channels).collect(),
            lower: vec![0.0; tri_len(channels)],
            upper: vec![0.0; tri_len(channels)],
            log_s: vec![0.0; channels],
            sign: vec![1.0; channels],
        }
    }

    /// PLU factors of a random rotation.
    pub fn random(channels: usize, rng: &mut Rng) -> Self {
        let c = channels;
        let g = DMatrix::<f64>::from_fn(c, c, |_, _| rng.sample(StandardNormal));
        let q = g.qr().q();
        Self::from_matrix(&q).expect("rotation is invertible")
    }

    /// Factors an invertible matrix with partial pivoting.
    pub fn from_matrix(w: &DMatrix<f64>) -> Result<Self> {
        let c = w.nrows();
        if w.ncols() != c {
            return Err(Error::Shape("1x1 weight must be square".into()));
        }
        let lu = w.clone().lu();
        // nalgebra gives Pn · W = L · U, so W = Pnᵀ · L · U.
        let mut pn = DMatrix::<f64>::identity(c, c);
        lu.p().permute_rows(&mut pn);
        let pt = pn.transpose();
        let perm = (0..c)
            .map(|i| (0..c).find(|&j| pt[(i, j)] == 1.0).expect("permutation row"))
            .collect();
        let l = lu.l();
        let u = lu.u();
        let mut out = Inv1x1::identity(c);
        out.perm = perm;
        let mut lo = 0;
        let mut up = 0;
        for i in 0..c {
            for j in 0..c {
                if i > j {
                    out.lower[lo] = l[(i, j)];
                    lo += 1;
                } else if i < j {
                    out.upper[up] = u[(i, j)];
                    up += 1;
                }
            }
            let d = u[(i, i)];
            if d == 0.0 || !d.is_finite() {
                return Err(Error::Parameter("1x1 weight is singular".into()));
            }
            out.sign[i] = d.signum();
            out.log_s[i] = d.abs().ln();
        }
        Ok(out)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn sign(&self) -> &[f64] {
        &self.sign
    }

    pub(crate) fn set_buffers(&mut self, perm: Vec<usize>, sign: Vec<f64>) -> Result<()> {
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        if perm.len() != self.channels || sorted != (0..self.channels).collect::<Vec<_>>() {
            return Err(Error::Checkpoint("invalid 1x1 permutation".into()));
        }
        if sign.len() != self.channels || sign.iter().any(|&s| s != 1.0 && s != -1.0) {
            return Err(Error::Checkpoint("invalid 1x1 sign vector".into()));
        }
        self.perm = perm;
        self.sign = sign;
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        2 * tri_len(self.channels) + self.channels
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.lower);
        out.extend_from_slice(&self.upper);
        out.extend_from_slice(&self.log_s);
    }

    pub fn read_params(&mut self, src: &[f64]) -> usize {
        let t = tri_len(self.channels);
        self.lower.copy_from_slice(&src[..t]);
        self.upper.copy_from_slice(&src[t..2 * t]);
        self.log_s.copy_from_slice(&src[2 * t..2 * t + self.channels]);
        self.num_params()
    }

    fn factors(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let c = self.channels;
        let mut l = DMatrix::<f64>::identity(c, c);
        let mut u = DMatrix::<f64>::zeros(c, c);
        let mut lo = 0;
        let mut up = 0;
        for i in 0..c {
            for j in 0..c {
                if i > j {
                    l[(i, j)] = self.lower[lo];
                    lo += 1;
                } else if i < j {
                    u[(i, j)] = self.upper[up];
                    up += 1;
                }
            }
            u[(i, i)] = self.sign[i] * self.log_s[i].exp();
        }
        (l, u)
    }

    fn permute(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.channels, m.ncols(), |i, j| m[(self.perm[i], j)])
    }

    fn permute_transpose(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.channels, m.ncols());
        for i in 0..self.channels {
            for j in 0..m.ncols() {
                out[(self.perm[i], j)] = m[(i, j)];
            }
        }
        out
    }

    pub fn weight(&self) -> DMatrix<f64> {
        let (l, u) = self.factors();
        self.permute(&(l * u))
    }

    pub fn logdet(&self, plane: usize) -> f64 {
        plane as f64 * self.log_s.iter().sum::<f64>()
    }

    fn apply(matrix: &DMatrix<f64>, x: &Tensor) -> Tensor {
        let c = matrix.nrows();
        let w: Vec<f64> = (0..c * c).map(|k| matrix[(k / c, k % c)]).collect();
        crate::search::ops::channel_matmul(x, &w, c)
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        Self::apply(&self.weight(), x)
    }

    pub fn inverse(&self, y: &Tensor) -> Result<Tensor> {
        let inv = self
            .weight()
            .try_inverse()
            .ok_or_else(|| Error::Divergence("1x1 weight is not invertible".into()))?;
        Ok(Self::apply(&inv, y))
    }

    /// Accumulates into `grad` (layout of `write_params`) and returns `∂L/∂x`.
    pub fn backward(&self, x: &Tensor, g_y: &Tensor, logdet_grad: f64, grad: &mut [f64]) -> Tensor {
        let c = self.channels;
        let plane = x.plane();
        let w = self.weight();
        let wt = w.transpose();
        let g_x = Self::apply(&wt, g_y);

        // G = Σ_{n,p} g_y xᵀ
        let mut gw = DMatrix::<f64>::zeros(c, c);
        for s in 0..x.batch() {
            let gs = g_y.sample(s);
            let xs = x.sample(s);
            for o in 0..c {
                let go = &gs[o * plane..(o + 1) * plane];
                for i in 0..c {
                    let xi = &xs[i * plane..(i + 1) * plane];
                    gw[(o, i)] += go.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        let (l, u) = self.factors();
        let pt_g = self.permute_transpose(&gw);
        let g_l = &pt_g * u.transpose();
        let g_u = l.transpose() * &pt_g;

        let t = tri_len(c);
        let (g_lower, rest) = grad.split_at_mut(t);
        let (g_upper, g_logs) = rest.split_at_mut(t);
        let mut lo = 0;
        let mut up = 0;
        for i in 0..c {
            for j in 0..c {
                if i > j {
                    g_lower[lo] += g_l[(i, j)];
                    lo += 1;
                } else if i < j {
                    g_upper[up] += g_u[(i, j)];
                    up += 1;
                }
            }
            g_logs[i] += g_u[(i, i)] * self.sign[i] * self.log_s[i].exp() + plane as f64 * logdet_grad;
        }
        g_x
    }
}
