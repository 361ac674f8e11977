//! Affine coupling: the first `⌈C/2⌉` channels pass through and condition a
//! searched cell that emits `(s, t)` for the remaining channels, which are
//! mapped as `y_b = σ(s + 2) · x_b + t`.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::search::{Cell, EdgeWeights, SearchSpace};
use crate::tensor::Tensor;

/// Smallest effective scale the inverse accepts.
pub const MIN_SCALE: f64 = 1e-12;

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

#[derive(Clone, Debug)]
pub struct AffineCoupling {
    cond: usize,
    /// `None` when there is nothing to transform (a single channel).
    cell: Option<Cell>,
}

#[derive(Clone, Debug)]
pub struct CouplingCache {
    cell: crate::search::cell::CellCache,
    xb: Tensor,
    scale: Tensor,
}

impl AffineCoupling {
    pub fn new(channels: usize, space: &SearchSpace, rng: &mut Rng) -> Self {
        let cond = channels.div_ceil(2);
        let trans = channels - cond;
        let cell = (trans > 0)
            .then(|| Cell::new(space.topology.clone(), space.ops.clone(), cond, trans, rng));
        AffineCoupling { cond, cell }
    }

    pub fn cell(&self) -> Option<&Cell> {
        self.cell.as_ref()
    }

    pub fn cell_mut(&mut self) -> Option<&mut Cell> {
        self.cell.as_mut()
    }

    pub fn num_params(&self) -> usize {
        self.cell.as_ref().map_or(0, Cell::num_params)
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        if let Some(cell) = &self.cell {
            cell.write_params(out);
        }
    }

    pub fn read_params(&mut self, src: &[f64]) -> usize {
        self.cell.as_mut().map_or(0, |c| c.read_params(src))
    }

    /// Output, per-sample log-determinant, and the cache for backward.
    pub fn forward(
        &self,
        x: &Tensor,
        weights: EdgeWeights<'_>,
        layer: usize,
    ) -> Result<(Tensor, Vec<f64>, Option<CouplingCache>)> {
        let Some(cell) = &self.cell else {
            return Ok((x.clone(), vec![0.0; x.batch()], None));
        };
        let xa = x.slice_channels(0..self.cond);
        let xb = x.slice_channels(self.cond..x.channels());
        let (s, t, cell_cache) = cell.forward(&xa, weights, layer)?;
        let mut scale = s.clone();
        let mut yb = xb.clone();
        let per = s.sample_len();
        let mut logdet = vec![0.0; x.batch()];
        for (i, ((sc, y), &tv)) in scale
            .data_mut()
            .iter_mut()
            .zip(yb.data_mut())
            .zip(t.data())
            .enumerate()
        {
            let z = *sc + 2.0;
            logdet[i / per] += log_sigmoid(z);
            *sc = sigmoid(z);
            *y = *sc * *y + tv;
        }
        let y = Tensor::concat_channels(&xa, &yb)?;
        Ok((
            y,
            logdet,
            Some(CouplingCache {
                cell: cell_cache,
                xb,
                scale,
            }),
        ))
    }

    pub fn inverse(&self, y: &Tensor, weights: EdgeWeights<'_>, layer: usize) -> Result<Tensor> {
        let Some(cell) = &self.cell else {
            return Ok(y.clone());
        };
        let ya = y.slice_channels(0..self.cond);
        let mut xb = y.slice_channels(self.cond..y.channels());
        let (s, t, _) = cell.forward(&ya, weights, layer)?;
        for ((v, &sv), &tv) in xb.data_mut().iter_mut().zip(s.data()).zip(t.data()) {
            let scale = sigmoid(sv + 2.0);
            if scale < MIN_SCALE {
                return Err(Error::Numeric {
                    layer,
                    what: format!("coupling scale {scale:e} is singular"),
                });
            }
            *v = (*v - tv) / scale;
        }
        Tensor::concat_channels(&ya, &xb)
    }

    /// `logdet_grad[n] = ∂L/∂logdet_n`. Accumulates parameter gradients into
    /// `grad` and mixing-weight gradients into `grad_weights`; returns `∂L/∂x`.
    pub fn backward(
        &self,
        cache: Option<&CouplingCache>,
        weights: EdgeWeights<'_>,
        g_y: &Tensor,
        logdet_grad: &[f64],
        grad: &mut [f64],
        grad_weights: &mut [f64],
    ) -> Tensor {
        let (Some(cell), Some(cache)) = (&self.cell, cache) else {
            return g_y.clone();
        };
        let c = g_y.channels();
        let g_ya = g_y.slice_channels(0..self.cond);
        let g_yb = g_y.slice_channels(self.cond..c);
        let per = g_yb.sample_len();
        let mut g_s = g_yb.clone();
        let mut g_xb = g_yb.clone();
        for (i, ((gs, gx), (&sc, &xb))) in g_s
            .data_mut()
            .iter_mut()
            .zip(g_xb.data_mut())
            .zip(cache.scale.data().iter().zip(cache.xb.data()))
            .enumerate()
        {
            let gy = *gs;
            *gs = gy * xb * sc * (1.0 - sc) + logdet_grad[i / per] * (1.0 - sc);
            *gx = gy * sc;
        }
        let mut g_xa = cell.backward(&cache.cell, weights, &g_s, &g_yb, grad, grad_weights);
        g_xa.add_assign(&g_ya);
        Tensor::concat_channels(&g_xa, &g_xb).expect("halves share spatial shape")
    }
}
