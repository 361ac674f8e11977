//! Per-channel affine normalization `y = scale · x + bias`, with scale kept
//! as a log so it stays positive under gradient updates.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ActNorm {
    log_scale: Vec<f64>,
    bias: Vec<f64>,
    initialized: bool,
}

impl ActNorm {
    pub fn new(channels: usize) -> Self {
        ActNorm {
            log_scale: vec![0.0; channels],
            bias: vec![0.0; channels],
            initialized: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.bias.len()
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub(crate) fn mark_initialized(&mut self, flag: bool) {
        self.initialized = flag;
    }

    pub fn scale(&self) -> Vec<f64> {
        self.log_scale.iter().map(|v| v.exp()).collect()
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn set(&mut self, scale: &[f64], bias: &[f64]) -> Result<()> {
        if scale.len() != self.channels() || bias.len() != self.channels() {
            return Err(Error::Shape("actnorm parameter length".into()));
        }
        if scale.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Parameter("actnorm scale must be positive".into()));
        }
        self.log_scale = scale.iter().map(|s| s.ln()).collect();
        self.bias = bias.to_vec();
        self.initialized = true;
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        2 * self.channels()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.log_scale);
        out.extend_from_slice(&self.bias);
    }

    pub fn read_params(&mut self, src: &[f64]) -> usize {
        let c = self.channels();
        self.log_scale.copy_from_slice(&src[..c]);
        self.bias.copy_from_slice(&src[c..2 * c]);
        2 * c
    }

    /// Data-dependent init: zero mean and unit variance per channel on `x`.
    /// A constant channel keeps scale 1 and is only centered.
    pub fn initialize(&mut self, x: &Tensor) -> Result<()> {
        if x.batch() < 2 {
            return Err(Error::Parameter("actnorm initialization needs a batch of at least 2".into()));
        }
        let [n, c, _, _] = x.shape();
        let plane = x.plane();
        let count = (n * plane) as f64;
        for ch in 0..c {
            let values = || (0..n).flat_map(move |s| x.sample(s)[ch * plane..(ch + 1) * plane].iter());
            let mean = values().sum::<f64>() / count;
            let var = values().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
            let std = var.sqrt();
            if std < 1e-12 {
                log::warn!("actnorm channel {ch} has zero variance; using scale 1");
                self.log_scale[ch] = 0.0;
                self.bias[ch] = -mean;
            } else {
                self.log_scale[ch] = -std.ln();
                self.bias[ch] = -mean / std;
            }
        }
        self.initialized = true;
        Ok(())
    }

    /// Log-determinant contributed to every sample.
    pub fn logdet(&self, plane: usize) -> f64 {
        plane as f64 * self.log_scale.iter().sum::<f64>()
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let c = self.channels();
        let plane = x.plane();
        let scale = self.scale();
        let mut y = x.clone();
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            let ch = (i / plane) % c;
            *v = scale[ch] * *v + self.bias[ch];
        }
        y
    }

    pub fn inverse(&self, y: &Tensor) -> Tensor {
        let c = self.channels();
        let plane = y.plane();
        let scale = self.scale();
        let mut x = y.clone();
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            let ch = (i / plane) % c;
            *v = (*v - self.bias[ch]) / scale[ch];
        }
        x
    }

    /// `logdet_grad` is `Σ_n ∂L/∂logdet_n`. Accumulates into `grad` and
    /// returns `∂L/∂x`.
    pub fn backward(&self, x: &Tensor, g_y: &Tensor, logdet_grad: f64, grad: &mut [f64]) -> Tensor {
        let c = self.channels();
        let plane = x.plane();
        let scale = self.scale();
        let (g_ls, g_b) = grad.split_at_mut(c);
        let mut g_x = g_y.clone();
        for (i, (gx, &xv)) in g_x.data_mut().iter_mut().zip(x.data()).enumerate() {
            let ch = (i / plane) % c;
            let g = *gx;
            g_b[ch] += g;
            g_ls[ch] += g * xv * scale[ch];
            *gx = g * scale[ch];
        }
        for g in g_ls.iter_mut() {
            *g += plane as f64 * logdet_grad;
        }
        g_x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moment_matching_init() {
        // channel values 1 and 5: mean 3, std 2
        let x = Tensor::from_vec([2, 1, 1, 2], vec![1.0, 5.0, 5.0, 1.0]).unwrap();
        let mut a = ActNorm::new(1);
        a.initialize(&x).unwrap();
        assert!((a.scale()[0] - 0.5).abs() < 1e-12);
        assert!((a.bias()[0] + 1.5).abs() < 1e-12);
        let y = a.forward(&x);
        assert_eq!(y.data(), &[-1.0, 1.0, 1.0, -1.0]);
    }

    #[test]
    fn constant_channel_falls_back_to_unit_scale() {
        let x = Tensor::from_vec([3, 1, 1, 1], vec![2.0; 3]).unwrap();
        let mut a = ActNorm::new(1);
        a.initialize(&x).unwrap();
        assert_eq!(a.scale(), vec![1.0]);
        assert!(a.is_initialized());
    }

    #[test]
    fn init_needs_two_samples() {
        let x = Tensor::zeros([1, 2, 2, 2]);
        assert!(ActNorm::new(2).initialize(&x).is_err());
    }
}
