//! Affine layers and layer normalization over row vectors.

use crate::nn::tensor::{Param, Tensor};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param, // [out, in]
    pub bias: Param,   // [out]
}

impl Linear {
    pub fn new(dim_in: usize, dim_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (1.0 / dim_in as f64).sqrt();
        Linear {
            weight: Param::new(Tensor::randn(&[dim_out, dim_in], std, rng)),
            bias: Param::new(Tensor::zeros(&[dim_out])),
        }
    }

    pub fn dim_in(&self) -> usize {
        self.weight.value.shape[1]
    }

    pub fn dim_out(&self) -> usize {
        self.weight.value.shape[0]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let (o, i) = (self.dim_out(), self.dim_in());
        debug_assert_eq!(x.len(), i);
        let mut y = self.bias.value.data.clone();
        for (r, yr) in y.iter_mut().enumerate() {
            *yr += crate::nn::tensor::dot(&self.weight.value.data[r * i..(r + 1) * i], x);
        }
        debug_assert_eq!(y.len(), o);
        y
    }

    /// Rows of `x` are independent samples: `[n, in] -> [n, out]`.
    pub fn forward_rows(&self, x: &Tensor) -> Tensor {
        let n = x.shape[0];
        let mut out = Tensor::zeros(&[n, self.dim_out()]);
        for r in 0..n {
            let y = self.forward(&x.data[r * self.dim_in()..(r + 1) * self.dim_in()]);
            out.data[r * self.dim_out()..(r + 1) * self.dim_out()].copy_from_slice(&y);
        }
        out
    }

    /// Accumulates parameter grads; returns grad w.r.t. `x`.
    pub fn backward(&mut self, x: &[f64], dy: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.dim_in()];
        self.backward_into(x, dy, &mut dx);
        dx
    }

    fn backward_into(&mut self, x: &[f64], dy: &[f64], dx: &mut [f64]) {
        let (o, i) = (self.dim_out(), self.dim_in());
        for r in 0..o {
            let g = dy[r];
            self.bias.grad.data[r] += g;
            let wrow = &self.weight.value.data[r * i..(r + 1) * i];
            let gwrow = &mut self.weight.grad.data[r * i..(r + 1) * i];
            for idx in 0..i {
                dx[idx] += wrow[idx] * g;
                gwrow[idx] += g * x[idx];
            }
        }
    }

    pub fn backward_rows(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let n = x.shape[0];
        let mut dx = Tensor::zeros(&x.shape);
        for r in 0..n {
            let mut row = vec![0.0; self.dim_in()];
            self.backward_into(
                &x.data[r * self.dim_in()..(r + 1) * self.dim_in()],
                &dy.data[r * self.dim_out()..(r + 1) * self.dim_out()],
                &mut row,
            );
            dx.data[r * self.dim_in()..(r + 1) * self.dim_in()].copy_from_slice(&row);
        }
        dx
    }
}

/// Per-row layer normalization with learned scale/shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
}

pub struct LayerNormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Param::new(Tensor::from_vec(&[dim], vec![1.0; dim])),
            beta: Param::new(Tensor::zeros(&[dim])),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, LayerNormCache) {
        let (n, d) = (x.shape[0], x.shape[1]);
        let mut out = Tensor::zeros(&[n, d]);
        let mut xhat = Tensor::zeros(&[n, d]);
        let mut inv_std = vec![0.0; n];
        for r in 0..n {
            let row = &x.data[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[r] = istd;
            for c in 0..d {
                let xh = (row[c] - mean) * istd;
                xhat.data[r * d + c] = xh;
                out.data[r * d + c] = self.gamma.value.data[c] * xh + self.beta.value.data[c];
            }
        }
        (out, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Tensor) -> Tensor {
        let (n, d) = (dy.shape[0], dy.shape[1]);
        let mut dx = Tensor::zeros(&[n, d]);
        for r in 0..n {
            let xh = &cache.xhat.data[r * d..(r + 1) * d];
            let dyr = &dy.data[r * d..(r + 1) * d];
            let mut sum_g = 0.0; // mean of gamma*dy
            let mut sum_gx = 0.0; // mean of gamma*dy*xhat
            for c in 0..d {
                let g = self.gamma.value.data[c] * dyr[c];
                sum_g += g;
                sum_gx += g * xh[c];
                self.gamma.grad.data[c] += dyr[c] * xh[c];
                self.beta.grad.data[c] += dyr[c];
            }
            let m_g = sum_g / d as f64;
            let m_gx = sum_gx / d as f64;
            let istd = cache.inv_std[r];
            for c in 0..d {
                let g = self.gamma.value.data[c] * dyr[c];
                dx.data[r * d + c] = istd * (g - m_g - xh[c] * m_gx);
            }
        }
        dx
    }
}
