//! AdamW with decoupled weight decay and constant learning rate.

use crate::nn::tensor::{Param, Tensor};

/// Scale all gradients so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm(params: &mut [&mut Param], max_norm: f64) {
    let mut sq = 0.0;
    for p in params.iter() {
        for g in &p.grad.data {
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for p in params.iter_mut() {
            for g in &mut p.grad.data {
                *g *= scale;
            }
        }
    }
}

pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Apply one update. Parameters must be passed in the same order on every
    /// call; moment buffers are allocated lazily on the first step.
    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(&p.value.shape)).collect();
            self.v = params.iter().map(|p| Tensor::zeros(&p.value.shape)).collect();
        }
        assert_eq!(self.m.len(), params.len(), "parameter set changed size");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let m = &mut self.m[i].data;
            let v = &mut self.v[i].data;
            for ((x, g), (mi, vi)) in p
                .value
                .data
                .iter_mut()
                .zip(&p.grad.data)
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *x -= self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * *x);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descends_a_quadratic() {
        // Minimize (x - 3)^2.
        let mut p = Param::new(Tensor::from_vec(&[1], vec![0.0]));
        let mut opt = AdamW::new(0.1, 0.0);
        for _ in 0..200 {
            p.zero_grad();
            p.grad.data[0] = 2.0 * (p.value.data[0] - 3.0);
            opt.step(&mut [&mut p]);
        }
        assert!((p.value.data[0] - 3.0).abs() < 1e-2);
    }

    #[test]
    fn weight_decay_shrinks_parameters() {
        let mut p = Param::new(Tensor::from_vec(&[1], vec![1.0]));
        let mut opt = AdamW::new(0.01, 0.5);
        for _ in 0..10 {
            p.zero_grad(); // zero gradient: only decay acts
            opt.step(&mut [&mut p]);
        }
        assert!(p.value.data[0] < 1.0);
    }
}
