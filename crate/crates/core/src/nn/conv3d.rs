//! 3D convolution and transposed convolution with hand-written backward
//! passes. Tensors are laid out `[C, D, H, W]`, row-major.

use crate::error::CoreError;
use crate::nn::tensor::{Param, Tensor};
use rand_chacha::ChaCha8Rng;

/// Valid output index range along one axis for a given kernel offset, so the
/// inner loops never touch out-of-bounds input.
#[inline]
fn out_range(out_len: usize, in_len: usize, k_off: usize, stride: usize, pad: usize) -> Option<(usize, usize)> {
    let lo = if pad > k_off {
        (pad - k_off + stride - 1) / stride
    } else {
        0
    };
    let hi_num = in_len as isize - 1 + pad as isize - k_off as isize;
    if hi_num < 0 {
        return None;
    }
    let hi = (hi_num as usize / stride).min(out_len - 1);
    if lo > hi {
        None
    } else {
        Some((lo, hi))
    }
}

#[derive(Debug, Clone)]
pub struct Conv3d {
    pub weight: Param, // [cout, cin, k, k, k]
    pub bias: Param,   // [cout]
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv3d {
    /// He-style init: N(0, sqrt(2 / fan_in)).
    pub fn new(cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (cin * kernel * kernel * kernel) as f64;
        let std = (2.0 / fan_in).sqrt();
        Conv3d {
            weight: Param::new(Tensor::randn(&[cout, cin, kernel, kernel, kernel], std, rng)),
            bias: Param::new(Tensor::zeros(&[cout])),
            kernel,
            stride,
            pad,
        }
    }

    pub fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>, CoreError> {
        let (cin, d, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
        if cin != self.weight.value.shape[1] {
            return Err(CoreError::DimMismatch(format!(
                "conv expects {} input channels, got {cin}",
                self.weight.value.shape[1]
            )));
        }
        let o = |n: usize| -> Result<usize, CoreError> {
            let num = n + 2 * self.pad;
            if num < self.kernel {
                return Err(CoreError::DimMismatch(format!(
                    "spatial dim {n} collapses under kernel {} stride {}",
                    self.kernel, self.stride
                )));
            }
            Ok((num - self.kernel) / self.stride + 1)
        };
        Ok(vec![self.weight.value.shape[0], o(d)?, o(h)?, o(w)?])
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, CoreError> {
        let os = self.out_shape(&x.shape)?;
        let (cout, cin, k, s, p) = (
            os[0],
            x.shape[0],
            self.kernel,
            self.stride,
            self.pad,
        );
        let (di, hi, wi) = (x.shape[1], x.shape[2], x.shape[3]);
        let (do_, ho, wo) = (os[1], os[2], os[3]);
        let mut out = Tensor::zeros(&os);
        let wdat = &self.weight.value.data;
        for co in 0..cout {
            let b = self.bias.value.data[co];
            out.data[co * do_ * ho * wo..(co + 1) * do_ * ho * wo]
                .iter_mut()
                .for_each(|v| *v = b);
            for ci in 0..cin {
                for kd in 0..k {
                    let Some((dlo, dhi)) = out_range(do_, di, kd, s, p) else { continue };
                    for kh in 0..k {
                        let Some((hlo, hhi)) = out_range(ho, hi, kh, s, p) else { continue };
                        for kw in 0..k {
                            let Some((wlo, whi)) = out_range(wo, wi, kw, s, p) else { continue };
                            let wv = wdat[(((co * cin + ci) * k + kd) * k + kh) * k + kw];
                            for od in dlo..=dhi {
                                let id = od * s + kd - p;
                                for oh in hlo..=hhi {
                                    let ih = oh * s + kh - p;
                                    let in_off = ((ci * di + id) * hi + ih) * wi;
                                    let out_off = ((co * do_ + od) * ho + oh) * wo;
                                    if s == 1 {
                                        let iw0 = wlo + kw - p;
                                        let len = whi - wlo + 1;
                                        let src = &x.data[in_off + iw0..in_off + iw0 + len];
                                        let dst = &mut out.data[out_off + wlo..out_off + wlo + len];
                                        for (d, sv) in dst.iter_mut().zip(src) {
                                            *d += wv * sv;
                                        }
                                    } else {
                                        for ow in wlo..=whi {
                                            let iw = ow * s + kw - p;
                                            out.data[out_off + ow] += wv * x.data[in_off + iw];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Accumulates weight/bias grads, returns grad w.r.t. input.
    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let (cout, cin, k, s, p) = (
            self.weight.value.shape[0],
            x.shape[0],
            self.kernel,
            self.stride,
            self.pad,
        );
        let (di, hi, wi) = (x.shape[1], x.shape[2], x.shape[3]);
        let (do_, ho, wo) = (dy.shape[1], dy.shape[2], dy.shape[3]);
        let mut dx = Tensor::zeros(&x.shape);
        let wdat = &self.weight.value.data;
        for co in 0..cout {
            let mut db = 0.0;
            for v in &dy.data[co * do_ * ho * wo..(co + 1) * do_ * ho * wo] {
                db += v;
            }
            self.bias.grad.data[co] += db;
            for ci in 0..cin {
                for kd in 0..k {
                    let Some((dlo, dhi)) = out_range(do_, di, kd, s, p) else { continue };
                    for kh in 0..k {
                        let Some((hlo, hhi)) = out_range(ho, hi, kh, s, p) else { continue };
                        for kw in 0..k {
                            let Some((wlo, whi)) = out_range(wo, wi, kw, s, p) else { continue };
                            let widx = (((co * cin + ci) * k + kd) * k + kh) * k + kw;
                            let wv = wdat[widx];
                            let mut dw = 0.0;
                            for od in dlo..=dhi {
                                let id = od * s + kd - p;
                                for oh in hlo..=hhi {
                                    let ih = oh * s + kh - p;
                                    let in_off = ((ci * di + id) * hi + ih) * wi;
                                    let out_off = ((co * do_ + od) * ho + oh) * wo;
                                    if s == 1 {
                                        let iw0 = wlo + kw - p;
                                        let len = whi - wlo + 1;
                                        let xs = &x.data[in_off + iw0..in_off + iw0 + len];
                                        let dys = &dy.data[out_off + wlo..out_off + wlo + len];
                                        let dxs = &mut dx.data[in_off + iw0..in_off + iw0 + len];
                                        for ((xv, dyv), dxv) in
                                            xs.iter().zip(dys).zip(dxs.iter_mut())
                                        {
                                            dw += dyv * xv;
                                            *dxv += wv * dyv;
                                        }
                                    } else {
                                        for ow in wlo..=whi {
                                            let iw = ow * s + kw - p;
                                            let dyv = dy.data[out_off + ow];
                                            dw += dyv * x.data[in_off + iw];
                                            dx.data[in_off + iw] += wv * dyv;
                                        }
                                    }
                                }
                            }
                            self.weight.grad.data[widx] += dw;
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Transposed convolution (no padding), `out = (in - 1) * stride + kernel`.
#[derive(Debug, Clone)]
pub struct ConvTranspose3d {
    pub weight: Param, // [cin, cout, k, k, k]
    pub bias: Param,   // [cout]
    pub kernel: usize,
    pub stride: usize,
}

impl ConvTranspose3d {
    pub fn new(cin: usize, cout: usize, kernel: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (cin * kernel * kernel * kernel) as f64;
        let std = (2.0 / fan_in).sqrt();
        ConvTranspose3d {
            weight: Param::new(Tensor::randn(&[cin, cout, kernel, kernel, kernel], std, rng)),
            bias: Param::new(Tensor::zeros(&[cout])),
            kernel,
            stride,
        }
    }

    pub fn out_shape(&self, in_shape: &[usize]) -> Vec<usize> {
        let o = |n: usize| (n - 1) * self.stride + self.kernel;
        vec![
            self.weight.value.shape[1],
            o(in_shape[1]),
            o(in_shape[2]),
            o(in_shape[3]),
        ]
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let os = self.out_shape(&x.shape);
        let (cin, cout, k, s) = (
            x.shape[0],
            os[0],
            self.kernel,
            self.stride,
        );
        let (di, hi, wi) = (x.shape[1], x.shape[2], x.shape[3]);
        let (do_, ho, wo) = (os[1], os[2], os[3]);
        let mut out = Tensor::zeros(&os);
        for co in 0..cout {
            let b = self.bias.value.data[co];
            out.data[co * do_ * ho * wo..(co + 1) * do_ * ho * wo]
                .iter_mut()
                .for_each(|v| *v = b);
        }
        for ci in 0..cin {
            for co in 0..cout {
                for kd in 0..k {
                    for kh in 0..k {
                        for kw in 0..k {
                            let wv = self.weight.value.data
                                [(((ci * cout + co) * k + kd) * k + kh) * k + kw];
                            for id in 0..di {
                                let od = id * s + kd;
                                for ih in 0..hi {
                                    let oh = ih * s + kh;
                                    let in_off = ((ci * di + id) * hi + ih) * wi;
                                    let out_off = ((co * do_ + od) * ho + oh) * wo + kw;
                                    for iw in 0..wi {
                                        out.data[out_off + iw * s] += wv * x.data[in_off + iw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let (cin, cout, k, s) = (
            x.shape[0],
            self.weight.value.shape[1],
            self.kernel,
            self.stride,
        );
        let (di, hi, wi) = (x.shape[1], x.shape[2], x.shape[3]);
        let (do_, ho, wo) = (dy.shape[1], dy.shape[2], dy.shape[3]);
        let mut dx = Tensor::zeros(&x.shape);
        for co in 0..cout {
            let mut db = 0.0;
            for v in &dy.data[co * do_ * ho * wo..(co + 1) * do_ * ho * wo] {
                db += v;
            }
            self.bias.grad.data[co] += db;
        }
        for ci in 0..cin {
            for co in 0..cout {
                for kd in 0..k {
                    for kh in 0..k {
                        for kw in 0..k {
                            let widx = (((ci * cout + co) * k + kd) * k + kh) * k + kw;
                            let wv = self.weight.value.data[widx];
                            let mut dw = 0.0;
                            for id in 0..di {
                                let od = id * s + kd;
                                for ih in 0..hi {
                                    let oh = ih * s + kh;
                                    let in_off = ((ci * di + id) * hi + ih) * wi;
                                    let out_off = ((co * do_ + od) * ho + oh) * wo + kw;
                                    for iw in 0..wi {
                                        let dyv = dy.data[out_off + iw * s];
                                        dw += dyv * x.data[in_off + iw];
                                        dx.data[in_off + iw] += wv * dyv;
                                    }
                                }
                            }
                            self.weight.grad.data[widx] += dw;
                        }
                    }
                }
            }
        }
        dx
    }
}

/// In-place ReLU returning the output; backward masks by `y > 0`.
pub fn relu(mut x: Tensor) -> Tensor {
    x.data.iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0;
        }
    });
    x
}

/// d_input = d_output where y > 0.
pub fn relu_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, yv) in dx.data.iter_mut().zip(&y.data) {
        if *yv <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::dot;
    use rand::SeedableRng;

    fn fd_check_conv(stride: usize, pad: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut conv = Conv3d::new(2, 3, 3, stride, pad, &mut rng);
        let x = Tensor::randn(&[2, 5, 6, 7], 1.0, &mut rng);
        let y = conv.forward(&x).unwrap();
        let r = Tensor::randn(&y.shape, 1.0, &mut rng);
        // Loss = <conv(x), r>; analytic grads.
        let dx = conv.backward(&x, &r);
        let loss = |c: &Conv3d, xin: &Tensor| dot(&c.forward(xin).unwrap().data, &r.data);
        let eps = 1e-6;
        // A few random coordinates of x, weight, bias.
        for &i in &[0usize, 17, 99, x.data.len() - 1] {
            let mut xp = x.clone();
            xp.data[i] += eps;
            let mut xm = x.clone();
            xm.data[i] -= eps;
            let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * eps);
            assert!(
                (dx.data[i] - fd).abs() / fd.abs().max(1.0) < 1e-6,
                "dx[{i}]: {} vs {fd}",
                dx.data[i]
            );
        }
        for &i in &[0usize, 31, conv.weight.value.data.len() - 1] {
            let mut cp = conv.clone();
            cp.weight.value.data[i] += eps;
            let mut cm = conv.clone();
            cm.weight.value.data[i] -= eps;
            let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * eps);
            let an = conv.weight.grad.data[i];
            assert!((an - fd).abs() / fd.abs().max(1.0) < 1e-6, "dw[{i}]: {an} vs {fd}");
        }
        for i in 0..conv.bias.value.data.len() {
            let mut cp = conv.clone();
            cp.bias.value.data[i] += eps;
            let mut cm = conv.clone();
            cm.bias.value.data[i] -= eps;
            let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * eps);
            let an = conv.bias.grad.data[i];
            assert!((an - fd).abs() / fd.abs().max(1.0) < 1e-6, "db[{i}]: {an} vs {fd}");
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        fd_check_conv(1, 1);
        fd_check_conv(2, 1);
        fd_check_conv(2, 0);
    }

    #[test]
    fn conv_identity_kernel_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut conv = Conv3d::new(1, 1, 1, 1, 0, &mut rng);
        conv.weight.value.data[0] = 1.0;
        conv.bias.value.data[0] = 0.0;
        let x = Tensor::randn(&[1, 3, 3, 3], 1.0, &mut rng);
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.data, x.data);
    }

    #[test]
    fn conv_shape_errors_when_collapsed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv3d::new(1, 1, 5, 1, 0, &mut rng);
        let x = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(conv.forward(&x).is_err());
    }

    #[test]
    fn deconv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut dc = ConvTranspose3d::new(3, 2, 2, 2, &mut rng);
        let x = Tensor::randn(&[3, 2, 3, 4], 1.0, &mut rng);
        let y = dc.forward(&x);
        assert_eq!(y.shape, vec![2, 4, 6, 8]);
        let r = Tensor::randn(&y.shape, 1.0, &mut rng);
        let dx = dc.backward(&x, &r);
        let loss = |c: &ConvTranspose3d, xin: &Tensor| dot(&c.forward(xin).data, &r.data);
        let eps = 1e-6;
        for &i in &[0usize, 20, x.data.len() - 1] {
            let mut xp = x.clone();
            xp.data[i] += eps;
            let mut xm = x.clone();
            xm.data[i] -= eps;
            let fd = (loss(&dc, &xp) - loss(&dc, &xm)) / (2.0 * eps);
            assert!((dx.data[i] - fd).abs() / fd.abs().max(1.0) < 1e-6);
        }
        for &i in &[0usize, 13, dc.weight.value.data.len() - 1] {
            let mut cp = dc.clone();
            cp.weight.value.data[i] += eps;
            let mut cm = dc.clone();
            cm.weight.value.data[i] -= eps;
            let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * eps);
            assert!((dc.weight.grad.data[i] - fd).abs() / fd.abs().max(1.0) < 1e-6);
        }
    }

    #[test]
    fn relu_and_backward_mask() {
        let x = Tensor::from_vec(&[4], vec![-1.0, 0.0, 2.0, -0.5]);
        let y = relu(x);
        assert_eq!(y.data, vec![0.0, 0.0, 2.0, 0.0]);
        let dy = Tensor::from_vec(&[4], vec![1.0, 1.0, 1.0, 1.0]);
        let dx = relu_backward(&y, &dy);
        assert_eq!(dx.data, vec![0.0, 0.0, 1.0, 0.0]);
    }
}
