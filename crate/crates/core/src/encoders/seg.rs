//! Lightweight transposed-convolution decoder producing per-voxel anatomy
//! class logits at input resolution.

use crate::error::CoreError;
use crate::nn::{relu, relu_backward, ConvTranspose3d, Param, Tensor};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SegDecoder {
    deconvs: Vec<ConvTranspose3d>,
    pub n_classes: usize,
    pub upsample: usize,
}

pub struct SegTape {
    inputs: Vec<Tensor>,
    activations: Vec<Tensor>, // post-relu outputs of all but the last layer
    pub logits: Tensor,
}

impl SegDecoder {
    /// `upsample` must be a power of two; each 2x step is one k2s2 deconv,
    /// halving channels down to `n_classes` at the last layer.
    pub fn new(
        in_channels: usize,
        n_classes: usize,
        upsample: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, CoreError> {
        if !upsample.is_power_of_two() || upsample < 2 {
            return Err(CoreError::Config(format!(
                "seg decoder upsample factor must be a power of two >= 2, got {upsample}"
            )));
        }
        let steps = upsample.trailing_zeros() as usize;
        let mut deconvs = Vec::with_capacity(steps);
        let mut cin = in_channels;
        for s in 0..steps {
            let cout = if s + 1 == steps {
                n_classes
            } else {
                (cin / 2).max(n_classes.min(4))
            };
            deconvs.push(ConvTranspose3d::new(cin, cout, 2, 2, rng));
            cin = cout;
        }
        Ok(SegDecoder {
            deconvs,
            n_classes,
            upsample,
        })
    }

    pub fn forward_train(&self, fmap: &Tensor) -> SegTape {
        let mut inputs = Vec::with_capacity(self.deconvs.len());
        let mut activations = Vec::new();
        let mut cur = fmap.clone();
        for (i, dc) in self.deconvs.iter().enumerate() {
            inputs.push(cur.clone());
            let out = dc.forward(&cur);
            cur = if i + 1 == self.deconvs.len() {
                out
            } else {
                let a = relu(out);
                activations.push(a.clone());
                a
            };
        }
        SegTape {
            inputs,
            activations,
            logits: cur,
        }
    }

    pub fn forward(&self, fmap: &Tensor) -> Tensor {
        self.forward_train(fmap).logits
    }

    /// Returns the gradient w.r.t. the encoder feature map.
    pub fn backward(&mut self, tape: &SegTape, d_logits: &Tensor) -> Tensor {
        let n = self.deconvs.len();
        let mut d = d_logits.clone();
        for i in (0..n).rev() {
            if i + 1 != n {
                d = relu_backward(&tape.activations[i], &d);
            }
            d = self.deconvs[i].backward(&tape.inputs[i], &d);
        }
        d
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for dc in &mut self.deconvs {
            v.push(&mut dc.weight);
            v.push(&mut dc.bias);
        }
        v
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut v = Vec::new();
        for (i, dc) in self.deconvs.iter().enumerate() {
            v.push((format!("deconv{i}.weight"), &dc.weight.value));
            v.push((format!("deconv{i}.bias"), &dc.bias.value));
        }
        v
    }

    pub fn load_named(&mut self, arrays: &[(String, Tensor)]) -> Result<(), CoreError> {
        let mut slots = Vec::new();
        for (i, dc) in self.deconvs.iter_mut().enumerate() {
            slots.push((format!("deconv{i}.weight"), &mut dc.weight));
            slots.push((format!("deconv{i}.bias"), &mut dc.bias));
        }
        super::vision::load_into_slots(slots, arrays, "seg-decoder")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn decoder_restores_input_resolution_with_class_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dec = SegDecoder::new(8, 5, 8, &mut rng).unwrap();
        let fmap = Tensor::randn(&[8, 2, 4, 4], 1.0, &mut rng);
        let logits = dec.forward(&fmap);
        assert_eq!(logits.shape, vec![5, 16, 32, 32]);
    }

    #[test]
    fn random_init_logits_give_high_softmax_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dec = SegDecoder::new(8, 4, 4, &mut rng).unwrap();
        let fmap = Tensor::randn(&[8, 2, 4, 4], 0.5, &mut rng);
        let logits = dec.forward(&fmap);
        let k = 4usize;
        let spatial = logits.numel() / k;
        let mut total_entropy = 0.0;
        for v in 0..spatial {
            let row: Vec<f64> = (0..k).map(|c| logits.data[c * spatial + v]).collect();
            let lse = crate::nn::log_sum_exp(&row);
            let entropy: f64 = row
                .iter()
                .map(|&x| {
                    let p = (x - lse).exp();
                    if p > 0.0 {
                        -p * p.ln()
                    } else {
                        0.0
                    }
                })
                .sum();
            total_entropy += entropy;
        }
        let mean_entropy = total_entropy / spatial as f64;
        // near-uniform: entropy close to ln(4)
        assert!(mean_entropy > 0.8 * (k as f64).ln(), "{mean_entropy}");
    }

    #[test]
    fn decoder_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut dec = SegDecoder::new(4, 3, 4, &mut rng).unwrap();
        let fmap = Tensor::randn(&[4, 2, 2, 2], 0.7, &mut rng);
        let tape = dec.forward_train(&fmap);
        let r = Tensor::randn(&tape.logits.shape, 1.0, &mut rng);
        let df = dec.backward(&tape, &r);
        let loss = |d: &SegDecoder, x: &Tensor| crate::nn::dot(&d.forward(x).data, &r.data);
        let eps = 1e-6;
        for &i in &[0usize, 7, fmap.data.len() - 1] {
            let mut xp = fmap.clone();
            xp.data[i] += eps;
            let mut xm = fmap.clone();
            xm.data[i] -= eps;
            let fd = (loss(&dec, &xp) - loss(&dec, &xm)) / (2.0 * eps);
            assert!((df.data[i] - fd).abs() / fd.abs().max(1.0) < 1e-6);
        }
        let grads: Vec<f64> = {
            let mut d2 = dec.clone();
            d2.params_mut().iter().flat_map(|p| p.grad.data.clone()).collect()
        };
        let mut off = 0;
        let nparams = {
            let mut d2 = dec.clone();
            d2.params_mut().len()
        };
        for pi in 0..nparams {
            let plen = {
                let mut d2 = dec.clone();
                d2.params_mut()[pi].value.data.len()
            };
            let j = plen / 2;
            let mut dp = dec.clone();
            dp.params_mut()[pi].value.data[j] += eps;
            let mut dm = dec.clone();
            dm.params_mut()[pi].value.data[j] -= eps;
            let fd = (loss(&dp, &fmap) - loss(&dm, &fmap)) / (2.0 * eps);
            assert!((grads[off + j] - fd).abs() / fd.abs().max(1.0) < 1e-6, "param {pi}");
            off += plen;
        }
    }
}
