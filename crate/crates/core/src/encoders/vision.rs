//! Residual 3D convolutional vision encoder with configurable stem, stages,
//! and pooling, plus the projection to the shared embedding space.

use crate::error::CoreError;
use crate::nn::{relu, relu_backward, Conv3d, Linear, Param, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StemKind {
    /// 3x3x3, stride 1.
    Standard,
    /// 4x4x4, stride 4: shrinks first-stage spatial volume 64x.
    Lite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingKind {
    Gap,
    Max,
    NoisyOr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisionEncoderConfig {
    pub channels_per_stage: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub stem: StemKind,
    pub pooling: PoolingKind,
    pub embed_dim: usize,
}

impl Default for VisionEncoderConfig {
    fn default() -> Self {
        VisionEncoderConfig {
            channels_per_stage: vec![16, 32],
            blocks_per_stage: vec![1, 1],
            stem: StemKind::Lite,
            pooling: PoolingKind::Gap,
            embed_dim: 64,
        }
    }
}

impl VisionEncoderConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.channels_per_stage.is_empty()
            || self.channels_per_stage.len() != self.blocks_per_stage.len()
        {
            return Err(CoreError::Config(
                "channels_per_stage and blocks_per_stage must be nonempty and equal length".into(),
            ));
        }
        if self.embed_dim == 0 {
            return Err(CoreError::Config("embed_dim must be >= 1".into()));
        }
        if self.channels_per_stage.iter().any(|&c| c == 0)
            || self.blocks_per_stage.iter().any(|&b| b == 0)
        {
            return Err(CoreError::Config("stage sizes must be >= 1".into()));
        }
        Ok(())
    }

    /// Total spatial downsampling factor per axis.
    pub fn total_stride(&self) -> usize {
        let stem = match self.stem {
            StemKind::Standard => 1,
            StemKind::Lite => 4,
        };
        stem * (1 << (self.channels_per_stage.len() - 1))
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv3d,
    conv2: Conv3d,
    skip: Option<Conv3d>,
}

impl ResBlock {
    fn new(cin: usize, cout: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let conv1 = Conv3d::new(cin, cout, 3, stride, 1, rng);
        let conv2 = Conv3d::new(cout, cout, 3, 1, 1, rng);
        let skip = if stride != 1 || cin != cout {
            Some(Conv3d::new(cin, cout, 1, stride, 0, rng))
        } else {
            None
        };
        ResBlock { conv1, conv2, skip }
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, BlockTape), CoreError> {
        let y1 = relu(self.conv1.forward(x)?);
        let z = self.conv2.forward(&y1)?;
        let s = match &self.skip {
            Some(sk) => sk.forward(x)?,
            None => x.clone(),
        };
        let mut pre = z;
        for (p, sv) in pre.data.iter_mut().zip(&s.data) {
            *p += sv;
        }
        let out = relu(pre);
        Ok((
            out.clone(),
            BlockTape {
                x: x.clone(),
                y1,
                out,
            },
        ))
    }

    fn backward(&mut self, tape: &BlockTape, d_out: &Tensor) -> Tensor {
        let d_pre = relu_backward(&tape.out, d_out);
        let d_y1_post = self.conv2.backward(&tape.y1, &d_pre);
        let d_y1 = relu_backward(&tape.y1, &d_y1_post);
        let mut dx = self.conv1.backward(&tape.x, &d_y1);
        match &mut self.skip {
            Some(sk) => {
                let ds = sk.backward(&tape.x, &d_pre);
                for (a, b) in dx.data.iter_mut().zip(&ds.data) {
                    *a += b;
                }
            }
            None => {
                for (a, b) in dx.data.iter_mut().zip(&d_pre.data) {
                    *a += b;
                }
            }
        }
        dx
    }
}

struct BlockTape {
    x: Tensor,
    y1: Tensor,
    out: Tensor,
}

pub struct VisionTape {
    stem_in: Tensor,
    stem_out: Tensor,
    blocks: Vec<BlockTape>,
    /// Last-stage activation (the feature map F).
    pub fmap: Tensor,
    pool: PoolCache,
    pub pooled: Vec<f64>,
    pub embed: Vec<f64>,
}

enum PoolCache {
    Gap,
    Max(Vec<usize>),
    NoisyOr { sig: Tensor, prod: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct VisionEncoder {
    pub cfg: VisionEncoderConfig,
    stem: Conv3d,
    blocks: Vec<ResBlock>,
    pub proj: Linear,
}

impl VisionEncoder {
    pub fn new(cfg: &VisionEncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self, CoreError> {
        cfg.validate()?;
        let stem = match cfg.stem {
            StemKind::Standard => Conv3d::new(1, cfg.channels_per_stage[0], 3, 1, 1, rng),
            StemKind::Lite => Conv3d::new(1, cfg.channels_per_stage[0], 4, 4, 0, rng),
        };
        let mut blocks = Vec::new();
        let mut cin = cfg.channels_per_stage[0];
        for (stage, (&cout, &nblocks)) in cfg
            .channels_per_stage
            .iter()
            .zip(&cfg.blocks_per_stage)
            .enumerate()
        {
            for b in 0..nblocks {
                let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                blocks.push(ResBlock::new(cin, cout, stride, rng));
                cin = cout;
            }
        }
        let proj = Linear::new(cin, cfg.embed_dim, rng);
        Ok(VisionEncoder {
            cfg: cfg.clone(),
            stem,
            blocks,
            proj,
        })
    }

    pub fn feature_channels(&self) -> usize {
        *self.cfg.channels_per_stage.last().unwrap()
    }

    /// Forward pass keeping every intermediate needed for backward.
    pub fn forward_train(&self, x: &Tensor) -> Result<VisionTape, CoreError> {
        if x.shape.len() != 4 || x.shape[0] != 1 {
            return Err(CoreError::DimMismatch(format!(
                "vision input must be [1, D, H, W], got {:?}",
                x.shape
            )));
        }
        let stem_out = relu(self.stem.forward(x)?);
        let mut cur = stem_out.clone();
        let mut tapes = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (out, tape) = b.forward(&cur)?;
            cur = out;
            tapes.push(tape);
        }
        let fmap = cur;
        let (pooled, pool) = self.pool_forward(&fmap);
        let embed = self.proj.forward(&pooled);
        Ok(VisionTape {
            stem_in: x.clone(),
            stem_out,
            blocks: tapes,
            fmap,
            pool,
            pooled,
            embed,
        })
    }

    /// Inference forward: returns the last-stage feature map and the pooled,
    /// projected embedding.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>), CoreError> {
        let tape = self.forward_train(x)?;
        Ok((tape.fmap, tape.embed))
    }

    fn pool_forward(&self, fmap: &Tensor) -> (Vec<f64>, PoolCache) {
        let c = fmap.shape[0];
        let spatial = fmap.numel() / c;
        match self.cfg.pooling {
            PoolingKind::Gap => {
                let mut v = vec![0.0; c];
                for ch in 0..c {
                    let s: f64 = fmap.data[ch * spatial..(ch + 1) * spatial].iter().sum();
                    v[ch] = s / spatial as f64;
                }
                (v, PoolCache::Gap)
            }
            PoolingKind::Max => {
                let mut v = vec![0.0; c];
                let mut arg = vec![0usize; c];
                for ch in 0..c {
                    let slice = &fmap.data[ch * spatial..(ch + 1) * spatial];
                    let (mut bi, mut bv) = (0usize, slice[0]);
                    for (i, &x) in slice.iter().enumerate().skip(1) {
                        if x > bv {
                            bv = x;
                            bi = i;
                        }
                    }
                    v[ch] = bv;
                    arg[ch] = ch * spatial + bi;
                }
                (v, PoolCache::Max(arg))
            }
            PoolingKind::NoisyOr => {
                let mut sig = Tensor::zeros(&fmap.shape);
                let mut prod = vec![1.0; c];
                for ch in 0..c {
                    for i in ch * spatial..(ch + 1) * spatial {
                        let s = crate::nn::sigmoid(fmap.data[i]);
                        sig.data[i] = s;
                        prod[ch] *= 1.0 - s;
                    }
                }
                let v = prod.iter().map(|p| 1.0 - p).collect();
                (v, PoolCache::NoisyOr { sig, prod })
            }
        }
    }

    fn pool_backward(&self, tape: &VisionTape, d_pooled: &[f64]) -> Tensor {
        let fmap = &tape.fmap;
        let c = fmap.shape[0];
        let spatial = fmap.numel() / c;
        let mut df = Tensor::zeros(&fmap.shape);
        match &tape.pool {
            PoolCache::Gap => {
                for ch in 0..c {
                    let g = d_pooled[ch] / spatial as f64;
                    df.data[ch * spatial..(ch + 1) * spatial]
                        .iter_mut()
                        .for_each(|v| *v = g);
                }
            }
            PoolCache::Max(arg) => {
                for ch in 0..c {
                    df.data[arg[ch]] = d_pooled[ch];
                }
            }
            PoolCache::NoisyOr { sig, prod } => {
                for ch in 0..c {
                    let base = d_pooled[ch] * prod[ch];
                    for i in ch * spatial..(ch + 1) * spatial {
                        df.data[i] = base * sig.data[i];
                    }
                }
            }
        }
        df
    }

    /// Backpropagate from the embedding (and optionally an extra gradient on
    /// the feature map, e.g. from a segmentation decoder).
    pub fn backward(&mut self, tape: &VisionTape, d_embed: &[f64], d_fmap: Option<&Tensor>) {
        let d_pooled = self.proj.backward(&tape.pooled, d_embed);
        let mut df = self.pool_backward(tape, &d_pooled);
        if let Some(extra) = d_fmap {
            for (a, b) in df.data.iter_mut().zip(&extra.data) {
                *a += b;
            }
        }
        let mut d = df;
        for (block, tape_b) in self.blocks.iter_mut().zip(&tape.blocks).rev() {
            d = block.backward(tape_b, &d);
        }
        let d_stem = relu_backward(&tape.stem_out, &d);
        let _ = self.stem.backward(&tape.stem_in, &d_stem);
    }

    /// Gradient of a scalar score w.r.t. the feature map, where the score's
    /// gradient w.r.t. the embedding is `d_embed`. Touches no parameter
    /// grads; used by Grad-CAM.
    pub fn fmap_gradient(&self, tape: &VisionTape, d_embed: &[f64]) -> Tensor {
        // Linear backward without accumulating parameter gradients.
        let (o, i) = (self.proj.dim_out(), self.proj.dim_in());
        let mut d_pooled = vec![0.0; i];
        for r in 0..o {
            let g = d_embed[r];
            let wrow = &self.proj.weight.value.data[r * i..(r + 1) * i];
            for (dp, wv) in d_pooled.iter_mut().zip(wrow) {
                *dp += wv * g;
            }
        }
        self.pool_backward(tape, &d_pooled)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = vec![&mut self.stem.weight, &mut self.stem.bias];
        for b in &mut self.blocks {
            v.push(&mut b.conv1.weight);
            v.push(&mut b.conv1.bias);
            v.push(&mut b.conv2.weight);
            v.push(&mut b.conv2.bias);
            if let Some(sk) = &mut b.skip {
                v.push(&mut sk.weight);
                v.push(&mut sk.bias);
            }
        }
        v.push(&mut self.proj.weight);
        v.push(&mut self.proj.bias);
        v
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut v: Vec<(String, &Tensor)> = vec![
            ("stem.weight".into(), &self.stem.weight.value),
            ("stem.bias".into(), &self.stem.bias.value),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            v.push((format!("block{i}.conv1.weight"), &b.conv1.weight.value));
            v.push((format!("block{i}.conv1.bias"), &b.conv1.bias.value));
            v.push((format!("block{i}.conv2.weight"), &b.conv2.weight.value));
            v.push((format!("block{i}.conv2.bias"), &b.conv2.bias.value));
            if let Some(sk) = &b.skip {
                v.push((format!("block{i}.skip.weight"), &sk.weight.value));
                v.push((format!("block{i}.skip.bias"), &sk.bias.value));
            }
        }
        v.push(("proj.weight".into(), &self.proj.weight.value));
        v.push(("proj.bias".into(), &self.proj.bias.value));
        v
    }

    pub fn load_named(&mut self, arrays: &[(String, Tensor)]) -> Result<(), CoreError> {
        let mut slots: Vec<(String, &mut Param)> = vec![
            ("stem.weight".into(), &mut self.stem.weight),
            ("stem.bias".into(), &mut self.stem.bias),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            slots.push((format!("block{i}.conv1.weight"), &mut b.conv1.weight));
            slots.push((format!("block{i}.conv1.bias"), &mut b.conv1.bias));
            slots.push((format!("block{i}.conv2.weight"), &mut b.conv2.weight));
            slots.push((format!("block{i}.conv2.bias"), &mut b.conv2.bias));
            if let Some(sk) = &mut b.skip {
                slots.push((format!("block{i}.skip.weight"), &mut sk.weight));
                slots.push((format!("block{i}.skip.bias"), &mut sk.bias));
            }
        }
        slots.push(("proj.weight".into(), &mut self.proj.weight));
        slots.push(("proj.bias".into(), &mut self.proj.bias));
        load_into_slots(slots, arrays, "vision")
    }
}

pub(crate) fn load_into_slots(
    slots: Vec<(String, &mut Param)>,
    arrays: &[(String, Tensor)],
    what: &str,
) -> Result<(), CoreError> {
    for (name, param) in slots {
        let found = arrays
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| CoreError::Data(format!("{what} checkpoint missing array {name}")))?;
        if found.1.shape != param.value.shape {
            return Err(CoreError::Data(format!(
                "{what} checkpoint array {name}: shape {:?} but model wants {:?}",
                found.1.shape, param.value.shape
            )));
        }
        param.value = found.1.clone();
        param.grad = Tensor::zeros(&param.value.shape);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn desk_cfg(pooling: PoolingKind) -> VisionEncoderConfig {
        VisionEncoderConfig {
            channels_per_stage: vec![4, 8],
            blocks_per_stage: vec![1, 1],
            stem: StemKind::Lite,
            pooling,
            embed_dim: 6,
        }
    }

    #[test]
    fn lite_stem_downsamples_64x_and_shapes_flow() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = VisionEncoder::new(&desk_cfg(PoolingKind::Gap), &mut rng).unwrap();
        let x = Tensor::randn(&[1, 16, 32, 32], 0.5, &mut rng);
        let (fmap, embed) = enc.forward(&x).unwrap();
        // stem 4x -> (4, 8, 8) at 4ch; stage 2 stride 2 -> (2, 4, 4) at 8ch
        assert_eq!(fmap.shape, vec![8, 2, 4, 4]);
        assert_eq!(embed.len(), 6);
        let stem_out_numel = 4 * (16 / 4) * (32 / 4) * (32 / 4);
        assert_eq!(stem_out_numel * 64 / 4, 16 * 32 * 32);
    }

    #[test]
    fn gap_of_constant_feature_map_is_the_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = VisionEncoder::new(&desk_cfg(PoolingKind::Gap), &mut rng).unwrap();
        let mut fmap = Tensor::zeros(&[8, 2, 4, 4]);
        for (i, v) in fmap.data.iter_mut().enumerate() {
            *v = (i / 32) as f64 * 0.5; // constant per channel
        }
        let (pooled, _) = enc.pool_forward(&fmap);
        for (c, &p) in pooled.iter().enumerate() {
            assert!((p - c as f64 * 0.5).abs() < 1e-12);
        }
        // Oracle: naive triple loop mean.
        let mut naive = vec![0.0; 8];
        for c in 0..8 {
            let mut s = 0.0;
            for d in 0..2 {
                for h in 0..4 {
                    for w in 0..4 {
                        s += fmap.data[((c * 2 + d) * 4 + h) * 4 + w];
                    }
                }
            }
            naive[c] = s / 32.0;
        }
        for (a, b) in pooled.iter().zip(&naive) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn max_pooling_picks_spikes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = VisionEncoder::new(&desk_cfg(PoolingKind::Max), &mut rng).unwrap();
        let mut fmap = Tensor::zeros(&[8, 2, 4, 4]);
        for c in 0..8 {
            fmap.data[c * 32 + (c * 3) % 32] = 10.0 + c as f64;
        }
        let (pooled, _) = enc.pool_forward(&fmap);
        for (c, &p) in pooled.iter().enumerate() {
            assert_eq!(p, 10.0 + c as f64);
        }
    }

    #[test]
    fn noisy_or_matches_closed_form_on_tiny_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut cfg = desk_cfg(PoolingKind::NoisyOr);
        cfg.channels_per_stage = vec![2];
        cfg.blocks_per_stage = vec![1];
        cfg.stem = StemKind::Standard;
        let enc = VisionEncoder::new(&cfg, &mut rng).unwrap();
        // 2 channels, 1 spatial position each
        let fmap = Tensor::from_vec(&[2, 1, 1, 1], vec![0.3, -0.7]);
        let (pooled, _) = enc.pool_forward(&fmap);
        let s = |x: f64| 1.0 / (1.0 + (-x).exp());
        assert!((pooled[0] - (1.0 - (1.0 - s(0.3)))).abs() < 1e-12);
        assert!((pooled[1] - (1.0 - (1.0 - s(-0.7)))).abs() < 1e-12);
        // 1 channel, 2 positions: 1 - (1-σ(a))(1-σ(b))
        let fmap2 = Tensor::from_vec(&[1, 2, 1, 1], vec![0.3, -0.7]);
        let mut cfg1 = cfg.clone();
        cfg1.channels_per_stage = vec![1];
        let enc1 = VisionEncoder::new(&cfg1, &mut rng).unwrap();
        let (pooled2, _) = enc1.pool_forward(&fmap2);
        assert!((pooled2[0] - (1.0 - (1.0 - s(0.3)) * (1.0 - s(-0.7)))).abs() < 1e-12);
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        for pooling in [PoolingKind::Gap, PoolingKind::Max, PoolingKind::NoisyOr] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut enc = VisionEncoder::new(&desk_cfg(pooling), &mut rng).unwrap();
            let x = Tensor::randn(&[1, 8, 8, 8], 0.5, &mut rng);
            let r: Vec<f64> = (0..6).map(|i| 0.3 * (i as f64) - 0.8).collect();
            let tape = enc.forward_train(&x).unwrap();
            enc.backward(&tape, &r, None);
            let loss = |e: &VisionEncoder| {
                let t = e.forward_train(&x).unwrap();
                crate::nn::dot(&t.embed, &r)
            };
            let eps = 1e-6;
            // check a selection of parameters across layers
            let grads: Vec<f64> = {
                let mut e2 = enc.clone();
                e2.params_mut()
                    .iter()
                    .flat_map(|p| p.grad.data.clone())
                    .collect()
            };
            let mut flat_idx = 0usize;
            let n_params = {
                let mut e2 = enc.clone();
                e2.params_mut().len()
            };
            for pi in 0..n_params {
                let plen = {
                    let mut e2 = enc.clone();
                    e2.params_mut()[pi].value.data.len()
                };
                for &j in &[0usize, plen / 2] {
                    let mut ep = enc.clone();
                    ep.params_mut()[pi].value.data[j] += eps;
                    let mut em = enc.clone();
                    em.params_mut()[pi].value.data[j] -= eps;
                    let fd = (loss(&ep) - loss(&em)) / (2.0 * eps);
                    let an = grads[flat_idx + j];
                    assert!(
                        (an - fd).abs() / fd.abs().max(1.0) < 1e-5,
                        "{pooling:?} param {pi}[{j}]: {an} vs {fd}"
                    );
                }
                flat_idx += plen;
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let enc = VisionEncoder::new(&desk_cfg(PoolingKind::Gap), &mut rng).unwrap();
        let x = Tensor::randn(&[1, 8, 8, 8], 0.5, &mut rng);
        let (_, e1) = enc.forward(&x).unwrap();
        let (_, e2) = enc.forward(&x).unwrap();
        assert_eq!(e1, e2);
    }

    #[test]
    fn named_params_round_trip_through_load() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let enc = VisionEncoder::new(&desk_cfg(PoolingKind::Gap), &mut rng).unwrap();
        let arrays: Vec<(String, Tensor)> = enc
            .named_params()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        let mut enc2 = VisionEncoder::new(&desk_cfg(PoolingKind::Gap), &mut rng).unwrap();
        enc2.load_named(&arrays).unwrap();
        let x = Tensor::randn(&[1, 8, 8, 8], 0.5, &mut rng);
        assert_eq!(enc.forward(&x).unwrap().1, enc2.forward(&x).unwrap().1);
    }
}
