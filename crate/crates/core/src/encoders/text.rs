//! Report text encoder: corpus-built word tokenizer plus a small transformer
//! whose CLS hidden state is projected into the shared embedding space.

use crate::error::CoreError;
use crate::nn::linear::LayerNormCache;
use crate::nn::{relu, relu_backward, LayerNorm, Linear, Mhsa, MhsaCache, Param, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;
const SPECIALS: [&str; 3] = ["[PAD]", "[CLS]", "[UNK]"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextEncoderConfig {
    pub vocab_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub hidden_dim: usize,
    pub max_tokens: usize,
    pub embed_dim: usize,
    pub cls_token_id: u32,
    /// Training-time dropout on embeddings and residual branches.
    #[serde(default)]
    pub dropout: f64,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        TextEncoderConfig {
            vocab_size: 0, // filled from the tokenizer
            layers: 2,
            heads: 4,
            hidden_dim: 64,
            max_tokens: 64,
            embed_dim: 64,
            cls_token_id: CLS_ID,
            dropout: 0.0,
        }
    }
}

impl TextEncoderConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.hidden_dim % self.heads != 0 {
            return Err(CoreError::Config(format!(
                "hidden_dim {} must be divisible by heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if self.vocab_size < 3 || self.layers == 0 || self.max_tokens < 1 || self.embed_dim == 0 {
            return Err(CoreError::Config("invalid text encoder config".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::Config("dropout must be in [0,1)".into()));
        }
        Ok(())
    }
}

/// Whitespace + punctuation word tokenizer over a corpus-built vocabulary.
/// Serialized as its word list (checkpoints carry `words` in their meta).
#[derive(Debug, Clone, PartialEq)]
pub struct Tokenizer {
    pub words: Vec<String>,
    map: HashMap<String, u32>,
}

impl Tokenizer {
    /// Build the vocabulary from corpus reports: specials first, then words
    /// by descending frequency (ties alphabetic).
    pub fn build<'a>(reports: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for r in reports {
            for w in split_words(r) {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
        let mut by_freq: Vec<(String, u64)> = counts.into_iter().collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut words: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        words.extend(by_freq.into_iter().map(|(w, _)| w));
        Self::from_words(words)
    }

    pub fn from_words(words: Vec<String>) -> Self {
        let map = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Tokenizer { words, map }
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn word_id(&self, w: &str) -> u32 {
        *self.map.get(w).unwrap_or(&UNK_ID)
    }

    /// `[CLS] + body`, truncated to `max_tokens`.
    pub fn encode(&self, text: &str, max_tokens: usize) -> Vec<u32> {
        let mut ids = vec![CLS_ID];
        for w in split_words(text) {
            if ids.len() >= max_tokens {
                break;
            }
            ids.push(self.word_id(&w));
        }
        ids
    }
}

/// Lowercased alphanumeric runs; punctuation as single-char tokens.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        let c = ch.to_ascii_lowercase();
        if c.is_alphanumeric() {
            cur.push(c);
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !c.is_whitespace() {
                out.push(c.to_string());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Inverted dropout: keeps with probability 1-p and rescales; the mask is
/// reused in backward.
fn dropout_mask(shape: &[usize], p: f64, rng: &mut ChaCha8Rng) -> Tensor {
    use rand::Rng;
    let mut m = Tensor::zeros(shape);
    let keep = 1.0 - p;
    for v in &mut m.data {
        *v = if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 };
    }
    m
}

fn apply_mask(x: &mut Tensor, m: &Tensor) {
    for (a, b) in x.data.iter_mut().zip(&m.data) {
        *a *= b;
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: Mhsa,
    ln1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    ln2: LayerNorm,
}

struct LayerTape {
    ln1_in: Tensor,
    ln1: LayerNormCache,
    x1: Tensor,
    attn: MhsaCache,
    attn_mask: Option<Tensor>,
    r1: Tensor,
    ln2: LayerNormCache,
    x2: Tensor,
    f1r: Tensor,
    ff_mask: Option<Tensor>,
}

impl EncoderLayer {
    fn new(hidden: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        EncoderLayer {
            attn: Mhsa::new(hidden, heads, rng),
            ln1: LayerNorm::new(hidden),
            ff1: Linear::new(hidden, hidden * 4, rng),
            ff2: Linear::new(hidden * 4, hidden, rng),
            ln2: LayerNorm::new(hidden),
        }
    }

    // Pre-LN residual form: x + attn(LN(x)), then x + ff(LN(x)).
    fn forward(
        &self,
        x: &Tensor,
        valid: &[bool],
        mut drop: Option<(f64, &mut ChaCha8Rng)>,
    ) -> (Tensor, LayerTape) {
        let (x1, ln1_cache) = self.ln1.forward(x);
        let (mut a, attn_cache) = self.attn.forward(&x1, valid);
        let attn_mask = drop.as_mut().map(|(p, rng)| dropout_mask(&a.shape, *p, rng));
        if let Some(m) = &attn_mask {
            apply_mask(&mut a, m);
        }
        let mut r1 = x.clone();
        for (v, av) in r1.data.iter_mut().zip(&a.data) {
            *v += av;
        }
        let (x2, ln2_cache) = self.ln2.forward(&r1);
        let f1 = self.ff1.forward_rows(&x2);
        let f1r = relu(f1);
        let mut f2 = self.ff2.forward_rows(&f1r);
        let ff_mask = drop.as_mut().map(|(p, rng)| dropout_mask(&f2.shape, *p, rng));
        if let Some(m) = &ff_mask {
            apply_mask(&mut f2, m);
        }
        let mut out = r1.clone();
        for (v, fv) in out.data.iter_mut().zip(&f2.data) {
            *v += fv;
        }
        (
            out,
            LayerTape {
                ln1_in: x.clone(),
                ln1: ln1_cache,
                x1,
                attn: attn_cache,
                attn_mask,
                r1,
                ln2: ln2_cache,
                x2,
                f1r,
                ff_mask,
            },
        )
    }

    fn backward(&mut self, tape: &LayerTape, d_out: &Tensor) -> Tensor {
        // ff branch
        let mut d_f2 = d_out.clone();
        if let Some(m) = &tape.ff_mask {
            apply_mask(&mut d_f2, m);
        }
        let d_f1r = self.ff2.backward_rows(&tape.f1r, &d_f2);
        let d_f1 = relu_backward(&tape.f1r, &d_f1r);
        let d_x2 = self.ff1.backward_rows(&tape.x2, &d_f1);
        let mut d_r1 = self.ln2.backward(&tape.ln2, &d_x2);
        for (a, b) in d_r1.data.iter_mut().zip(&d_out.data) {
            *a += b;
        }
        // attention branch
        let mut d_a = d_r1.clone();
        if let Some(m) = &tape.attn_mask {
            apply_mask(&mut d_a, m);
        }
        let d_x1 = self.attn.backward(&tape.x1, &tape.attn, &d_a);
        let mut dx = self.ln1.backward(&tape.ln1, &d_x1);
        for (a, b) in dx.data.iter_mut().zip(&d_r1.data) {
            *a += b;
        }
        let _ = &tape.ln1_in;
        dx
    }
}

pub struct TextTape {
    tokens: Vec<u32>,
    layer_tapes: Vec<LayerTape>,
    embed_mask: Option<Tensor>,
    final_ln: LayerNormCache,
    final_t: usize,
    cls_hidden: Vec<f64>,
    pub embed: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub cfg: TextEncoderConfig,
    tok_embed: Param,
    layers: Vec<EncoderLayer>,
    final_ln: LayerNorm,
    pub proj: Linear,
}

impl TextEncoder {
    pub fn new(cfg: &TextEncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self, CoreError> {
        cfg.validate()?;
        let h = cfg.hidden_dim;
        Ok(TextEncoder {
            cfg: cfg.clone(),
            tok_embed: Param::new(Tensor::randn(&[cfg.vocab_size, h], 0.1, rng)),
            layers: (0..cfg.layers).map(|_| EncoderLayer::new(h, cfg.heads, rng)).collect(),
            final_ln: LayerNorm::new(h),
            proj: Linear::new(h, cfg.embed_dim, rng),
        })
    }

    pub fn forward_train(&self, tokens: &[u32]) -> Result<TextTape, CoreError> {
        self.forward_train_dropout(tokens, None)
    }

    /// Training forward with dropout driven by the given rng; `None` runs in
    /// evaluation mode.
    pub fn forward_train_dropout(
        &self,
        tokens: &[u32],
        mut drop_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<TextTape, CoreError> {
        if tokens.is_empty() || tokens[0] != self.cfg.cls_token_id {
            return Err(CoreError::Data("token sequence must start with CLS".into()));
        }
        let t = tokens.len().min(self.cfg.max_tokens);
        let tokens = &tokens[..t];
        let h = self.cfg.hidden_dim;
        for &id in tokens {
            if id as usize >= self.cfg.vocab_size {
                return Err(CoreError::Data(format!(
                    "token id {id} out of vocab (size {})",
                    self.cfg.vocab_size
                )));
            }
        }
        // Position information comes from the per-head relative bias inside
        // attention, so the input is the bare token embedding.
        let mut x = Tensor::zeros(&[t, h]);
        for (pos, &id) in tokens.iter().enumerate() {
            let e = &self.tok_embed.value.data[id as usize * h..(id as usize + 1) * h];
            x.data[pos * h..(pos + 1) * h].copy_from_slice(e);
        }
        // No padding: sequences are processed at their natural length, so
        // every position is a valid key.
        let valid = vec![true; t];
        let p = self.cfg.dropout;
        let embed_mask = match (&mut drop_rng, p > 0.0) {
            (Some(rng), true) => {
                let m = dropout_mask(&x.shape, p, rng);
                apply_mask(&mut x, &m);
                Some(m)
            }
            _ => None,
        };
        let mut layer_tapes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let drop = match (&mut drop_rng, p > 0.0) {
                (Some(rng), true) => Some((p, &mut **rng)),
                _ => None,
            };
            let (nx, tape) = layer.forward(&x, &valid, drop);
            x = nx;
            layer_tapes.push(tape);
        }
        let (xn, final_ln) = self.final_ln.forward(&x);
        let cls_hidden = xn.data[0..h].to_vec();
        let embed = self.proj.forward(&cls_hidden);
        Ok(TextTape {
            tokens: tokens.to_vec(),
            layer_tapes,
            embed_mask,
            final_ln,
            final_t: t,
            cls_hidden,
            embed,
        })
    }

    pub fn forward(&self, tokens: &[u32]) -> Result<Vec<f64>, CoreError> {
        Ok(self.forward_train(tokens)?.embed)
    }

    pub fn backward(&mut self, tape: &TextTape, d_embed: &[f64]) {
        let h = self.cfg.hidden_dim;
        let t = tape.final_t;
        let d_cls = self.proj.backward(&tape.cls_hidden, d_embed);
        let mut d_xn = Tensor::zeros(&[t, h]);
        d_xn.data[0..h].copy_from_slice(&d_cls);
        let mut d = self.final_ln.backward(&tape.final_ln, &d_xn);
        for (layer, tape_l) in self.layers.iter_mut().zip(&tape.layer_tapes).rev() {
            d = layer.backward(tape_l, &d);
        }
        if let Some(m) = &tape.embed_mask {
            apply_mask(&mut d, m);
        }
        for (pos, &id) in tape.tokens.iter().enumerate() {
            let row = &d.data[pos * h..(pos + 1) * h];
            let te = &mut self.tok_embed.grad.data[id as usize * h..(id as usize + 1) * h];
            for (tg, &g) in te.iter_mut().zip(row) {
                *tg += g;
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = vec![&mut self.tok_embed];
        for l in &mut self.layers {
            v.push(&mut l.attn.rel_bias);
            v.push(&mut l.attn.wq.weight);
            v.push(&mut l.attn.wq.bias);
            v.push(&mut l.attn.wk.weight);
            v.push(&mut l.attn.wk.bias);
            v.push(&mut l.attn.wv.weight);
            v.push(&mut l.attn.wv.bias);
            v.push(&mut l.attn.wo.weight);
            v.push(&mut l.attn.wo.bias);
            v.push(&mut l.ln1.gamma);
            v.push(&mut l.ln1.beta);
            v.push(&mut l.ff1.weight);
            v.push(&mut l.ff1.bias);
            v.push(&mut l.ff2.weight);
            v.push(&mut l.ff2.bias);
            v.push(&mut l.ln2.gamma);
            v.push(&mut l.ln2.beta);
        }
        v.push(&mut self.final_ln.gamma);
        v.push(&mut self.final_ln.beta);
        v.push(&mut self.proj.weight);
        v.push(&mut self.proj.bias);
        v
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut v: Vec<(String, &Tensor)> = vec![("tok_embed".into(), &self.tok_embed.value)];
        for (i, l) in self.layers.iter().enumerate() {
            let p = |s: &str| format!("layer{i}.{s}");
            v.push((p("attn.rel_bias"), &l.attn.rel_bias.value));
            v.push((p("attn.wq.weight"), &l.attn.wq.weight.value));
            v.push((p("attn.wq.bias"), &l.attn.wq.bias.value));
            v.push((p("attn.wk.weight"), &l.attn.wk.weight.value));
            v.push((p("attn.wk.bias"), &l.attn.wk.bias.value));
            v.push((p("attn.wv.weight"), &l.attn.wv.weight.value));
            v.push((p("attn.wv.bias"), &l.attn.wv.bias.value));
            v.push((p("attn.wo.weight"), &l.attn.wo.weight.value));
            v.push((p("attn.wo.bias"), &l.attn.wo.bias.value));
            v.push((p("ln1.gamma"), &l.ln1.gamma.value));
            v.push((p("ln1.beta"), &l.ln1.beta.value));
            v.push((p("ff1.weight"), &l.ff1.weight.value));
            v.push((p("ff1.bias"), &l.ff1.bias.value));
            v.push((p("ff2.weight"), &l.ff2.weight.value));
            v.push((p("ff2.bias"), &l.ff2.bias.value));
            v.push((p("ln2.gamma"), &l.ln2.gamma.value));
            v.push((p("ln2.beta"), &l.ln2.beta.value));
        }
        v.push(("final_ln.gamma".into(), &self.final_ln.gamma.value));
        v.push(("final_ln.beta".into(), &self.final_ln.beta.value));
        v.push(("proj.weight".into(), &self.proj.weight.value));
        v.push(("proj.bias".into(), &self.proj.bias.value));
        v
    }

    pub fn load_named(&mut self, arrays: &[(String, Tensor)]) -> Result<(), CoreError> {
        let mut slots: Vec<(String, &mut Param)> =
            vec![("tok_embed".into(), &mut self.tok_embed)];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = |s: &str| format!("layer{i}.{s}");
            slots.push((p("attn.rel_bias"), &mut l.attn.rel_bias));
            slots.push((p("attn.wq.weight"), &mut l.attn.wq.weight));
            slots.push((p("attn.wq.bias"), &mut l.attn.wq.bias));
            slots.push((p("attn.wk.weight"), &mut l.attn.wk.weight));
            slots.push((p("attn.wk.bias"), &mut l.attn.wk.bias));
            slots.push((p("attn.wv.weight"), &mut l.attn.wv.weight));
            slots.push((p("attn.wv.bias"), &mut l.attn.wv.bias));
            slots.push((p("attn.wo.weight"), &mut l.attn.wo.weight));
            slots.push((p("attn.wo.bias"), &mut l.attn.wo.bias));
            slots.push((p("ln1.gamma"), &mut l.ln1.gamma));
            slots.push((p("ln1.beta"), &mut l.ln1.beta));
            slots.push((p("ff1.weight"), &mut l.ff1.weight));
            slots.push((p("ff1.bias"), &mut l.ff1.bias));
            slots.push((p("ff2.weight"), &mut l.ff2.weight));
            slots.push((p("ff2.bias"), &mut l.ff2.bias));
            slots.push((p("ln2.gamma"), &mut l.ln2.gamma));
            slots.push((p("ln2.beta"), &mut l.ln2.beta));
        }
        slots.push(("final_ln.gamma".into(), &mut self.final_ln.gamma));
        slots.push(("final_ln.beta".into(), &mut self.final_ln.beta));
        slots.push(("proj.weight".into(), &mut self.proj.weight));
        slots.push(("proj.bias".into(), &mut self.proj.bias));
        super::vision::load_into_slots(slots, arrays, "text")
    }
}
