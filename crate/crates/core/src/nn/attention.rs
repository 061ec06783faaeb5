//! Multi-head self-attention over a `[tokens, hidden]` matrix with a key
//! padding mask.

use crate::nn::linear::Linear;
use crate::nn::tensor::{matmul, matmul_at, matmul_bt, Param, Tensor};
use rand_chacha::ChaCha8Rng;

const MASK_NEG: f64 = -1e30;

/// Relative offsets beyond ±REL_RANGE share the edge bias bucket.
pub const REL_RANGE: i64 = 8;

#[derive(Debug, Clone)]
pub struct Mhsa {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    /// Per-head relative position bias over clipped offsets `j - i`
    /// (translation-invariant positional signal). `[heads, 2*REL_RANGE+1]`.
    pub rel_bias: Param,
    pub heads: usize,
}

#[inline]
fn rel_bucket(i: usize, j: usize) -> usize {
    let off = (j as i64 - i as i64).clamp(-REL_RANGE, REL_RANGE);
    (off + REL_RANGE) as usize
}

pub struct MhsaCache {
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Per-head attention matrices, row-softmaxed. `[heads][t*t]`.
    attn: Vec<Vec<f64>>,
    concat: Tensor,
}

impl Mhsa {
    pub fn new(hidden: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(hidden % heads == 0, "hidden must be divisible by heads");
        let n_buckets = (2 * REL_RANGE + 1) as usize;
        Mhsa {
            wq: Linear::new(hidden, hidden, rng),
            wk: Linear::new(hidden, hidden, rng),
            wv: Linear::new(hidden, hidden, rng),
            wo: Linear::new(hidden, hidden, rng),
            rel_bias: Param::new(Tensor::randn(&[heads, n_buckets], 0.02, rng)),
            heads,
        }
    }

    /// `key_valid[j]` is false for padding positions, which are excluded from
    /// every softmax.
    pub fn forward(&self, x: &Tensor, key_valid: &[bool]) -> (Tensor, MhsaCache) {
        let (t, h) = (x.shape[0], x.shape[1]);
        let dk = h / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let q = self.wq.forward_rows(x);
        let k = self.wk.forward_rows(x);
        let v = self.wv.forward_rows(x);
        let mut concat = Tensor::zeros(&[t, h]);
        let mut attn = Vec::with_capacity(self.heads);
        let mut qh = vec![0.0; t * dk];
        let mut kh = vec![0.0; t * dk];
        let mut vh = vec![0.0; t * dk];
        for head in 0..self.heads {
            let off = head * dk;
            for r in 0..t {
                qh[r * dk..(r + 1) * dk].copy_from_slice(&q.data[r * h + off..r * h + off + dk]);
                kh[r * dk..(r + 1) * dk].copy_from_slice(&k.data[r * h + off..r * h + off + dk]);
                vh[r * dk..(r + 1) * dk].copy_from_slice(&v.data[r * h + off..r * h + off + dk]);
            }
            let mut scores = vec![0.0; t * t];
            matmul_bt(&qh, t, dk, &kh, t, &mut scores);
            let n_buckets = (2 * REL_RANGE + 1) as usize;
            let bias = &self.rel_bias.value.data[head * n_buckets..(head + 1) * n_buckets];
            for r in 0..t {
                let row = &mut scores[r * t..(r + 1) * t];
                for (j, s) in row.iter_mut().enumerate() {
                    *s = if key_valid[j] {
                        *s * scale + bias[rel_bucket(r, j)]
                    } else {
                        MASK_NEG
                    };
                }
                softmax_in_place(row);
            }
            let mut out_h = vec![0.0; t * dk];
            matmul(&scores, t, t, &vh, dk, &mut out_h);
            for r in 0..t {
                concat.data[r * h + off..r * h + off + dk]
                    .copy_from_slice(&out_h[r * dk..(r + 1) * dk]);
            }
            attn.push(scores);
        }
        let out = self.wo.forward_rows(&concat);
        (
            out,
            MhsaCache {
                q,
                k,
                v,
                attn,
                concat,
            },
        )
    }

    pub fn backward(&mut self, x: &Tensor, cache: &MhsaCache, dy: &Tensor) -> Tensor {
        let (t, h) = (x.shape[0], x.shape[1]);
        let dk = h / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let d_concat = self.wo.backward_rows(&cache.concat, dy);
        let mut dq = Tensor::zeros(&[t, h]);
        let mut dkt = Tensor::zeros(&[t, h]);
        let mut dv = Tensor::zeros(&[t, h]);
        let mut qh = vec![0.0; t * dk];
        let mut kh = vec![0.0; t * dk];
        let mut vh = vec![0.0; t * dk];
        let mut doh = vec![0.0; t * dk];
        for head in 0..self.heads {
            let off = head * dk;
            for r in 0..t {
                qh[r * dk..(r + 1) * dk]
                    .copy_from_slice(&cache.q.data[r * h + off..r * h + off + dk]);
                kh[r * dk..(r + 1) * dk]
                    .copy_from_slice(&cache.k.data[r * h + off..r * h + off + dk]);
                vh[r * dk..(r + 1) * dk]
                    .copy_from_slice(&cache.v.data[r * h + off..r * h + off + dk]);
                doh[r * dk..(r + 1) * dk]
                    .copy_from_slice(&d_concat.data[r * h + off..r * h + off + dk]);
            }
            let a = &cache.attn[head];
            // dV_h = Aᵀ · dO_h
            let mut dvh = vec![0.0; t * dk];
            matmul_at(a, t, t, &doh, dk, &mut dvh);
            // dA = dO_h · V_hᵀ
            let mut da = vec![0.0; t * t];
            matmul_bt(&doh, t, dk, &vh, t, &mut da);
            // softmax backward per row: dS = A ⊙ (dA - rowsum(A ⊙ dA));
            // dS feeds the bias grad directly and the q/k grads via `scale`.
            let n_buckets = (2 * REL_RANGE + 1) as usize;
            let mut ds = vec![0.0; t * t];
            for r in 0..t {
                let arow = &a[r * t..(r + 1) * t];
                let darow = &da[r * t..(r + 1) * t];
                let inner: f64 = arow.iter().zip(darow).map(|(av, dv)| av * dv).sum();
                let dsrow = &mut ds[r * t..(r + 1) * t];
                for j in 0..t {
                    let d_pre = arow[j] * (darow[j] - inner);
                    self.rel_bias.grad.data[head * n_buckets + rel_bucket(r, j)] += d_pre;
                    dsrow[j] = d_pre * scale;
                }
            }
            // dQ_h = dS · K_h ; dK_h = dSᵀ · Q_h
            let mut dqh = vec![0.0; t * dk];
            matmul(&ds, t, t, &kh, dk, &mut dqh);
            let mut dkh = vec![0.0; t * dk];
            matmul_at(&ds, t, t, &qh, dk, &mut dkh);
            for r in 0..t {
                dq.data[r * h + off..r * h + off + dk].copy_from_slice(&dqh[r * dk..(r + 1) * dk]);
                dkt.data[r * h + off..r * h + off + dk].copy_from_slice(&dkh[r * dk..(r + 1) * dk]);
                dv.data[r * h + off..r * h + off + dk].copy_from_slice(&dvh[r * dk..(r + 1) * dk]);
            }
        }
        let mut dx = self.wq.backward_rows(x, &dq);
        let dx_k = self.wk.backward_rows(x, &dkt);
        let dx_v = self.wv.backward_rows(x, &dv);
        for ((a, b), c) in dx.data.iter_mut().zip(&dx_k.data).zip(&dx_v.data) {
            *a += b + c;
        }
        dx
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
