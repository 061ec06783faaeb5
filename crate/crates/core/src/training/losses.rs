//! Loss functions with analytic gradients: masked multi-label BCE, per-voxel
//! segmentation cross-entropy, the normalization-free symmetric contrastive
//! loss, and the stage-2 total objective.

use crate::error::CoreError;
use crate::nn::{log_sum_exp, sigmoid, Linear, Tensor};
use serde::{Deserialize, Serialize};

/// How uncertain (-1) labels enter the BCE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertainPolicy {
    /// Cells with label -1 are excluded from the mean.
    Ignore,
    /// -1 is treated as 0.
    MapToNegative,
}

/// Stable binary cross-entropy with logits for one cell.
#[inline]
fn bce_cell(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
}

/// Mean BCE over the included (study, class) cells of a batch. Positives and
/// negatives are weighted equally.
pub fn masked_bce_batch(
    logits: &Tensor,
    labels: &[&[i8]],
    policy: UncertainPolicy,
) -> Result<f64, CoreError> {
    Ok(masked_bce_batch_grad(logits, labels, policy)?.0)
}

/// Returns (loss, d_loss/d_logits). Masked cells get zero gradient.
pub fn masked_bce_batch_grad(
    logits: &Tensor,
    labels: &[&[i8]],
    policy: UncertainPolicy,
) -> Result<(f64, Tensor), CoreError> {
    let (n, c) = (logits.shape[0], logits.shape[1]);
    if labels.len() != n || labels.iter().any(|l| l.len() != c) {
        return Err(CoreError::DimMismatch(format!(
            "labels must be {n} rows of {c} values"
        )));
    }
    let mut included: Vec<(usize, f64)> = Vec::with_capacity(n * c);
    for (r, row) in labels.iter().enumerate() {
        for (j, &lab) in row.iter().enumerate() {
            let y = match (lab, policy) {
                (-1, UncertainPolicy::Ignore) => continue,
                (-1, UncertainPolicy::MapToNegative) => 0.0,
                (v, _) => v as f64,
            };
            included.push((r * c + j, y));
        }
    }
    if included.is_empty() {
        return Err(CoreError::Data(
            "masked BCE: every cell is masked out".into(),
        ));
    }
    let m = included.len() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(&logits.shape);
    for (idx, y) in included {
        let x = logits.data[idx];
        loss += bce_cell(x, y);
        grad.data[idx] = (sigmoid(x) - y) / m;
    }
    Ok((loss / m, grad))
}

/// Single-vector convenience wrapper.
pub fn masked_bce(logits: &[f64], labels: &[i8], policy: UncertainPolicy) -> Result<f64, CoreError> {
    let t = Tensor::from_vec(&[1, logits.len()], logits.to_vec());
    masked_bce_batch(&t, &[labels], policy)
}

pub fn masked_bce_grad(
    logits: &[f64],
    labels: &[i8],
    policy: UncertainPolicy,
) -> Result<(f64, Vec<f64>), CoreError> {
    let t = Tensor::from_vec(&[1, logits.len()], logits.to_vec());
    let (loss, g) = masked_bce_batch_grad(&t, &[labels], policy)?;
    Ok((loss, g.data))
}

/// Mean per-voxel multi-class cross-entropy. `logits` is `[K, D, H, W]`,
/// `target` the flat voxel class array in the same spatial order.
pub fn seg_ce(logits: &Tensor, target: &[u8]) -> Result<f64, CoreError> {
    Ok(seg_ce_grad(logits, target)?.0)
}

pub fn seg_ce_grad(logits: &Tensor, target: &[u8]) -> Result<(f64, Tensor), CoreError> {
    let k = logits.shape[0];
    let spatial = logits.numel() / k;
    if target.len() != spatial {
        return Err(CoreError::DimMismatch(format!(
            "target has {} voxels, logits {spatial}",
            target.len()
        )));
    }
    if let Some(&bad) = target.iter().find(|&&t| t as usize >= k) {
        return Err(CoreError::Data(format!(
            "segmentation class {bad} out of range (K = {k})"
        )));
    }
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(&logits.shape);
    let mut row = vec![0.0; k];
    for v in 0..spatial {
        for c in 0..k {
            row[c] = logits.data[c * spatial + v];
        }
        let lse = log_sum_exp(&row);
        let t = target[v] as usize;
        loss += lse - row[t];
        for c in 0..k {
            let p = (row[c] - lse).exp();
            grad.data[c * spatial + v] =
                (p - if c == t { 1.0 } else { 0.0 }) / spatial as f64;
        }
    }
    Ok((loss / spatial as f64, grad))
}

/// Symmetric InfoNCE over the N×N dot-product similarity matrix, with no
/// temperature and (by default) no normalization:
/// `-(1/2N) Σᵢ [log softmax_row(S)ᵢᵢ + log softmax_col(S)ᵢᵢ]`, `S = Z Tᵀ`.
/// `l2_normalize` is an ablation flag that unit-normalizes rows first.
pub fn contrastive_loss(z: &Tensor, t: &Tensor, l2_normalize: bool) -> Result<f64, CoreError> {
    Ok(contrastive_loss_grad(z, t, l2_normalize)?.0)
}

pub fn contrastive_loss_grad(
    z: &Tensor,
    t: &Tensor,
    l2_normalize: bool,
) -> Result<(f64, Tensor, Tensor), CoreError> {
    if z.shape != t.shape || z.shape.len() != 2 {
        return Err(CoreError::DimMismatch(format!(
            "contrastive loss needs matching [N, dim] batches, got {:?} and {:?}",
            z.shape, t.shape
        )));
    }
    let (n, dim) = (z.shape[0], z.shape[1]);
    if n == 0 {
        return Err(CoreError::DimMismatch("empty batch".into()));
    }
    let (zn, tn) = if l2_normalize {
        (normalize_rows(z), normalize_rows(t))
    } else {
        (z.clone(), t.clone())
    };
    // S = Zn Tnᵀ
    let mut s = vec![0.0; n * n];
    crate::nn::matmul_bt(&zn.data, n, dim, &tn.data, n, &mut s);
    let mut row_lse = vec![0.0; n];
    let mut col_lse = vec![0.0; n];
    for i in 0..n {
        row_lse[i] = log_sum_exp(&s[i * n..(i + 1) * n]);
        let col: Vec<f64> = (0..n).map(|r| s[r * n + i]).collect();
        col_lse[i] = log_sum_exp(&col);
    }
    let mut loss = 0.0;
    for i in 0..n {
        loss += (row_lse[i] - s[i * n + i]) + (col_lse[i] - s[i * n + i]);
    }
    loss /= 2.0 * n as f64;

    // dS = (P_row + P_col)/(2N) - I/N
    let mut ds = vec![0.0; n * n];
    let inv2n = 1.0 / (2.0 * n as f64);
    for a in 0..n {
        for b in 0..n {
            let p_row = (s[a * n + b] - row_lse[a]).exp();
            let p_col = (s[a * n + b] - col_lse[b]).exp();
            ds[a * n + b] = (p_row + p_col) * inv2n;
            if a == b {
                ds[a * n + b] -= 2.0 * inv2n;
            }
        }
    }
    // dZn = dS · Tn ; dTn = dSᵀ · Zn
    let mut dzn = Tensor::zeros(&z.shape);
    crate::nn::matmul(&ds, n, n, &tn.data, dim, &mut dzn.data);
    let mut dtn = Tensor::zeros(&t.shape);
    crate::nn::matmul_at(&ds, n, n, &zn.data, dim, &mut dtn.data);

    let (dz, dt) = if l2_normalize {
        (
            normalize_rows_backward(z, &zn, &dzn),
            normalize_rows_backward(t, &tn, &dtn),
        )
    } else {
        (dzn, dtn)
    };
    Ok((loss, dz, dt))
}

fn normalize_rows(x: &Tensor) -> Tensor {
    let (n, dim) = (x.shape[0], x.shape[1]);
    let mut out = x.clone();
    for r in 0..n {
        let row = &mut out.data[r * dim..(r + 1) * dim];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        row.iter_mut().for_each(|v| *v /= norm);
    }
    out
}

/// d/dx of x̂ = x/‖x‖ applied to upstream gradient d_x̂:
/// dx = (d_x̂ - x̂ (x̂·d_x̂)) / ‖x‖.
fn normalize_rows_backward(x: &Tensor, xn: &Tensor, dxn: &Tensor) -> Tensor {
    let (n, dim) = (x.shape[0], x.shape[1]);
    let mut out = Tensor::zeros(&x.shape);
    for r in 0..n {
        let xrow = &x.data[r * dim..(r + 1) * dim];
        let nrow = &xn.data[r * dim..(r + 1) * dim];
        let drow = &dxn.data[r * dim..(r + 1) * dim];
        let norm = xrow.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let inner = crate::nn::dot(nrow, drow);
        for j in 0..dim {
            out.data[r * dim + j] = (drow[j] - nrow[j] * inner) / norm;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignComponents {
    pub clip: f64,
    pub cls_img: f64,
    pub cls_txt: f64,
    pub total: f64,
}

/// Stage-2 objective: `L_clip + λ (L_cls_img + L_cls_txt)`, where the cls
/// terms apply the shared classifier to each modality's embeddings.
pub fn total_align_loss(
    z: &Tensor,
    t: &Tensor,
    labels: &[&[i8]],
    classifier: &Linear,
    lambda: f64,
    policy: UncertainPolicy,
    l2_normalize: bool,
) -> Result<AlignComponents, CoreError> {
    let clip = contrastive_loss(z, t, l2_normalize)?;
    let cls_img = masked_bce_batch(&classifier.forward_rows(z), labels, policy)?;
    let cls_txt = masked_bce_batch(&classifier.forward_rows(t), labels, policy)?;
    Ok(AlignComponents {
        clip,
        cls_img,
        cls_txt,
        total: clip + lambda * (cls_img + cls_txt),
    })
}

/// Gradient form: returns components plus dZ and dT; accumulates the shared
/// classifier's parameter gradients (scaled by λ).
pub fn total_align_loss_grad(
    z: &Tensor,
    t: &Tensor,
    labels: &[&[i8]],
    classifier: &mut Linear,
    lambda: f64,
    policy: UncertainPolicy,
    l2_normalize: bool,
) -> Result<(AlignComponents, Tensor, Tensor), CoreError> {
    let (clip, mut dz, mut dt) = contrastive_loss_grad(z, t, l2_normalize)?;
    let logits_img = classifier.forward_rows(z);
    let (cls_img, mut d_logits_img) = masked_bce_batch_grad(&logits_img, labels, policy)?;
    let logits_txt = classifier.forward_rows(t);
    let (cls_txt, mut d_logits_txt) = masked_bce_batch_grad(&logits_txt, labels, policy)?;
    for g in &mut d_logits_img.data {
        *g *= lambda;
    }
    for g in &mut d_logits_txt.data {
        *g *= lambda;
    }
    let dz_cls = classifier.backward_rows(z, &d_logits_img);
    let dt_cls = classifier.backward_rows(t, &d_logits_txt);
    for (a, b) in dz.data.iter_mut().zip(&dz_cls.data) {
        *a += b;
    }
    for (a, b) in dt.data.iter_mut().zip(&dt_cls.data) {
        *a += b;
    }
    Ok((
        AlignComponents {
            clip,
            cls_img,
            cls_txt,
            total: clip + lambda * (cls_img + cls_txt),
        },
        dz,
        dt,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn bce_zero_logits_all_positive_is_ln2() {
        let loss = masked_bce(&[0.0; 4], &[1; 4], UncertainPolicy::Ignore).unwrap();
        assert!((loss - LN2).abs() < 1e-12);
    }

    #[test]
    fn bce_ignore_masks_uncertain_cells() {
        let loss = masked_bce(&[0.0, 999.0], &[1, -1], UncertainPolicy::Ignore).unwrap();
        assert!((loss - LN2).abs() < 1e-12);
        // grad of masked cell is zero, and loss invariant to its logit
        let (l2, g) = masked_bce_grad(&[0.0, -999.0], &[1, -1], UncertainPolicy::Ignore).unwrap();
        assert!((l2 - LN2).abs() < 1e-12);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn bce_map_to_negative_counts_uncertain_as_zero() {
        let loss = masked_bce(&[0.0, 0.0], &[1, -1], UncertainPolicy::MapToNegative).unwrap();
        assert!((loss - LN2).abs() < 1e-12);
    }

    #[test]
    fn bce_all_masked_errors() {
        assert!(masked_bce(&[0.0, 0.0], &[-1, -1], UncertainPolicy::Ignore).is_err());
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logits: Vec<f64> = (0..6).map(|_| rand::Rng::gen_range(&mut rng, -2.0..2.0)).collect();
        let labels: Vec<i8> = vec![1, 0, -1, 1, 0, -1];
        for policy in [UncertainPolicy::Ignore, UncertainPolicy::MapToNegative] {
            let (_, g) = masked_bce_grad(&logits, &labels, policy).unwrap();
            for i in 0..6 {
                let eps = 1e-6;
                let mut lp = logits.clone();
                lp[i] += eps;
                let mut lm = logits.clone();
                lm[i] -= eps;
                let fd = (masked_bce(&lp, &labels, policy).unwrap()
                    - masked_bce(&lm, &labels, policy).unwrap())
                    / (2.0 * eps);
                assert!((g[i] - fd).abs() < 1e-8, "{policy:?} i={i}");
            }
        }
    }

    #[test]
    fn seg_uniform_logits_give_ln_k() {
        let k = 5;
        let logits = Tensor::zeros(&[k, 2, 2, 2]);
        let target = vec![0u8; 8];
        let loss = seg_ce(&logits, &target).unwrap();
        assert!((loss - (k as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn seg_confident_correct_logits_approach_zero() {
        let mut logits = Tensor::zeros(&[3, 1, 1, 2]);
        // voxel 0 -> class 1, voxel 1 -> class 2, both confident
        logits.data[1 * 2 + 0] = 50.0;
        logits.data[2 * 2 + 1] = 50.0;
        let loss = seg_ce(&logits, &[1, 2]).unwrap();
        assert!(loss < 1e-9);
        assert!(seg_ce(&logits, &[3, 0]).is_err(), "class out of range");
    }

    #[test]
    fn seg_two_voxel_case_matches_hand_softmax() {
        let logits = Tensor::from_vec(&[2, 1, 1, 2], vec![0.3, -0.2, -1.1, 0.8]);
        // voxel 0: classes (0.3, -1.1), target 0; voxel 1: (-0.2, 0.8), target 1
        let p00 = (0.3f64.exp()) / (0.3f64.exp() + (-1.1f64).exp());
        let p11 = (0.8f64.exp()) / ((-0.2f64).exp() + 0.8f64.exp());
        let expected = -(p00.ln() + p11.ln()) / 2.0;
        let loss = seg_ce(&logits, &[0, 1]).unwrap();
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn seg_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = Tensor::randn(&[3, 2, 2, 1], 1.0, &mut rng);
        let target = vec![0u8, 2, 1, 0];
        let (_, g) = seg_ce_grad(&logits, &target).unwrap();
        for i in 0..logits.data.len() {
            let eps = 1e-6;
            let mut lp = logits.clone();
            lp.data[i] += eps;
            let mut lm = logits.clone();
            lm.data[i] -= eps;
            let fd = (seg_ce(&lp, &target).unwrap() - seg_ce(&lm, &target).unwrap()) / (2.0 * eps);
            assert!((g.data[i] - fd).abs() < 1e-8, "i={i}");
        }
    }

    #[test]
    fn contrastive_single_pair_is_zero() {
        let z = Tensor::from_vec(&[1, 3], vec![0.4, -2.0, 1.0]);
        let t = Tensor::from_vec(&[1, 3], vec![5.0, 0.1, -0.7]);
        assert!(contrastive_loss(&z, &t, false).unwrap().abs() < 1e-12);
    }

    #[test]
    fn contrastive_identity_rows_match_closed_form() {
        // Z = T = I2: S = I; loss = -log(e/(e+1))
        let z = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let expected = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        let loss = contrastive_loss(&z, &z, false).unwrap();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn contrastive_uniform_similarities_give_ln_n() {
        // All-equal embeddings -> S constant -> loss = ln N
        let n = 7;
        let z = Tensor::from_vec(&[n, 2], vec![1.0; n * 2]);
        let loss = contrastive_loss(&z, &z, false).unwrap();
        assert!((loss - (n as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn contrastive_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for l2 in [false, true] {
            let z = Tensor::randn(&[4, 5], 0.8, &mut rng);
            let t = Tensor::randn(&[4, 5], 0.8, &mut rng);
            let (_, dz, dt) = contrastive_loss_grad(&z, &t, l2).unwrap();
            let eps = 1e-6;
            for i in 0..z.data.len() {
                let mut zp = z.clone();
                zp.data[i] += eps;
                let mut zm = z.clone();
                zm.data[i] -= eps;
                let fd = (contrastive_loss(&zp, &t, l2).unwrap()
                    - contrastive_loss(&zm, &t, l2).unwrap())
                    / (2.0 * eps);
                assert!((dz.data[i] - fd).abs() < 1e-7, "l2={l2} dz[{i}]");
            }
            for i in 0..t.data.len() {
                let mut tp = t.clone();
                tp.data[i] += eps;
                let mut tm = t.clone();
                tm.data[i] -= eps;
                let fd = (contrastive_loss(&z, &tp, l2).unwrap()
                    - contrastive_loss(&z, &tm, l2).unwrap())
                    / (2.0 * eps);
                assert!((dt.data[i] - fd).abs() < 1e-7, "l2={l2} dt[{i}]");
            }
        }
    }

    #[test]
    fn scaling_matters_without_l2_but_not_with_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let z = Tensor::randn(&[5, 4], 1.0, &mut rng);
        let t = Tensor::randn(&[5, 4], 1.0, &mut rng);
        let base = contrastive_loss(&z, &t, false).unwrap();
        let mut z_scaled = z.clone();
        for v in &mut z_scaled.data[0..4] {
            *v *= 3.0; // scale one image embedding
        }
        let scaled = contrastive_loss(&z_scaled, &t, false).unwrap();
        assert!((base - scaled).abs() > 1e-6, "magnitude must matter");
        // with l2 normalization, per-row positive scaling is invisible
        let mut z_pos = z.clone();
        for (r, factor) in [(0usize, 2.0), (1, 0.5), (2, 7.0)] {
            for v in &mut z_pos.data[r * 4..(r + 1) * 4] {
                *v *= factor;
            }
        }
        let a = contrastive_loss(&z, &t, true).unwrap();
        let b = contrastive_loss(&z_pos, &t, true).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn total_align_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = Tensor::randn(&[3, 6], 1.0, &mut rng);
        let t = Tensor::randn(&[3, 6], 1.0, &mut rng);
        let classifier = Linear::new(6, 4, &mut rng);
        let labels: Vec<Vec<i8>> = vec![vec![1, 0, -1, 1], vec![0, 0, 1, -1], vec![1, 1, 0, 0]];
        let refs: Vec<&[i8]> = labels.iter().map(|l| l.as_slice()).collect();
        // lambda = 0 -> total == clip exactly
        let c0 = total_align_loss(&z, &t, &refs, &classifier, 0.0, UncertainPolicy::Ignore, false)
            .unwrap();
        assert_eq!(c0.total, c0.clip);
        // lambda = 1 -> total = clip + cls_img + cls_txt
        let c1 = total_align_loss(&z, &t, &refs, &classifier, 1.0, UncertainPolicy::Ignore, false)
            .unwrap();
        assert!((c1.total - (c1.clip + c1.cls_img + c1.cls_txt)).abs() < 1e-12);
    }

    #[test]
    fn total_align_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let z = Tensor::randn(&[3, 5], 0.9, &mut rng);
        let t = Tensor::randn(&[3, 5], 0.9, &mut rng);
        let classifier = Linear::new(5, 3, &mut rng);
        let labels: Vec<Vec<i8>> = vec![vec![1, -1, 0], vec![0, 1, 1], vec![-1, 0, 1]];
        let refs: Vec<&[i8]> = labels.iter().map(|l| l.as_slice()).collect();
        let lambda = 0.7;
        let mut cl = classifier.clone();
        let (_, dz, dt) =
            total_align_loss_grad(&z, &t, &refs, &mut cl, lambda, UncertainPolicy::Ignore, false)
                .unwrap();
        let loss = |zz: &Tensor, tt: &Tensor| {
            total_align_loss(zz, tt, &refs, &classifier, lambda, UncertainPolicy::Ignore, false)
                .unwrap()
                .total
        };
        let eps = 1e-6;
        for i in 0..z.data.len() {
            let mut zp = z.clone();
            zp.data[i] += eps;
            let mut zm = z.clone();
            zm.data[i] -= eps;
            let fd = (loss(&zp, &t) - loss(&zm, &t)) / (2.0 * eps);
            assert!((dz.data[i] - fd).abs() < 1e-7, "dz[{i}]");
        }
        for i in 0..t.data.len() {
            let mut tp = t.clone();
            tp.data[i] += eps;
            let mut tm = t.clone();
            tm.data[i] -= eps;
            let fd = (loss(&z, &tp) - loss(&z, &tm)) / (2.0 * eps);
            assert!((dt.data[i] - fd).abs() < 1e-7, "dt[{i}]");
        }
        // classifier gradient check (weight entries)
        for &i in &[0usize, 7, 14] {
            let mut cp = classifier.clone();
            cp.weight.value.data[i] += eps;
            let mut cm = classifier.clone();
            cm.weight.value.data[i] -= eps;
            let lp = total_align_loss(&z, &t, &refs, &cp, lambda, UncertainPolicy::Ignore, false)
                .unwrap()
                .total;
            let lm = total_align_loss(&z, &t, &refs, &cm, lambda, UncertainPolicy::Ignore, false)
                .unwrap()
                .total;
            let fd = (lp - lm) / (2.0 * eps);
            assert!((cl.weight.grad.data[i] - fd).abs() < 1e-7, "dW[{i}]");
        }
    }
}
