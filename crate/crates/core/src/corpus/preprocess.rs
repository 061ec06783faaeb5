//! Volumetric preprocessing: trilinear resampling, intensity windowing,
//! padding/cropping, Otsu foreground extraction, and z-score normalization.

use crate::corpus::volume::{IntensityDomain, MaskVolume, VolumeTensor};
use crate::error::CoreError;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Trilinear sample at a fractional (h, w, d) coordinate with edge clamping.
#[inline]
pub fn trilinear_sample(data: &[f64], shape: [usize; 3], h: f64, w: f64, d: f64) -> f64 {
    let (nh, nw, nd) = (shape[0], shape[1], shape[2]);
    let clamp = |x: f64, n: usize| x.max(0.0).min((n - 1) as f64);
    let (h, w, d) = (clamp(h, nh), clamp(w, nw), clamp(d, nd));
    let (h0, w0, d0) = (h.floor() as usize, w.floor() as usize, d.floor() as usize);
    let (h1, w1, d1) = ((h0 + 1).min(nh - 1), (w0 + 1).min(nw - 1), (d0 + 1).min(nd - 1));
    let (fh, fw, fd) = (h - h0 as f64, w - w0 as f64, d - d0 as f64);
    let at = |ih: usize, iw: usize, id: usize| data[(id * nh + ih) * nw + iw];
    let c00 = at(h0, w0, d0) * (1.0 - fh) + at(h1, w0, d0) * fh;
    let c10 = at(h0, w1, d0) * (1.0 - fh) + at(h1, w1, d0) * fh;
    let c01 = at(h0, w0, d1) * (1.0 - fh) + at(h1, w0, d1) * fh;
    let c11 = at(h0, w1, d1) * (1.0 - fh) + at(h1, w1, d1) * fh;
    let c0 = c00 * (1.0 - fw) + c10 * fw;
    let c1 = c01 * (1.0 - fw) + c11 * fw;
    c0 * (1.0 - fd) + c1 * fd
}

/// Source coordinate of output voxel center `j` under a scale factor
/// (voxel-center alignment).
#[inline]
pub fn src_coord(j: usize, scale: f64) -> f64 {
    (j as f64 + 0.5) * scale - 0.5
}

/// Resample to a target physical spacing via trilinear interpolation.
/// Output size per axis is `round(in_size * in_spacing / target_spacing)`.
pub fn resample(vol: &VolumeTensor, target_spacing_mm: [f64; 3]) -> Result<VolumeTensor, CoreError> {
    if target_spacing_mm.iter().any(|&s| !(s > 0.0)) {
        return Err(CoreError::Data(format!(
            "target spacing must be positive, got {target_spacing_mm:?}"
        )));
    }
    // spacing is (x, y, z) against shape (H, W, D): H pairs y, W pairs x, D pairs z.
    let in_sp = [vol.spacing_mm[1], vol.spacing_mm[0], vol.spacing_mm[2]];
    let out_sp = [target_spacing_mm[1], target_spacing_mm[0], target_spacing_mm[2]];
    let mut out_shape = [0usize; 3];
    let mut scale = [0f64; 3];
    for a in 0..3 {
        let n = ((vol.shape[a] as f64) * in_sp[a] / out_sp[a]).round().max(1.0) as usize;
        out_shape[a] = n;
        scale[a] = out_sp[a] / in_sp[a];
    }
    let mut out = VolumeTensor::new(out_shape, target_spacing_mm, vol.domain)?;
    for id in 0..out_shape[2] {
        let sd = src_coord(id, scale[2]);
        for ih in 0..out_shape[0] {
            let sh = src_coord(ih, scale[0]);
            for iw in 0..out_shape[1] {
                let sw = src_coord(iw, scale[1]);
                let v = trilinear_sample(&vol.data, vol.shape, sh, sw, sd);
                out.set(ih, iw, id, v);
            }
        }
    }
    Ok(out)
}

/// Resize to an explicit output shape (trilinear, voxel-center aligned);
/// spacing metadata is scaled accordingly.
pub fn resize_to_shape(vol: &VolumeTensor, out_shape: [usize; 3]) -> Result<VolumeTensor, CoreError> {
    let scale = [
        vol.shape[0] as f64 / out_shape[0] as f64,
        vol.shape[1] as f64 / out_shape[1] as f64,
        vol.shape[2] as f64 / out_shape[2] as f64,
    ];
    let spacing = [
        vol.spacing_mm[0] * scale[1],
        vol.spacing_mm[1] * scale[0],
        vol.spacing_mm[2] * scale[2],
    ];
    let mut out = VolumeTensor::new(out_shape, spacing, vol.domain)?;
    for id in 0..out_shape[2] {
        let sd = src_coord(id, scale[2]);
        for ih in 0..out_shape[0] {
            let sh = src_coord(ih, scale[0]);
            for iw in 0..out_shape[1] {
                let sw = src_coord(iw, scale[1]);
                out.set(ih, iw, id, trilinear_sample(&vol.data, vol.shape, sh, sw, sd));
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbor mask resample matching [`resample`]'s grid.
pub fn resample_mask_nearest(
    mask: &MaskVolume,
    in_spacing_mm: [f64; 3],
    target_spacing_mm: [f64; 3],
) -> MaskVolume {
    let in_sp = [in_spacing_mm[1], in_spacing_mm[0], in_spacing_mm[2]];
    let out_sp = [target_spacing_mm[1], target_spacing_mm[0], target_spacing_mm[2]];
    let mut out_shape = [0usize; 3];
    let mut scale = [0f64; 3];
    for a in 0..3 {
        out_shape[a] = ((mask.shape[a] as f64) * in_sp[a] / out_sp[a]).round().max(1.0) as usize;
        scale[a] = out_sp[a] / in_sp[a];
    }
    let mut out = MaskVolume::zeros(out_shape);
    let near = |x: f64, n: usize| (x.round().max(0.0) as usize).min(n - 1);
    for id in 0..out_shape[2] {
        let sd = near(src_coord(id, scale[2]), mask.shape[2]);
        for ih in 0..out_shape[0] {
            let sh = near(src_coord(ih, scale[0]), mask.shape[0]);
            for iw in 0..out_shape[1] {
                let sw = near(src_coord(iw, scale[1]), mask.shape[1]);
                let v = mask.data[(sd * mask.shape[0] + sh) * mask.shape[1] + sw];
                let i = out.idx(ih, iw, id);
                out.data[i] = v;
            }
        }
    }
    out
}

/// Clamp to `[lo, hi]` then map affinely onto `[-1, 1]`.
pub fn window_normalize(vol: &VolumeTensor, lo: f64, hi: f64) -> Result<VolumeTensor, CoreError> {
    if !(lo < hi) {
        return Err(CoreError::Data(format!("window requires lo < hi, got [{lo}, {hi}]")));
    }
    let mut out = vol.clone();
    let span = hi - lo;
    for v in &mut out.data {
        let c = v.clamp(lo, hi);
        *v = 2.0 * (c - lo) / span - 1.0;
    }
    out.domain = IntensityDomain::Normalized;
    Ok(out)
}

const PAD_FILL: f64 = -1.0; // normalized air

fn pad_or_crop_axis(in_len: usize, out_len: usize) -> (usize, usize) {
    // Returns (src_offset, dst_offset): crop takes the centered window with
    // the lower index on ties; pad splits symmetrically, extra voxel high.
    if in_len >= out_len {
        ((in_len - out_len) / 2, 0)
    } else {
        (0, (out_len - in_len) / 2)
    }
}

/// Symmetrically pad (fill −1, the normalized air value) or center-crop each
/// axis to the canvas shape.
pub fn pad_or_crop(vol: &VolumeTensor, canvas: [usize; 3]) -> VolumeTensor {
    let mut out = VolumeTensor::new(canvas, vol.spacing_mm, vol.domain).expect("valid canvas");
    out.data.iter_mut().for_each(|v| *v = PAD_FILL);
    copy_block(&vol.data, vol.shape, &mut out.data, canvas);
    out
}

/// Mask variant of [`pad_or_crop`]; fill is class 0.
pub fn pad_or_crop_mask(mask: &MaskVolume, canvas: [usize; 3]) -> MaskVolume {
    let mut out = MaskVolume::zeros(canvas);
    copy_block(&mask.data, mask.shape, &mut out.data, canvas);
    out
}

fn copy_block<T: Copy>(src: &[T], in_shape: [usize; 3], dst: &mut [T], out_shape: [usize; 3]) {
    let (sh, dh) = pad_or_crop_axis(in_shape[0], out_shape[0]);
    let (sw, dw) = pad_or_crop_axis(in_shape[1], out_shape[1]);
    let (sd, dd) = pad_or_crop_axis(in_shape[2], out_shape[2]);
    let nh = in_shape[0].min(out_shape[0]);
    let nw = in_shape[1].min(out_shape[1]);
    let nd = in_shape[2].min(out_shape[2]);
    for d in 0..nd {
        for h in 0..nh {
            let src_off = ((sd + d) * in_shape[0] + (sh + h)) * in_shape[1] + sw;
            let dst_off = ((dd + d) * out_shape[0] + (dh + h)) * out_shape[1] + dw;
            dst[dst_off..dst_off + nw].copy_from_slice(&src[src_off..src_off + nw]);
        }
    }
}

/// Extract the sub-volume at `offset` with the given size.
pub fn crop_at(vol: &VolumeTensor, offset: [usize; 3], size: [usize; 3]) -> VolumeTensor {
    assert!(
        (0..3).all(|a| offset[a] + size[a] <= vol.shape[a]),
        "crop out of bounds"
    );
    let mut out = VolumeTensor::new(size, vol.spacing_mm, vol.domain).expect("valid size");
    for d in 0..size[2] {
        for h in 0..size[0] {
            let src_off =
                ((offset[2] + d) * vol.shape[0] + (offset[0] + h)) * vol.shape[1] + offset[1];
            let dst_off = (d * size[0] + h) * size[1];
            out.data[dst_off..dst_off + size[1]]
                .copy_from_slice(&vol.data[src_off..src_off + size[1]]);
        }
    }
    out
}

pub fn crop_mask_at(mask: &MaskVolume, offset: [usize; 3], size: [usize; 3]) -> MaskVolume {
    let mut out = MaskVolume::zeros(size);
    for d in 0..size[2] {
        for h in 0..size[0] {
            let src_off =
                ((offset[2] + d) * mask.shape[0] + (offset[0] + h)) * mask.shape[1] + offset[1];
            let dst_off = (d * size[0] + h) * size[1];
            out.data[dst_off..dst_off + size[1]]
                .copy_from_slice(&mask.data[src_off..src_off + size[1]]);
        }
    }
    out
}

/// Centered crop window; lower index on ties.
pub fn center_crop(vol: &VolumeTensor, size: [usize; 3]) -> VolumeTensor {
    let offset = center_offset(vol.shape, size);
    crop_at(vol, offset, size)
}

pub fn center_offset(shape: [usize; 3], size: [usize; 3]) -> [usize; 3] {
    assert!((0..3).all(|a| size[a] <= shape[a]), "crop larger than volume");
    [
        (shape[0] - size[0]) / 2,
        (shape[1] - size[1]) / 2,
        (shape[2] - size[2]) / 2,
    ]
}

/// Uniform random crop offset, deterministic in the rng.
pub fn random_crop_offset(shape: [usize; 3], size: [usize; 3], rng: &mut ChaCha8Rng) -> [usize; 3] {
    assert!((0..3).all(|a| size[a] <= shape[a]), "crop larger than volume");
    let mut off = [0usize; 3];
    for a in 0..3 {
        off[a] = rng.gen_range(0..=(shape[a] - size[a]));
    }
    off
}

pub fn random_crop(vol: &VolumeTensor, size: [usize; 3], rng: &mut ChaCha8Rng) -> VolumeTensor {
    let off = random_crop_offset(vol.shape, size, rng);
    crop_at(vol, off, size)
}

/// Otsu threshold over a 256-bin histogram: maximizes between-class variance.
/// Returns the threshold value; voxels strictly above it are foreground.
pub fn otsu_threshold(vol: &VolumeTensor) -> Result<f64, CoreError> {
    let (min, max) = vol
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !(max > min) {
        return Err(CoreError::Data(
            "otsu requires at least two distinct values".into(),
        ));
    }
    const BINS: usize = 256;
    let width = (max - min) / BINS as f64;
    let mut hist = [0u64; BINS];
    for &v in &vol.data {
        let b = (((v - min) / width) as usize).min(BINS - 1);
        hist[b] += 1;
    }
    let total = vol.data.len() as f64;
    let bin_center = |b: usize| min + (b as f64 + 0.5) * width;
    let global_sum: f64 = hist
        .iter()
        .enumerate()
        .map(|(b, &c)| c as f64 * bin_center(b))
        .sum();
    let mut best_t = 0usize;
    let mut best_var = f64::NEG_INFINITY;
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    for t in 0..BINS - 1 {
        w0 += hist[t] as f64;
        sum0 += hist[t] as f64 * bin_center(t);
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (global_sum - sum0) / w1;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if var > best_var {
            best_var = var;
            best_t = t;
        }
    }
    // Threshold at the upper edge of the winning bin.
    Ok(min + (best_t as f64 + 1.0) * width)
}

/// Binary foreground mask from the Otsu threshold (1 = above threshold).
pub fn otsu_foreground(vol: &VolumeTensor) -> Result<MaskVolume, CoreError> {
    let thr = otsu_threshold(vol)?;
    let mut mask = MaskVolume::zeros(vol.shape);
    for (m, &v) in mask.data.iter_mut().zip(&vol.data) {
        *m = (v > thr) as u8;
    }
    Ok(mask)
}

/// Z-score the whole volume using mean/std of the masked voxels
/// (std floored at 1e-6).
pub fn zscore_foreground(vol: &VolumeTensor, mask: &MaskVolume) -> Result<VolumeTensor, CoreError> {
    if vol.shape != mask.shape {
        return Err(CoreError::DimMismatch(format!(
            "volume {:?} vs mask {:?}",
            vol.shape, mask.shape
        )));
    }
    let mut n = 0usize;
    let mut mean = 0.0;
    for (&v, &m) in vol.data.iter().zip(&mask.data) {
        if m != 0 {
            mean += v;
            n += 1;
        }
    }
    if n == 0 {
        return Err(CoreError::Data("z-score mask selects no voxels".into()));
    }
    mean /= n as f64;
    let mut var = 0.0;
    for (&v, &m) in vol.data.iter().zip(&mask.data) {
        if m != 0 {
            var += (v - mean) * (v - mean);
        }
    }
    let std = (var / n as f64).sqrt().max(1e-6);
    let mut out = vol.clone();
    for v in &mut out.data {
        *v = (*v - mean) / std;
    }
    out.domain = IntensityDomain::Zscored;
    Ok(out)
}

/// Tight bounding box of nonzero mask voxels, expanded by `margin` and
/// clamped to the volume; `(lo, hi)` are inclusive (h, w, d) corners.
pub fn mask_bbox(mask: &MaskVolume, margin: usize) -> Option<([usize; 3], [usize; 3])> {
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for d in 0..mask.shape[2] {
        for h in 0..mask.shape[0] {
            for w in 0..mask.shape[1] {
                if mask.data[(d * mask.shape[0] + h) * mask.shape[1] + w] != 0 {
                    any = true;
                    let p = [h, w, d];
                    for a in 0..3 {
                        lo[a] = lo[a].min(p[a]);
                        hi[a] = hi[a].max(p[a]);
                    }
                }
            }
        }
    }
    if !any {
        return None;
    }
    for a in 0..3 {
        lo[a] = lo[a].saturating_sub(margin);
        hi[a] = (hi[a] + margin).min(mask.shape[a] - 1);
    }
    Some((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn make(shape: [usize; 3], spacing: [f64; 3], f: impl Fn(usize, usize, usize) -> f64) -> VolumeTensor {
        let mut v = VolumeTensor::new(shape, spacing, IntensityDomain::RawHu).unwrap();
        for d in 0..shape[2] {
            for h in 0..shape[0] {
                for w in 0..shape[1] {
                    v.set(h, w, d, f(h, w, d));
                }
            }
        }
        v
    }

    #[test]
    fn resample_preserves_constants() {
        let v = make([8, 10, 6], [1.0, 1.0, 2.0], |_, _, _| 42.5);
        let r = resample(&v, [2.0, 2.0, 1.0]).unwrap();
        assert_eq!(r.shape, [4, 5, 12]);
        for &x in &r.data {
            assert!((x - 42.5).abs() < 1e-9);
        }
    }

    #[test]
    fn resample_identity_spacing_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut v = make([5, 6, 4], [1.5, 1.5, 3.0], |_, _, _| 0.0);
        for x in &mut v.data {
            *x = rng.gen::<f64>();
        }
        let r = resample(&v, [1.5, 1.5, 3.0]).unwrap();
        assert_eq!(r.shape, v.shape);
        for (a, b) in r.data.iter().zip(&v.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_linear_ramp_matches_closed_form() {
        // Ramp along W (the x axis): value = iw. 2x downsample on x.
        let v = make([4, 16, 4], [1.0, 1.0, 1.0], |_, w, _| w as f64);
        let r = resample(&v, [2.0, 1.0, 1.0]).unwrap();
        assert_eq!(r.shape, [4, 8, 4]);
        for iw in 0..8 {
            // source coordinate, clamped as the implementation clamps
            let src = ((iw as f64 + 0.5) * 2.0 - 0.5).clamp(0.0, 15.0);
            let got = r.get(1, iw, 2);
            assert!((got - src).abs() < 1e-6, "iw={iw}: {got} vs {src}");
        }
    }

    #[test]
    fn window_endpoints_map_exactly() {
        let v = make([1, 4, 1], [1.0; 3], |_, w, _| match w {
            0 => -1000.0,
            1 => -400.0,
            2 => -520.0,
            _ => 200.0,
        });
        let n = window_normalize(&v, -1000.0, 200.0).unwrap();
        assert_eq!(n.get(0, 0, 0), -1.0);
        // affine formula: 2*(v - lo)/(hi - lo) - 1
        assert!((n.get(0, 1, 0) - 0.0).abs() < 1e-12);
        assert!((n.get(0, 2, 0) - (-0.2)).abs() < 1e-12);
        assert_eq!(n.get(0, 3, 0), 1.0);
        // above-window clamps to +1
        let v2 = make([1, 1, 1], [1.0; 3], |_, _, _| 5000.0);
        assert_eq!(window_normalize(&v2, -1000.0, 200.0).unwrap().get(0, 0, 0), 1.0);
        assert!(window_normalize(&v, 5.0, 5.0).is_err());
    }

    #[test]
    fn pad_or_crop_identity_and_offsets() {
        let v = make([240, 240, 120], [1.5, 1.5, 3.0], |h, w, d| (h + w + d) as f64);
        let same = pad_or_crop(&v, [240, 240, 120]);
        assert_eq!(same.data, v.data);
        // center_crop from canvas: offsets (24, 24, 12)
        assert_eq!(center_offset([240, 240, 120], [192, 192, 96]), [24, 24, 12]);
        let c = center_crop(&v, [192, 192, 96]);
        assert_eq!(c.get(0, 0, 0), (24 + 24 + 12) as f64);
    }

    #[test]
    fn padding_fills_with_negative_one() {
        let v = make([2, 2, 2], [1.0; 3], |_, _, _| 0.5);
        let p = pad_or_crop(&v, [4, 4, 4]);
        assert_eq!(p.get(0, 0, 0), -1.0);
        assert_eq!(p.get(1, 1, 1), 0.5);
        assert_eq!(p.get(2, 2, 2), 0.5);
        assert_eq!(p.get(3, 3, 3), -1.0);
    }

    #[test]
    fn random_crop_is_reproducible() {
        let v = make([10, 10, 10], [1.0; 3], |h, w, d| (h * 100 + w * 10 + d) as f64);
        let mut r1 = ChaCha8Rng::seed_from_u64(77);
        let mut r2 = ChaCha8Rng::seed_from_u64(77);
        assert_eq!(
            random_crop(&v, [4, 4, 4], &mut r1).data,
            random_crop(&v, [4, 4, 4], &mut r2).data
        );
    }

    #[test]
    fn otsu_separates_perfect_bimodal() {
        let v = make([4, 4, 2], [1.0; 3], |h, _, _| if h < 2 { 0.0 } else { 100.0 });
        let m = otsu_foreground(&v).unwrap();
        for d in 0..2 {
            for h in 0..4 {
                for w in 0..4 {
                    let expected = (h >= 2) as u8;
                    assert_eq!(m.data[m.idx(h, w, d)], expected);
                }
            }
        }
        let flat = make([2, 2, 2], [1.0; 3], |_, _, _| 3.0);
        assert!(otsu_foreground(&flat).is_err());
    }

    #[test]
    fn otsu_matches_exhaustive_search_on_trimodal() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut v = VolumeTensor::new([8, 8, 4], [1.0; 3], IntensityDomain::RawHu).unwrap();
        for x in &mut v.data {
            let r: f64 = rng.gen();
            *x = if r < 0.4 {
                rng.gen_range(-10.0..10.0)
            } else if r < 0.7 {
                rng.gen_range(80.0..120.0)
            } else {
                rng.gen_range(190.0..230.0)
            };
        }
        let thr = otsu_threshold(&v).unwrap();

        // Brute-force oracle: recompute between-class variance per bin split.
        let (min, max) = v
            .data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        let width = (max - min) / 256.0;
        let bin_of = |x: f64| (((x - min) / width) as usize).min(255);
        let mut best = (0usize, f64::NEG_INFINITY);
        for t in 0..255 {
            let (mut n0, mut s0, mut n1, mut s1) = (0.0, 0.0, 0.0, 0.0);
            for &x in &v.data {
                let c = min + (bin_of(x) as f64 + 0.5) * width;
                if bin_of(x) <= t {
                    n0 += 1.0;
                    s0 += c;
                } else {
                    n1 += 1.0;
                    s1 += c;
                }
            }
            if n0 == 0.0 || n1 == 0.0 {
                continue;
            }
            let var = n0 * n1 * (s0 / n0 - s1 / n1).powi(2);
            if var > best.1 {
                best = (t, var);
            }
        }
        let oracle_thr = min + (best.0 as f64 + 1.0) * width;
        assert!((thr - oracle_thr).abs() < 1e-9);
    }

    #[test]
    fn zscore_masked_voxels_have_unit_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut v = VolumeTensor::new([6, 6, 3], [1.0; 3], IntensityDomain::RawHu).unwrap();
        for x in &mut v.data {
            *x = rng.gen_range(50.0..150.0);
        }
        let mut mask = MaskVolume::zeros(v.shape);
        for (i, m) in mask.data.iter_mut().enumerate() {
            *m = (i % 3 == 0) as u8;
        }
        let z = zscore_foreground(&v, &mask).unwrap();
        let vals: Vec<f64> = z
            .data
            .iter()
            .zip(&mask.data)
            .filter(|(_, m)| **m != 0)
            .map(|(v, _)| *v)
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let std = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64)
            .sqrt();
        assert!(mean.abs() < 1e-6);
        assert!((std - 1.0).abs() < 1e-6);
        assert!(z.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn bbox_with_margin_clamps_to_volume() {
        let mut mask = MaskVolume::zeros([10, 10, 10]);
        let i = mask.idx(3, 4, 5);
        mask.data[i] = 1;
        let (lo, hi) = mask_bbox(&mask, 5).unwrap();
        assert_eq!(lo, [0, 0, 0]);
        assert_eq!(hi, [8, 9, 9]);
        assert!(mask_bbox(&MaskVolume::zeros([2, 2, 2]), 1).is_none());
    }
}
