//! Slice-montage PNG export with heatmap alpha blending.

use crate::corpus::volume::VolumeTensor;
use crate::error::CoreError;
use crate::interp::Heatmap;
use std::path::Path;

const BLEND_ALPHA: f64 = 0.55;

/// Write a per-slice montage: grayscale volume with the heatmap blended in a
/// hot colormap. The heatmap is clipped at the given quantile (default 0.99)
/// before color mapping; a zero heatmap yields a pure grayscale montage.
pub fn overlay_export(
    heatmap: &Heatmap,
    volume: &VolumeTensor,
    path: &Path,
    quantile: f64,
) -> Result<(), CoreError> {
    if heatmap.shape != volume.shape {
        return Err(CoreError::DimMismatch(format!(
            "heatmap {:?} vs volume {:?}",
            heatmap.shape, volume.shape
        )));
    }
    if !(0.0..=1.0).contains(&quantile) {
        return Err(CoreError::Config(format!(
            "quantile must be in [0,1], got {quantile}"
        )));
    }
    let [h, w, d] = volume.shape;
    let cols = (d as f64).sqrt().ceil() as usize;
    let rows = d.div_ceil(cols);
    let (img_w, img_h) = ((cols * w) as u32, (rows * h) as u32);
    let mut img = image::RgbImage::new(img_w, img_h);

    // quantile clip for display scaling
    let mut sorted: Vec<f64> = heatmap.data.clone();
    sorted.sort_by(f64::total_cmp);
    let qi = ((sorted.len() - 1) as f64 * quantile).round() as usize;
    let clip = sorted[qi];
    let scale = if clip > 0.0 { 1.0 / clip } else { 0.0 };

    for slice in 0..d {
        let (tile_r, tile_c) = (slice / cols, slice % cols);
        for ih in 0..h {
            for iw in 0..w {
                let idx = (slice * h + ih) * w + iw;
                let gray = ((volume.data[idx].clamp(-1.0, 1.0) + 1.0) / 2.0 * 255.0) as u8;
                let heat = (heatmap.data[idx] * scale).min(1.0);
                let (r, g, b) = if heat > 0.0 {
                    let hot = hot_color(heat);
                    let a = BLEND_ALPHA * heat;
                    (
                        ((1.0 - a) * gray as f64 + a * hot.0 * 255.0) as u8,
                        ((1.0 - a) * gray as f64 + a * hot.1 * 255.0) as u8,
                        ((1.0 - a) * gray as f64 + a * hot.2 * 255.0) as u8,
                    )
                } else {
                    (gray, gray, gray)
                };
                img.put_pixel(
                    (tile_c * w + iw) as u32,
                    (tile_r * h + ih) as u32,
                    image::Rgb([r, g, b]),
                );
            }
        }
    }
    img.save(path)
        .map_err(|e| CoreError::Data(format!("write {}: {e}", path.display())))
}

fn hot_color(x: f64) -> (f64, f64, f64) {
    let r = (3.0 * x).min(1.0);
    let g = (3.0 * x - 1.0).clamp(0.0, 1.0);
    let b = (3.0 * x - 2.0).clamp(0.0, 1.0);
    (r, g, b)
}
