//! Preprocessing recipes and the bundled presets.

use crate::corpus::preprocess as pp;
use crate::corpus::volume::{MaskVolume, VolumeTensor};
use crate::error::CoreError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessMode {
    CtWindow,
    MriZscore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub name: String,
    pub mode: PreprocessMode,
    /// (x, y, z) mm.
    pub target_spacing_mm: [f64; 3],
    /// HU window (CT mode only).
    pub clip_lo: f64,
    pub clip_hi: f64,
    /// (H, W, D). For MRI mode this is the resize target.
    pub canvas: [usize; 3],
    /// (H, W, D) training crop.
    pub train_crop: [usize; 3],
    /// Margin around the Otsu bounding box (MRI mode).
    #[serde(default = "default_otsu_margin")]
    pub otsu_margin: usize,
    /// Studies with fewer slices than this are dropped at manifest read.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_slices: Option<usize>,
}

fn default_otsu_margin() -> usize {
    5
}

impl PreprocessSpec {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.clip_lo < self.clip_hi) {
            return Err(CoreError::Config(format!(
                "preset {}: clip_lo must be < clip_hi",
                self.name
            )));
        }
        if (0..3).any(|a| self.train_crop[a] > self.canvas[a]) {
            return Err(CoreError::Config(format!(
                "preset {}: train_crop must fit in canvas",
                self.name
            )));
        }
        if self.target_spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(CoreError::Config(format!(
                "preset {}: spacing must be positive",
                self.name
            )));
        }
        Ok(())
    }
}

pub fn preset_chest() -> PreprocessSpec {
    PreprocessSpec {
        name: "chest".into(),
        mode: PreprocessMode::CtWindow,
        target_spacing_mm: [1.5, 1.5, 3.0],
        clip_lo: -1000.0,
        clip_hi: 200.0,
        canvas: [240, 240, 120],
        train_crop: [192, 192, 96],
        otsu_margin: 5,
        min_slices: None,
    }
}

pub fn preset_abdomen() -> PreprocessSpec {
    PreprocessSpec {
        name: "abdomen".into(),
        mode: PreprocessMode::CtWindow,
        target_spacing_mm: [1.5, 1.5, 3.0],
        clip_lo: -1000.0,
        clip_hi: 1000.0,
        canvas: [280, 280, 180],
        train_crop: [224, 224, 144],
        otsu_margin: 5,
        min_slices: None,
    }
}

pub fn preset_abd_5mm() -> PreprocessSpec {
    PreprocessSpec {
        name: "abd-5mm".into(),
        target_spacing_mm: [1.5, 1.5, 5.0],
        min_slices: Some(50),
        ..preset_abdomen()
    }
}

pub fn preset_mri() -> PreprocessSpec {
    PreprocessSpec {
        name: "mri".into(),
        mode: PreprocessMode::MriZscore,
        // In-plane groups are resampled to a reference series' spacing
        // upstream; the recipe here is shape-driven.
        target_spacing_mm: [1.0, 1.0, 1.0],
        clip_lo: -1.0,
        clip_hi: 1.0,
        canvas: [240, 240, 24],
        train_crop: [192, 192, 20],
        otsu_margin: 5,
        min_slices: None,
    }
}

/// Small-footprint preset used by the synthetic corpus.
pub fn preset_desk() -> PreprocessSpec {
    PreprocessSpec {
        name: "desk".into(),
        mode: PreprocessMode::CtWindow,
        target_spacing_mm: [1.0, 1.0, 1.0],
        clip_lo: -1000.0,
        clip_hi: 300.0,
        canvas: [40, 40, 20],
        train_crop: [32, 32, 16],
        otsu_margin: 5,
        min_slices: None,
    }
}

pub fn preset_by_name(name: &str) -> Option<PreprocessSpec> {
    match name {
        "chest" => Some(preset_chest()),
        "abdomen" => Some(preset_abdomen()),
        "abd-5mm" => Some(preset_abd_5mm()),
        "mri" => Some(preset_mri()),
        "desk" => Some(preset_desk()),
        _ => None,
    }
}

/// Full CT recipe: resample → window-normalize → pad/crop to canvas.
pub fn preprocess_ct_volume(vol: &VolumeTensor, spec: &PreprocessSpec) -> Result<VolumeTensor, CoreError> {
    let r = pp::resample(vol, spec.target_spacing_mm)?;
    let n = pp::window_normalize(&r, spec.clip_lo, spec.clip_hi)?;
    Ok(pp::pad_or_crop(&n, spec.canvas))
}

/// Mask path of the CT recipe (nearest-neighbor, fill 0).
pub fn preprocess_ct_mask(
    mask: &MaskVolume,
    in_spacing_mm: [f64; 3],
    spec: &PreprocessSpec,
) -> MaskVolume {
    let r = pp::resample_mask_nearest(mask, in_spacing_mm, spec.target_spacing_mm);
    pp::pad_or_crop_mask(&r, spec.canvas)
}

/// MRI recipe: Otsu foreground → bounding-box crop with margin → z-score on
/// foreground voxels → pad up to the target aspect → resize to canvas.
pub fn preprocess_mri_volume(vol: &VolumeTensor, spec: &PreprocessSpec) -> Result<VolumeTensor, CoreError> {
    let fg = pp::otsu_foreground(vol)?;
    let (lo, hi) = pp::mask_bbox(&fg, spec.otsu_margin)
        .ok_or_else(|| CoreError::Data("otsu found no foreground".into()))?;
    let size = [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1];
    let cropped = pp::crop_at(vol, lo, size);
    let fg_cropped = pp::crop_mask_at(&fg, lo, size);
    let z = pp::zscore_foreground(&cropped, &fg_cropped)?;
    // Pad (never crop) so no anatomy is lost before the resize.
    let padded_shape = [
        z.shape[0].max(spec.canvas[0]),
        z.shape[1].max(spec.canvas[1]),
        z.shape[2].max(spec.canvas[2]),
    ];
    let padded = if padded_shape != z.shape {
        pp::pad_or_crop(&z, padded_shape)
    } else {
        z
    };
    pp::resize_to_shape(&padded, spec.canvas)
}

pub fn apply_preset(vol: &VolumeTensor, spec: &PreprocessSpec) -> Result<VolumeTensor, CoreError> {
    spec.validate()?;
    match spec.mode {
        PreprocessMode::CtWindow => preprocess_ct_volume(vol, spec),
        PreprocessMode::MriZscore => preprocess_mri_volume(vol, spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::volume::IntensityDomain;

    #[test]
    fn bundled_presets_carry_published_values() {
        let chest = preset_chest();
        assert_eq!(chest.target_spacing_mm, [1.5, 1.5, 3.0]);
        assert_eq!((chest.clip_lo, chest.clip_hi), (-1000.0, 200.0));
        assert_eq!(chest.canvas, [240, 240, 120]);
        assert_eq!(chest.train_crop, [192, 192, 96]);

        let abd = preset_abdomen();
        assert_eq!(abd.target_spacing_mm, [1.5, 1.5, 3.0]);
        assert_eq!((abd.clip_lo, abd.clip_hi), (-1000.0, 1000.0));
        assert_eq!(abd.canvas, [280, 280, 180]);
        assert_eq!(abd.train_crop, [224, 224, 144]);

        let abd5 = preset_abd_5mm();
        assert_eq!(abd5.target_spacing_mm, [1.5, 1.5, 5.0]);
        assert_eq!(abd5.canvas, abd.canvas);
        assert_eq!(abd5.min_slices, Some(50));

        let mri = preset_mri();
        assert_eq!(mri.mode, PreprocessMode::MriZscore);
        assert_eq!(mri.canvas, [240, 240, 24]);
        assert_eq!(mri.train_crop, [192, 192, 20]);

        for p in ["chest", "abdomen", "abd-5mm", "mri", "desk"] {
            preset_by_name(p).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn mri_recipe_produces_canvas_shape_with_unit_foreground() {
        let mut vol =
            VolumeTensor::new([30, 32, 10], [1.0; 3], IntensityDomain::RawHu).unwrap();
        // bright blob on dark background
        for d in 0..10 {
            for h in 0..30 {
                for w in 0..32 {
                    let v = if (8..20).contains(&h) && (10..24).contains(&w) && (2..8).contains(&d)
                    {
                        200.0 + ((h * w + d) % 7) as f64
                    } else {
                        5.0 + ((h + w + d) % 3) as f64
                    };
                    vol.set(h, w, d, v);
                }
            }
        }
        let mut spec = preset_mri();
        spec.canvas = [24, 24, 8];
        spec.train_crop = [16, 16, 6];
        let out = apply_preset(&vol, &spec).unwrap();
        assert_eq!(out.shape, [24, 24, 8]);
        assert!(out.data.iter().all(|v| v.is_finite()));
    }
}
