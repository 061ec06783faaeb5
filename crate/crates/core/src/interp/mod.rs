//! Prompt-conditioned Grad-CAM over the vision encoder's last convolutional
//! stage, plus slice-montage export.

pub mod overlay;

pub use overlay::overlay_export;

use crate::corpus::preprocess::resize_to_shape;
use crate::corpus::volume::{IntensityDomain, VolumeTensor};
use crate::encoders::{volume_to_input, AlignedModel};
use crate::error::CoreError;
use crate::nn::dot;

/// Nonnegative localization map at input resolution. Values are the raw
/// upsampled ReLU-weighted feature combination; display normalization happens
/// only at export.
#[derive(Debug, Clone)]
pub struct Heatmap {
    /// Same shape and layout as the input volume.
    pub shape: [usize; 3],
    pub data: Vec<f64>,
    pub prompt: String,
    /// The similarity score S = sim(f_I(volume), f_T(prompt)).
    pub score: f64,
}

/// Grad-CAM: S = z·t with z the image embedding and t the prompt embedding;
/// channel weights are the spatial mean of ∂S/∂A_k over the last-stage
/// feature maps; the map is ReLU(Σ_k α_k A_k) upsampled trilinearly.
pub fn gradcam(
    model: &AlignedModel,
    volume: &VolumeTensor,
    prompt: &str,
) -> Result<Heatmap, CoreError> {
    let tokens = model.tokenizer.encode(prompt, model.text.cfg.max_tokens);
    if tokens.len() <= 1 {
        return Err(CoreError::Data(format!(
            "prompt {prompt:?} tokenizes to an empty body"
        )));
    }
    let t_embed = model.text.forward(&tokens)?;
    let tape = model.vision.forward_train(&volume_to_input(volume))?;
    let score = dot(&tape.embed, &t_embed);
    // ∂S/∂A at the feature map; for GAP pooling this is spatially constant.
    let d_fmap = model.vision.fmap_gradient(&tape, &t_embed);
    let fmap = &tape.fmap;
    let c = fmap.shape[0];
    let spatial = fmap.numel() / c;
    let z_count = spatial as f64;
    let mut coarse = vec![0.0; spatial];
    for ch in 0..c {
        let alpha: f64 =
            d_fmap.data[ch * spatial..(ch + 1) * spatial].iter().sum::<f64>() / z_count;
        let a = &fmap.data[ch * spatial..(ch + 1) * spatial];
        for (m, &av) in coarse.iter_mut().zip(a) {
            *m += alpha * av;
        }
    }
    for m in &mut coarse {
        if *m < 0.0 {
            *m = 0.0;
        }
    }
    // fmap spatial dims are (D', H', W') == d-major volume layout (H', W', D')
    let coarse_vol = VolumeTensor {
        shape: [fmap.shape[2], fmap.shape[3], fmap.shape[1]],
        spacing_mm: volume.spacing_mm,
        domain: IntensityDomain::Normalized,
        data: coarse,
    };
    let up = resize_to_shape(&coarse_vol, volume.shape)?;
    Ok(Heatmap {
        shape: volume.shape,
        data: up.data,
        prompt: prompt.to_string(),
        score,
    })
}

impl Heatmap {
    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(0.0, f64::max)
    }

    /// Binary mask of the top `fraction` of voxels by value (e.g. 0.1 for the
    /// top decile). Ties at the cutoff resolve by voxel index.
    pub fn top_fraction_mask(&self, fraction: f64) -> Vec<bool> {
        let n = self.data.len();
        let k = ((n as f64) * fraction).round().max(1.0) as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| self.data[b].total_cmp(&self.data[a]).then(a.cmp(&b)));
        let mut mask = vec![false; n];
        for &i in order.iter().take(k) {
            mask[i] = true;
        }
        mask
    }
}

/// Intersection-over-union of two binary masks.
pub fn mask_iou(a: &[bool], b: &[bool]) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        if x && y {
            inter += 1;
        }
        if x || y {
            union += 1;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}
