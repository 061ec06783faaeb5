//! In-memory training dataset: preprocessed canvas volumes, masks, tokens,
//! and labels, with crop helpers.

use crate::corpus::manifest::{read_manifest, Split};
use crate::corpus::preprocess::{center_offset, crop_at, crop_mask_at, random_crop_offset};
use crate::corpus::presets::{preprocess_ct_mask, PreprocessMode, PreprocessSpec};
use crate::corpus::volume::{MaskVolume, VolumeTensor};
use crate::encoders::Tokenizer;
use crate::error::CoreError;
use crate::schema::LabelSchema;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct TrainStudy {
    pub id: String,
    pub labels: Vec<i8>,
    pub tokens: Vec<u32>,
    pub report: String,
    /// Preprocessed to the preset canvas.
    pub volume: VolumeTensor,
    pub mask: Option<MaskVolume>,
    pub split: Split,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub studies: Vec<TrainStudy>,
    pub schema: LabelSchema,
    pub spec: PreprocessSpec,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Replace manifest labels with these (by study id); studies absent from
    /// the map are dropped (e.g. flagged extractions).
    pub labels_override: Option<HashMap<String, Vec<i8>>>,
    /// Keep only these category indices (consensus filtering).
    pub keep_categories: Option<Vec<usize>>,
    /// Skip loading masks even when the manifest has them.
    pub skip_masks: bool,
}

impl Dataset {
    pub fn load(
        manifest_path: &Path,
        spec: &PreprocessSpec,
        schema: &LabelSchema,
        tokenizer: &Tokenizer,
        max_tokens: usize,
        opts: &LoadOptions,
    ) -> Result<Self, CoreError> {
        spec.validate()?;
        let records = read_manifest(manifest_path, spec.min_slices)?;
        let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let effective_schema = match &opts.keep_categories {
            Some(keep) => schema.subset(keep)?,
            None => schema.clone(),
        };
        let mut studies = Vec::with_capacity(records.len());
        for rec in &records {
            if rec.schema != schema.name {
                return Err(CoreError::SchemaMismatch(format!(
                    "study {}: manifest schema {} but expected {}",
                    rec.study_id, rec.schema, schema.name
                )));
            }
            let mut labels = match &opts.labels_override {
                Some(map) => match map.get(&rec.study_id) {
                    Some(l) => l.clone(),
                    None => continue, // flagged or unlabeled study
                },
                None => rec.labels.clone(),
            };
            if labels.len() != schema.arity() {
                return Err(CoreError::SchemaMismatch(format!(
                    "study {}: {} labels but schema {} has arity {}",
                    rec.study_id,
                    labels.len(),
                    schema.name,
                    schema.arity()
                )));
            }
            if let Some(keep) = &opts.keep_categories {
                labels = keep.iter().map(|&i| labels[i]).collect();
            }
            let raw = VolumeTensor::read(&rec.volume_path(dir))?;
            let volume = crate::corpus::presets::apply_preset(&raw, spec)?;
            let mask = if opts.skip_masks || spec.mode != PreprocessMode::CtWindow {
                None
            } else {
                match rec.mask_path(dir) {
                    Some(p) if p.exists() => {
                        let m = MaskVolume::read(&p)?;
                        Some(preprocess_ct_mask(&m, raw.spacing_mm, spec))
                    }
                    _ => None,
                }
            };
            studies.push(TrainStudy {
                id: rec.study_id.clone(),
                labels,
                tokens: tokenizer.encode(&rec.report, max_tokens),
                report: rec.report.clone(),
                volume,
                mask,
                split: rec.split,
            });
        }
        if studies.is_empty() {
            return Err(CoreError::Data("dataset is empty after filtering".into()));
        }
        Ok(Dataset {
            studies,
            schema: effective_schema,
            spec: spec.clone(),
        })
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.studies
            .iter()
            .enumerate()
            .filter(|(_, s)| s.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Random training crop; volume and mask share the offset.
    pub fn train_crop(
        &self,
        idx: usize,
        rng: &mut ChaCha8Rng,
    ) -> (VolumeTensor, Option<MaskVolume>) {
        let s = &self.studies[idx];
        let off = random_crop_offset(s.volume.shape, self.spec.train_crop, rng);
        (
            crop_at(&s.volume, off, self.spec.train_crop),
            s.mask.as_ref().map(|m| crop_mask_at(m, off, self.spec.train_crop)),
        )
    }

    /// Deterministic evaluation crop (centered).
    pub fn eval_crop(&self, idx: usize) -> (VolumeTensor, Option<MaskVolume>) {
        let s = &self.studies[idx];
        let off = center_offset(s.volume.shape, self.spec.train_crop);
        (
            crop_at(&s.volume, off, self.spec.train_crop),
            s.mask.as_ref().map(|m| crop_mask_at(m, off, self.spec.train_crop)),
        )
    }

    /// Number of anatomy classes in the masks (air + body + one per
    /// category of the *full* corpus schema).
    pub fn n_seg_classes(&self) -> usize {
        self.studies
            .iter()
            .filter_map(|s| s.mask.as_ref())
            .flat_map(|m| m.data.iter())
            .map(|&c| c as usize + 1)
            .max()
            .unwrap_or(2)
            .max(2)
    }
}
