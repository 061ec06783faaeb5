//! Synthetic corpus generation, volumetric preprocessing, and manifests.

pub mod manifest;
pub mod preprocess;
pub mod presets;
pub mod synth;
pub mod volume;

pub use manifest::{read_manifest, write_manifest, Split, StudyRecord};
pub use presets::{preset_by_name, PreprocessMode, PreprocessSpec};
pub use synth::{
    mask_class_of, sentence_is_label_related, synth_corpus, write_corpus, SynthParams, SynthStudy,
};
pub use volume::{IntensityDomain, MaskVolume, VolumeTensor};
