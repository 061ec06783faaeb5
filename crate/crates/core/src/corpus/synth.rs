//! Synthetic labeled volumetric corpus.
//!
//! Each study draws a label vector, renders every positive finding as a
//! distinct parametric 3D structure over a smooth body background, writes an
//! anatomy mask (air / body / per-finding classes), and emits a templated
//! report: one sentence per positive finding, explicit negations for a random
//! subset of negatives, nothing for uncertain labels, plus a few
//! label-unrelated filler sentences. Ground truth is exact by construction.

use crate::corpus::manifest::{write_manifest, Split, StudyRecord};
use crate::corpus::volume::{IntensityDomain, MaskVolume, VolumeTensor};
use crate::derive_seed;
use crate::error::CoreError;
use crate::schema::{LabelSchema, LabelVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub n_studies: usize,
    /// (H, W, D) of generated volumes.
    pub shape: [usize; 3],
    pub spacing_mm: [f64; 3],
    /// P(label = 1) per category.
    pub prevalence: f64,
    /// P(label = -1) per category.
    pub uncertain_rate: f64,
    /// P(negation sentence | label = 0).
    pub negation_rate: f64,
    /// Inclusive range of filler sentences per report.
    pub fillers: (usize, usize),
    /// Scale on the per-category HU contrasts.
    pub contrast_scale: f64,
    /// Per-voxel Gaussian noise inside the body (HU).
    pub noise_hu: f64,
    /// Amplitude of the smooth background field (HU).
    pub smooth_hu: f64,
    /// Render uncertain findings at 0.3x contrast.
    pub render_uncertain_faint: bool,
    /// Train/val/test fractions; must sum to 1.
    pub split_fractions: (f64, f64, f64),
    /// When set, every study uses exactly this label vector.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forced_labels: Option<Vec<i8>>,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_studies: 500,
            shape: [40, 40, 20],
            spacing_mm: [1.0, 1.0, 1.0],
            prevalence: 0.30,
            uncertain_rate: 0.10,
            negation_rate: 0.5,
            fillers: (1, 3),
            contrast_scale: 1.0,
            noise_hu: 15.0,
            smooth_hu: 10.0,
            render_uncertain_faint: false,
            split_fractions: (0.7, 0.15, 0.15),
            forced_labels: None,
        }
    }
}

/// HU offsets per category slot (cycled for arities beyond 8). Bands are
/// well separated so each finding has a distinct local appearance; three
/// slots are dark findings.
const CONTRASTS: [f64; 8] = [250.0, 170.0, -300.0, 90.0, 210.0, -150.0, -480.0, 130.0];

const BODY_HU: f64 = 40.0;
const AIR_HU: f64 = -1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
enum StructureKind {
    Blob,
    Shell,
    Stripe,
}

/// Fractional home position of each category slot within the volume.
fn home_fraction(c: usize) -> [f64; 3] {
    let corner = c % 8;
    [
        if corner & 1 == 0 { 0.30 } else { 0.70 },
        if corner & 2 == 0 { 0.30 } else { 0.70 },
        if corner & 4 == 0 { 0.35 } else { 0.65 },
    ]
}

fn region_name(c: usize) -> &'static str {
    match c % 8 {
        0 => "left upper zone",
        1 => "right upper zone",
        2 => "left lower zone",
        3 => "right lower zone",
        4 => "left apical zone",
        5 => "right apical zone",
        6 => "left basal zone",
        7 => "right basal zone",
        _ => unreachable!(),
    }
}

const FILLER_POOL: [&str; 8] = [
    "The study is of adequate quality.",
    "Findings are otherwise unremarkable.",
    "Slice thickness is standard for this protocol.",
    "Image noise is within normal limits.",
    "The examination is compatible with prior imaging.",
    "Soft tissue structures appear symmetric.",
    "Osseous structures are intact.",
    "Visualized airways are patent.",
];

#[derive(Debug, Clone)]
pub struct SynthStudy {
    pub study_id: String,
    pub volume: VolumeTensor,
    pub mask: MaskVolume,
    pub labels: LabelVector,
    /// (sentence, is_label_related) in report order.
    pub sentences: Vec<(String, bool)>,
    pub report: String,
    pub split: Split,
}

/// Mask class of category `c`'s structure (0 = air, 1 = body).
pub fn mask_class_of(c: usize) -> u8 {
    (c + 2) as u8
}

pub fn synth_corpus(
    seed: u64,
    schema: &LabelSchema,
    params: &SynthParams,
) -> Result<Vec<SynthStudy>, CoreError> {
    validate_params(schema, params)?;
    let n = params.n_studies;
    let (f_tr, f_va, _) = params.split_fractions;
    let n_train = ((n as f64) * f_tr).round() as usize;
    let n_val = ((n as f64) * f_va).round() as usize;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let split = if i < n_train {
            Split::Train
        } else if i < (n_train + n_val).min(n) {
            Split::Val
        } else {
            Split::Test
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5159, i as u64));
        out.push(synth_study(i, split, schema, params, &mut rng));
    }
    Ok(out)
}

fn validate_params(schema: &LabelSchema, params: &SynthParams) -> Result<(), CoreError> {
    if params.n_studies == 0 {
        return Err(CoreError::Config("n_studies must be >= 1".into()));
    }
    if !schema.allows(1) || !schema.allows(0) || !schema.allows(-1) {
        return Err(CoreError::Config(format!(
            "synthesis requires a {{-1,0,1}} schema, got {:?}",
            schema.value_domain
        )));
    }
    if params.shape.iter().any(|&s| s < 16) || params.shape[2] < 12 {
        return Err(CoreError::Config(format!(
            "shape {:?} too small to place structures (need >= 16x16x12)",
            params.shape
        )));
    }
    let s = params.split_fractions;
    if (s.0 + s.1 + s.2 - 1.0).abs() > 1e-9 || s.0 < 0.0 || s.1 < 0.0 || s.2 < 0.0 {
        return Err(CoreError::Config("split fractions must sum to 1".into()));
    }
    if let Some(f) = &params.forced_labels {
        LabelVector::new(schema, f.clone())?;
    }
    if !(params.prevalence >= 0.0
        && params.uncertain_rate >= 0.0
        && params.prevalence + params.uncertain_rate <= 1.0)
    {
        return Err(CoreError::Config(
            "prevalence + uncertain_rate must be in [0,1]".into(),
        ));
    }
    Ok(())
}

fn draw_labels(schema: &LabelSchema, params: &SynthParams, rng: &mut ChaCha8Rng) -> Vec<i8> {
    if let Some(f) = &params.forced_labels {
        return f.clone();
    }
    (0..schema.arity())
        .map(|_| {
            let r: f64 = rng.gen();
            if r < params.prevalence {
                1
            } else if r < params.prevalence + params.uncertain_rate {
                -1
            } else {
                0
            }
        })
        .collect()
}

struct SmoothField {
    comps: Vec<([f64; 3], f64, f64)>, // (direction freq, phase, amplitude)
}

impl SmoothField {
    fn new(amp: f64, rng: &mut ChaCha8Rng) -> Self {
        let comps = (0..3)
            .map(|_| {
                let dir = [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ];
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                (dir, phase, amp * rng.gen_range(0.5..1.0))
            })
            .collect();
        SmoothField { comps }
    }

    fn at(&self, fh: f64, fw: f64, fd: f64) -> f64 {
        self.comps
            .iter()
            .map(|(dir, phase, amp)| {
                amp * (std::f64::consts::TAU * (dir[0] * fh + dir[1] * fw + dir[2] * fd) + phase)
                    .cos()
            })
            .sum()
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn synth_study(
    index: usize,
    split: Split,
    schema: &LabelSchema,
    params: &SynthParams,
    rng: &mut ChaCha8Rng,
) -> SynthStudy {
    let labels = draw_labels(schema, params, rng);
    let [nh, nw, nd] = params.shape;
    let mut volume = VolumeTensor::new(params.shape, params.spacing_mm, IntensityDomain::RawHu)
        .expect("validated shape");
    let mut mask = MaskVolume::zeros(params.shape);

    // Body ellipsoid over a smooth background.
    let field = SmoothField::new(params.smooth_hu, rng);
    let (ch, cw, cd) = (nh as f64 / 2.0, nw as f64 / 2.0, nd as f64 / 2.0);
    let (ah, aw, ad) = (0.48 * nh as f64, 0.48 * nw as f64, 0.52 * nd as f64);
    for id in 0..nd {
        for ih in 0..nh {
            for iw in 0..nw {
                let (dh, dw, dd) = (
                    (ih as f64 - ch) / ah,
                    (iw as f64 - cw) / aw,
                    (id as f64 - cd) / ad,
                );
                let inside = dh * dh + dw * dw + dd * dd <= 1.0;
                let i = volume.idx(ih, iw, id);
                if inside {
                    let smooth =
                        field.at(ih as f64 / nh as f64, iw as f64 / nw as f64, id as f64 / nd as f64);
                    volume.data[i] = BODY_HU + smooth + params.noise_hu * gaussian(rng);
                    mask.data[i] = 1;
                } else {
                    volume.data[i] = AIR_HU;
                }
            }
        }
    }

    // Structures for positive (and optionally faint uncertain) findings.
    for (c, &lab) in labels.iter().enumerate() {
        let stamp = match lab {
            1 => Some(1.0),
            -1 if params.render_uncertain_faint => Some(0.3),
            _ => None,
        };
        // Keep the rng stream identical whether or not the finding renders.
        let jitter = [
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-0.5..0.5),
        ];
        let rscale: f64 = rng.gen_range(0.92..1.08);
        let Some(strength) = stamp else { continue };
        let frac = home_fraction(c);
        let center = [
            frac[0] * nh as f64 + jitter[0],
            frac[1] * nw as f64 + jitter[1],
            frac[2] * nd as f64 + jitter[2],
        ];
        let r = (nh.min(nw) as f64) * 0.14 * rscale;
        let rz = 0.7 * r;
        let kind = match c % 3 {
            0 => StructureKind::Blob,
            1 => StructureKind::Shell,
            _ => StructureKind::Stripe,
        };
        let delta = CONTRASTS[c % CONTRASTS.len()] * params.contrast_scale * strength;
        stamp_structure(&mut volume, &mut mask, center, r, rz, kind, delta, mask_class_of(c));
    }

    volume.quantize_f32();

    // Report sentences.
    let mut sentences: Vec<(String, bool)> = Vec::new();
    for (c, &lab) in labels.iter().enumerate() {
        let name = &schema.categories[c];
        match lab {
            1 => {
                let region = region_name(c);
                let text = match rng.gen_range(0..3) {
                    0 => format!("There is {name} in the {region}."),
                    1 => format!("There is {name}."),
                    _ => format!("{} is present in the {region}.", capitalize(name)),
                };
                sentences.push((text, true));
            }
            0 => {
                if rng.gen::<f64>() < params.negation_rate {
                    let text = match rng.gen_range(0..3) {
                        0 => format!("There is no {name}."),
                        1 => format!("No {name} is seen."),
                        _ => format!("{} is not present.", capitalize(name)),
                    };
                    sentences.push((text, true));
                }
            }
            _ => {} // uncertain: no sentence
        }
    }
    let n_fill = rng.gen_range(params.fillers.0..=params.fillers.1.max(params.fillers.0));
    let mut pool: Vec<&str> = FILLER_POOL.to_vec();
    pool.shuffle(rng);
    for f in pool.into_iter().take(n_fill) {
        sentences.push((f.to_string(), false));
    }
    sentences.shuffle(rng);
    let report = sentences
        .iter()
        .map(|(s, _)| s.as_str())
        .collect::<Vec<_>>()
        .join(" ");

    SynthStudy {
        study_id: format!("study-{index:05}"),
        volume,
        mask,
        labels: LabelVector::new(schema, labels).expect("drawn from domain"),
        sentences,
        report,
        split,
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

#[allow(clippy::too_many_arguments)]
fn stamp_structure(
    volume: &mut VolumeTensor,
    mask: &mut MaskVolume,
    center: [f64; 3],
    r: f64,
    rz: f64,
    kind: StructureKind,
    delta_hu: f64,
    class: u8,
) {
    let [nh, nw, nd] = volume.shape;
    let lo = |c: f64, rr: f64| ((c - rr).floor().max(0.0)) as usize;
    let hi = |c: f64, rr: f64, n: usize| ((c + rr).ceil() as usize).min(n - 1);
    let (h0, h1) = (lo(center[0], r), hi(center[0], r, nh));
    let (w0, w1) = (lo(center[1], r), hi(center[1], r, nw));
    let (d0, d1) = (lo(center[2], rz), hi(center[2], rz, nd));
    for id in d0..=d1 {
        for ih in h0..=h1 {
            for iw in w0..=w1 {
                let dh = (ih as f64 - center[0]) / r;
                let dw = (iw as f64 - center[1]) / r;
                let dd = (id as f64 - center[2]) / rz;
                let rho2 = dh * dh + dw * dw + dd * dd;
                let inside = match kind {
                    StructureKind::Blob => rho2 <= 1.0,
                    StructureKind::Shell => (0.3025..=1.0).contains(&rho2), // 0.55^2
                    StructureKind::Stripe => {
                        (iw as f64 - center[1]).abs() <= 2.5
                            && dh.abs() <= 1.0
                            && dd.abs() <= 1.0
                    }
                };
                if inside {
                    let i = volume.idx(ih, iw, id);
                    // findings render only on body tissue
                    if mask.data[i] >= 1 {
                        volume.data[i] += delta_hu;
                        mask.data[i] = class;
                    }
                }
            }
        }
    }
}

/// Write volumes, masks, the manifest, and the schema into `dir`.
pub fn write_corpus(
    dir: &Path,
    studies: &[SynthStudy],
    schema: &LabelSchema,
) -> Result<(), CoreError> {
    let volumes = dir.join("volumes");
    let masks = dir.join("masks");
    std::fs::create_dir_all(&volumes).map_err(|e| CoreError::io(volumes.display().to_string(), e))?;
    std::fs::create_dir_all(&masks).map_err(|e| CoreError::io(masks.display().to_string(), e))?;
    let mut records = Vec::with_capacity(studies.len());
    for s in studies {
        let vrel = format!("volumes/{}.vxvol", s.study_id);
        let mrel = format!("masks/{}.vxmsk", s.study_id);
        s.volume.write(&dir.join(&vrel))?;
        s.mask.write(&dir.join(&mrel))?;
        records.push(StudyRecord {
            study_id: s.study_id.clone(),
            volume: vrel,
            report: s.report.clone(),
            labels: s.labels.values.clone(),
            schema: schema.name.clone(),
            mask: Some(mrel),
            split: s.split,
        });
    }
    write_manifest(&dir.join("manifest.jsonl"), &records)?;
    let schema_json = serde_json::to_string_pretty(schema)
        .map_err(|e| CoreError::Data(format!("serialize schema: {e}")))?;
    std::fs::write(dir.join("schema.json"), schema_json)
        .map_err(|e| CoreError::io(dir.join("schema.json").display().to_string(), e))?;
    Ok(())
}

/// True when the sentence mentions any schema category (the production-path
/// keyword filter; exact on synthetic reports by construction).
pub fn sentence_is_label_related(sentence: &str, schema: &LabelSchema) -> bool {
    let lower = sentence.to_lowercase();
    schema
        .categories
        .iter()
        .any(|c| lower.contains(&c.to_lowercase()))
}
