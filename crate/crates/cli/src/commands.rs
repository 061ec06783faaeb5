//! Subcommand implementations.

use crate::runs::{create_run_dir, log_line, write_text};
use clap::Args;
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;
use voxalign_core::corpus::manifest::{read_manifest, Split};
use voxalign_core::corpus::presets::{preset_by_name, PreprocessSpec};
use voxalign_core::corpus::synth::{synth_corpus, write_corpus};
use voxalign_core::encoders::{AlignedModel, TextStage1, Tokenizer, VisionStage1};
use voxalign_core::eval::{
    alignment_probe, eval_retrieval, eval_zero_shot, prompt_by_index, SentenceFilter,
};
use voxalign_core::interp::{gradcam, overlay_export};
use voxalign_core::labels::{
    consensus_filter, extract_corpus, per_category_agreement, write_label_file, BackoffPolicy,
    ExtractionStatus, HttpChatClient, LabelFileRecord, LlmClient, MockReportLabeler,
};
use voxalign_core::runcfg::RunConfig;
use voxalign_core::schema::{bundled_schema, LabelSchema};
use voxalign_core::training::{
    run_joint_baseline, run_stage1_text, run_stage1_vision, run_stage2_align, Dataset,
    LoadOptions, TrainAbort, TrainingConfig, UncertainPolicy,
};
use voxalign_core::CoreError;

type Result<T> = std::result::Result<T, CoreError>;

// ---------------------------------------------------------------------------
// shared argument bundles
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Run directory; defaults to ./runs/<command>-<timestamp>.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run-config JSON file; defaults to the built-in desk config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed (and every stage seed).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// λ on the shared-classifier terms (align/joint stages).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Uncertain-label policy: ignore | map-to-negative.
    #[arg(long)]
    pub policy: Option<String>,
    /// Disable the segmentation decoder in vision pre-training.
    #[arg(long)]
    pub no_seg: bool,
    /// Ablation: L2-normalize embeddings inside the contrastive loss.
    #[arg(long)]
    pub l2_normalize: bool,
    /// Label file (JSON lines) replacing manifest labels; flagged studies
    /// are dropped.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Keep only these category indices (e.g. after consensus filtering).
    #[arg(long, value_delimiter = ',')]
    pub keep_categories: Option<Vec<usize>>,
    /// Worker threads (training itself is single-threaded; loaders may use
    /// this).
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// train | val | test
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print the metrics report as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

fn load_config(path: Option<&Path>, seed_override: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CoreError::Config(format!("cannot read config {}: {e}", p.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::desk_default(seed_override.unwrap_or(7)),
    };
    if let Some(seed) = seed_override {
        cfg.seed = seed;
        cfg.training.vision_pretrain.seed = seed;
        cfg.training.text_pretrain.seed = seed;
        cfg.training.align.seed = seed;
        cfg.training.joint.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_train_overrides(tc: &mut TrainingConfig, args: &TrainArgs) -> Result<()> {
    if let Some(e) = args.epochs {
        tc.epochs = e;
    }
    if let Some(lr) = args.lr {
        tc.lr = lr;
    }
    if let Some(b) = args.batch_size {
        tc.batch_size = b;
    }
    if let Some(l) = args.lambda {
        tc.lambda_cls = l;
    }
    if let Some(p) = &args.policy {
        tc.uncertain_policy = match p.as_str() {
            "ignore" => UncertainPolicy::Ignore,
            "map-to-negative" => UncertainPolicy::MapToNegative,
            other => {
                return Err(CoreError::Config(format!(
                    "unknown policy {other:?} (expected ignore | map-to-negative)"
                )))
            }
        };
    }
    if args.no_seg {
        tc.use_seg = false;
    }
    if args.l2_normalize {
        tc.l2_normalize = true;
    }
    tc.validate()
}

/// Schema named by the manifest's first row.
fn manifest_schema(manifest: &Path) -> Result<LabelSchema> {
    let text = std::fs::read_to_string(manifest)
        .map_err(|e| CoreError::io(manifest.display().to_string(), e))?;
    let first = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| CoreError::Data(format!("{}: empty manifest", manifest.display())))?;
    let v: serde_json::Value = serde_json::from_str(first)
        .map_err(|e| CoreError::Data(format!("{}:1: {e}", manifest.display())))?;
    let name = v["schema"]
        .as_str()
        .ok_or_else(|| CoreError::Data("manifest row has no schema field".into()))?;
    bundled_schema(name)
        .ok_or_else(|| CoreError::Data(format!("manifest uses unknown schema {name:?}")))
}

fn labels_override(path: Option<&Path>) -> Result<Option<HashMap<String, Vec<i8>>>> {
    match path {
        None => Ok(None),
        Some(p) => {
            let records = voxalign_core::labels::read_label_file(p)?;
            let mut map = HashMap::new();
            for r in records {
                if r.status == "ok" {
                    if let Some(l) = r.labels {
                        map.insert(r.study_id, l);
                    }
                }
            }
            Ok(Some(map))
        }
    }
}

fn load_dataset(
    manifest: &Path,
    spec: &PreprocessSpec,
    schema: &LabelSchema,
    tokenizer: &Tokenizer,
    max_tokens: usize,
    args_labels: Option<&Path>,
    keep: Option<&Vec<usize>>,
) -> Result<Dataset> {
    let opts = LoadOptions {
        labels_override: labels_override(args_labels)?,
        keep_categories: keep.cloned(),
        skip_masks: false,
    };
    Dataset::load(manifest, spec, schema, tokenizer, max_tokens, &opts)
}

/// Vocabulary from the train-split reports of a manifest.
fn build_tokenizer(manifest: &Path) -> Result<Tokenizer> {
    let records = read_manifest(manifest, None)?;
    let reports: Vec<&str> = records
        .iter()
        .filter(|r| r.split == Split::Train)
        .map(|r| r.report.as_str())
        .collect();
    if reports.is_empty() {
        return Err(CoreError::Data("manifest has no train-split reports".into()));
    }
    Ok(Tokenizer::build(reports))
}

fn abort_to_error(dir: &Path, abort: TrainAbort) -> CoreError {
    // Flush whatever trace exists so a divergence is inspectable.
    let _ = abort.trace.write_csv(&dir.join("trace.csv"));
    log_line(dir, &format!("aborted: {}", abort.error));
    abort.error
}

fn parse_split(s: &str) -> Result<Split> {
    s.parse()
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub fn cmd_synth(
    out: PathBuf,
    config: Option<PathBuf>,
    preset: Option<String>,
    n: Option<usize>,
    seed: Option<u64>,
    schema_name: Option<String>,
) -> Result<()> {
    let mut cfg = load_config(config.as_deref(), seed)?;
    if let Some(p) = preset {
        cfg.preset = p;
    }
    if let Some(n) = n {
        cfg.synth.n_studies = n;
    }
    if let Some(s) = schema_name {
        cfg.label_schema = s;
    }
    cfg.validate()?;
    let schema = bundled_schema(&cfg.label_schema).expect("validated");
    let studies = synth_corpus(cfg.seed, &schema, &cfg.synth)?;
    let dir = create_run_dir(Some(&out), "synth")?;
    write_corpus(&dir, &studies, &schema)?;
    write_text(&dir, "config.json", &cfg.to_json())?;
    log_line(&dir, &format!("synthesized {} studies (seed {})", studies.len(), cfg.seed));
    let by_split = |sp: Split| studies.iter().filter(|s| s.split == sp).count();
    println!(
        "wrote {} studies to {} (train {}, val {}, test {})",
        studies.len(),
        dir.display(),
        by_split(Split::Train),
        by_split(Split::Val),
        by_split(Split::Test),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// extract-labels
// ---------------------------------------------------------------------------

pub struct ExtractOpts {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub client: String,
    pub schema: Option<String>,
    pub max_attempts: usize,
    pub workers: usize,
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub backoff_ms: u64,
    pub consensus_client: Option<String>,
    pub consensus_model: Option<String>,
    pub consensus_threshold: f64,
}

fn make_client(
    kind: &str,
    schema: &LabelSchema,
    opts: &ExtractOpts,
    model: &str,
) -> Result<Box<dyn LlmClient>> {
    match kind {
        "mock" => Ok(Box::new(MockReportLabeler::new(schema.clone()))),
        "http" => Ok(Box::new(HttpChatClient::new(
            &opts.base_url,
            model,
            &opts.api_key_env,
        )?)),
        other => Err(CoreError::Config(format!(
            "unknown client {other:?} (expected mock | http)"
        ))),
    }
}

pub fn cmd_extract_labels(opts: ExtractOpts) -> Result<()> {
    let schema = match &opts.schema {
        Some(name) => bundled_schema(name)
            .ok_or_else(|| CoreError::Config(format!("unknown schema {name:?}")))?,
        None => manifest_schema(&opts.manifest)?,
    };
    let records = read_manifest(&opts.manifest, None)?;
    let reports: Vec<(String, String)> = records
        .iter()
        .map(|r| (r.study_id.clone(), r.report.clone()))
        .collect();
    let backoff = BackoffPolicy {
        base: Duration::from_millis(opts.backoff_ms),
        factor: 2.0,
    };
    let client = make_client(&opts.client, &schema, &opts, &opts.model)?;
    let outcomes = extract_corpus(
        client.as_ref(),
        &reports,
        &schema,
        opts.max_attempts,
        &backoff,
        opts.workers,
    )?;
    let file_records: Vec<LabelFileRecord> = outcomes
        .iter()
        .map(|(id, o)| LabelFileRecord::from_outcome(id, o, &schema.name))
        .collect();
    write_label_file(&opts.out, &file_records)?;
    let flagged = outcomes
        .iter()
        .filter(|(_, o)| o.status == ExtractionStatus::FlaggedForReview)
        .count();
    println!(
        "extracted {} studies -> {} ({} flagged for review)",
        outcomes.len(),
        opts.out.display(),
        flagged
    );

    if let Some(second_kind) = &opts.consensus_client {
        let model2 = opts.consensus_model.clone().unwrap_or_else(|| opts.model.clone());
        let client2 = make_client(second_kind, &schema, &opts, &model2)?;
        let outcomes2 = extract_corpus(
            client2.as_ref(),
            &reports,
            &schema,
            opts.max_attempts,
            &backoff,
            opts.workers,
        )?;
        // Agreement is computed over studies both clients labeled.
        let mut a = Vec::new();
        let mut b = Vec::new();
        for ((_, o1), (_, o2)) in outcomes.iter().zip(&outcomes2) {
            if let (Some(l1), Some(l2)) = (&o1.labels, &o2.labels) {
                a.push(l1.clone());
                b.push(l2.clone());
            }
        }
        if a.is_empty() {
            return Err(CoreError::Data(
                "consensus: no studies labeled by both clients".into(),
            ));
        }
        let rates = per_category_agreement(&a, &b)?;
        let kept = consensus_filter(&a, &b, opts.consensus_threshold)?;
        let dropped: Vec<usize> = (0..schema.arity()).filter(|c| !kept.contains(c)).collect();
        let report = serde_json::json!({
            "threshold": opts.consensus_threshold,
            "n_studies": a.len(),
            "agreement_rates": rates,
            "kept_categories": kept,
            "dropped_categories": dropped,
            "categories": schema.categories,
            "note": "dropped categories should be excluded from the training schema via --keep-categories",
        });
        let cpath = opts.out.with_extension("consensus.json");
        std::fs::write(&cpath, serde_json::to_string_pretty(&report).unwrap())
            .map_err(|e| CoreError::io(cpath.display().to_string(), e))?;
        println!(
            "consensus: kept {}/{} categories -> {}",
            kept.len(),
            schema.arity(),
            cpath.display()
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// training commands
// ---------------------------------------------------------------------------

pub fn cmd_pretrain_vision(args: TrainArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref(), args.seed)?;
    apply_train_overrides(&mut cfg.training.vision_pretrain, &args)?;
    let schema = manifest_schema(&args.manifest)?;
    let spec = preset_by_name(&cfg.preset).expect("validated");
    let tokenizer = build_tokenizer(&args.manifest)?;
    let ds = load_dataset(
        &args.manifest,
        &spec,
        &schema,
        &tokenizer,
        cfg.text.max_tokens,
        args.labels.as_deref(),
        args.keep_categories.as_ref(),
    )?;
    let dir = create_run_dir(args.out.as_deref(), "pretrain-vision")?;
    write_text(&dir, "config.json", &cfg.to_json())?;
    log_line(&dir, &format!("pretrain-vision on {} studies", ds.studies.len()));
    let out = run_stage1_vision(&ds, &cfg.vision, &cfg.training.vision_pretrain)
        .map_err(|a| abort_to_error(&dir, a))?;
    out.trace.write_csv(&dir.join("trace.csv"))?;
    out.model.save(&dir.join("vision.ckpt"))?;
    log_line(
        &dir,
        &format!("best epoch {} (val total {:.6})", out.best_epoch, out.best_val_total),
    );
    println!(
        "vision pre-training done: best epoch {} val total {:.6} -> {}",
        out.best_epoch,
        out.best_val_total,
        dir.display()
    );
    Ok(())
}

pub fn cmd_pretrain_text(args: TrainArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref(), args.seed)?;
    apply_train_overrides(&mut cfg.training.text_pretrain, &args)?;
    let schema = manifest_schema(&args.manifest)?;
    let spec = preset_by_name(&cfg.preset).expect("validated");
    let tokenizer = build_tokenizer(&args.manifest)?;
    let ds = load_dataset(
        &args.manifest,
        &spec,
        &schema,
        &tokenizer,
        cfg.text.max_tokens,
        args.labels.as_deref(),
        args.keep_categories.as_ref(),
    )?;
    let dir = create_run_dir(args.out.as_deref(), "pretrain-text")?;
    write_text(&dir, "config.json", &cfg.to_json())?;
    log_line(&dir, &format!("pretrain-text on {} studies", ds.studies.len()));
    let out = run_stage1_text(&ds, &tokenizer, &cfg.text, &cfg.training.text_pretrain)
        .map_err(|a| abort_to_error(&dir, a))?;
    out.trace.write_csv(&dir.join("trace.csv"))?;
    out.model.save(&dir.join("text.ckpt"))?;
    println!(
        "text pre-training done: best epoch {} val total {:.6} -> {}",
        out.best_epoch,
        out.best_val_total,
        dir.display()
    );
    Ok(())
}

pub fn cmd_align(args: TrainArgs, vision_ckpt: PathBuf, text_ckpt: PathBuf) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref(), args.seed)?;
    apply_train_overrides(&mut cfg.training.align, &args)?;
    let vision = VisionStage1::load(&vision_ckpt)?;
    let text = TextStage1::load(&text_ckpt)?;
    if vision.schema != text.schema {
        return Err(CoreError::Config(
            "vision and text checkpoints were trained on different schemas".into(),
        ));
    }
    let spec = preset_by_name(&vision.preset)
        .ok_or_else(|| CoreError::Data(format!("checkpoint preset {:?} unknown", vision.preset)))?;
    let manifest_sch = manifest_schema(&args.manifest)?;
    let keep = keep_indices_for(&manifest_sch, &vision.schema)?;
    let ds = load_dataset(
        &args.manifest,
        &spec,
        &manifest_sch,
        &text.tokenizer,
        text.encoder.cfg.max_tokens,
        args.labels.as_deref(),
        keep.as_ref(),
    )?;
    let dir = create_run_dir(args.out.as_deref(), "align")?;
    write_text(&dir, "config.json", &cfg.to_json())?;
    log_line(&dir, &format!("align on {} studies", ds.studies.len()));
    let out = run_stage2_align(&ds, &vision, &text, &cfg.training.align)
        .map_err(|a| abort_to_error(&dir, a))?;
    out.trace.write_csv(&dir.join("trace.csv"))?;
    out.model.save(&dir.join("aligned.ckpt"))?;
    println!(
        "alignment done: best epoch {} val total {:.6} -> {}",
        out.best_epoch,
        out.best_val_total,
        dir.display()
    );
    Ok(())
}

/// When a checkpoint was trained on a category subset, map its categories
/// back to indices of the manifest schema.
fn keep_indices_for(
    manifest_schema: &LabelSchema,
    model_schema: &LabelSchema,
) -> Result<Option<Vec<usize>>> {
    if manifest_schema.categories == model_schema.categories {
        return Ok(None);
    }
    let mut keep = Vec::with_capacity(model_schema.arity());
    for cat in &model_schema.categories {
        let idx = manifest_schema
            .categories
            .iter()
            .position(|c| c == cat)
            .ok_or_else(|| {
                CoreError::SchemaMismatch(format!(
                    "model category {cat:?} not present in manifest schema {}",
                    manifest_schema.name
                ))
            })?;
        keep.push(idx);
    }
    Ok(Some(keep))
}

pub fn cmd_joint(args: TrainArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref(), args.seed)?;
    apply_train_overrides(&mut cfg.training.joint, &args)?;
    let schema = manifest_schema(&args.manifest)?;
    let spec = preset_by_name(&cfg.preset).expect("validated");
    let tokenizer = build_tokenizer(&args.manifest)?;
    let ds = load_dataset(
        &args.manifest,
        &spec,
        &schema,
        &tokenizer,
        cfg.text.max_tokens,
        args.labels.as_deref(),
        args.keep_categories.as_ref(),
    )?;
    let dir = create_run_dir(args.out.as_deref(), "joint")?;
    write_text(&dir, "config.json", &cfg.to_json())?;
    log_line(&dir, &format!("joint baseline on {} studies", ds.studies.len()));
    let out = run_joint_baseline(&ds, &cfg.vision, &tokenizer, &cfg.text, &cfg.training.joint)
        .map_err(|a| abort_to_error(&dir, a))?;
    out.trace.write_csv(&dir.join("trace.csv"))?;
    out.model.save(&dir.join("aligned.ckpt"))?;
    println!(
        "joint baseline done: best epoch {} val total {:.6} -> {}",
        out.best_epoch,
        out.best_val_total,
        dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluation commands
// ---------------------------------------------------------------------------

fn load_eval_dataset(common: &EvalArgs) -> Result<(AlignedModel, Dataset)> {
    let model = AlignedModel::load(&common.ckpt)?;
    let spec = preset_by_name(&model.preset)
        .ok_or_else(|| CoreError::Data(format!("checkpoint preset {:?} unknown", model.preset)))?;
    let manifest_sch = manifest_schema(&common.manifest)?;
    let keep = keep_indices_for(&manifest_sch, &model.schema)?;
    let ds = load_dataset(
        &common.manifest,
        &spec,
        &manifest_sch,
        &model.tokenizer,
        model.text.cfg.max_tokens,
        None,
        keep.as_ref(),
    )?;
    Ok((model, ds))
}

fn emit_report(
    common: &EvalArgs,
    command: &str,
    report: &voxalign_core::eval::MetricsReport,
) -> Result<()> {
    let json = report.to_json();
    let table = report.to_table();
    if let Some(out) = &common.out {
        let dir = create_run_dir(Some(out), command)?;
        write_text(&dir, "metrics.json", &json)?;
        write_text(&dir, "metrics.txt", &table)?;
        log_line(&dir, &format!("{command} complete (n_eval {})", report.n_eval));
    }
    if common.json {
        println!("{json}");
    } else {
        print!("{table}");
    }
    Ok(())
}

pub fn cmd_eval_zeroshot(
    common: EvalArgs,
    prompt_index: Option<usize>,
    threshold: Option<f64>,
) -> Result<()> {
    let cfg = load_config(common.config.as_deref(), None)?;
    let index = prompt_index.unwrap_or(cfg.eval.prompt_index);
    let thr = threshold.unwrap_or(cfg.eval.threshold);
    let pair = prompt_by_index(index)?;
    let (model, ds) = load_eval_dataset(&common)?;
    let split = parse_split(&common.split)?;
    let report = eval_zero_shot(&model, &ds, split, &pair, thr)?;
    emit_report(&common, "eval-zeroshot", &report)
}

pub fn cmd_eval_retrieval(common: EvalArgs, ks: Option<Vec<usize>>) -> Result<()> {
    let cfg = load_config(common.config.as_deref(), None)?;
    let ks = ks.unwrap_or(cfg.eval.ks);
    let (model, ds) = load_eval_dataset(&common)?;
    let split = parse_split(&common.split)?;
    let n = ds.indices(split).len();
    let usable: Vec<usize> = ks.iter().copied().filter(|&k| k >= 1 && k <= n).collect();
    let skipped: Vec<usize> = ks.iter().copied().filter(|&k| k < 1 || k > n).collect();
    if usable.is_empty() {
        return Err(CoreError::Config(format!(
            "no usable k values for a split of {n} studies (requested {ks:?})"
        )));
    }
    if !skipped.is_empty() {
        eprintln!("note: skipping k values beyond the split size {n}: {skipped:?}");
    }
    let report = eval_retrieval(&model, &ds, split, &usable)?;
    emit_report(&common, "eval-retrieval", &report)
}

pub fn cmd_probe(common: EvalArgs, filter: String) -> Result<()> {
    let cfg = load_config(common.config.as_deref(), None)?;
    let (model, ds) = load_eval_dataset(&common)?;
    let split = parse_split(&common.split)?;
    let filter: SentenceFilter = filter.parse()?;
    let result = alignment_probe(
        &model,
        &ds,
        split,
        filter,
        cfg.training.align.batch_size,
        cfg.training.align.l2_normalize,
    )?;
    let json = serde_json::to_string_pretty(&result).expect("probe serializes");
    if let Some(out) = &common.out {
        let dir = create_run_dir(Some(out), "probe-alignment")?;
        write_text(&dir, "probe.json", &json)?;
    }
    if common.json {
        println!("{json}");
    } else {
        println!(
            "filter {:?}: clip loss {:.6} over {} studies ({} skipped)",
            result.filter, result.loss, result.n_used, result.n_skipped
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// gradcam
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn cmd_gradcam(
    manifest: PathBuf,
    ckpt: PathBuf,
    study: String,
    prompt: String,
    pathology: String,
    out: PathBuf,
    _config: Option<PathBuf>,
    quantile: f64,
) -> Result<()> {
    if prompt.matches("{pathology}").count() != 1 {
        return Err(CoreError::Config(
            "prompt must contain the {pathology} slot exactly once".into(),
        ));
    }
    let model = AlignedModel::load(&ckpt)?;
    if !model.schema.categories.iter().any(|c| c == &pathology) {
        return Err(CoreError::Config(format!(
            "pathology {pathology:?} is not a category of schema {}",
            model.schema.name
        )));
    }
    let spec = preset_by_name(&model.preset)
        .ok_or_else(|| CoreError::Data(format!("checkpoint preset {:?} unknown", model.preset)))?;
    let records = read_manifest(&manifest, spec.min_slices)?;
    let dir_m = manifest.parent().unwrap_or_else(|| Path::new("."));
    let rec = records
        .iter()
        .find(|r| r.study_id == study)
        .ok_or_else(|| CoreError::Data(format!("study {study:?} not in manifest")))?;
    let raw = voxalign_core::corpus::VolumeTensor::read(&rec.volume_path(dir_m))?;
    let canvas = voxalign_core::corpus::presets::apply_preset(&raw, &spec)?;
    let crop = voxalign_core::corpus::preprocess::center_crop(&canvas, spec.train_crop);
    let filled = prompt.replace("{pathology}", &pathology);
    let heat = gradcam(&model, &crop, &filled)?;
    let dir = create_run_dir(Some(&out), "gradcam")?;
    let png = dir.join(format!("{study}-{pathology}.png"));
    overlay_export(&heat, &crop, &png, quantile)?;
    let meta = serde_json::json!({
        "study": study,
        "prompt": filled,
        "score": heat.score,
        "heatmap_max": heat.max(),
        "shape": heat.shape,
    });
    write_text(&dir, &format!("{study}-{pathology}.json"), &serde_json::to_string_pretty(&meta).unwrap())?;
    println!("wrote {} (score {:.4})", png.display(), heat.score);
    Ok(())
}

