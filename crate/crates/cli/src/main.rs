//! Pipeline entry point: corpus synthesis, label extraction, two-stage
//! training, the joint baseline, evaluation, and Grad-CAM export.

mod commands;
mod runs;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric divergence.
#[derive(Parser)]
#[command(name = "voxalign", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled volumetric corpus.
    Synth {
        /// Output corpus directory (created; also the run directory).
        #[arg(long)]
        out: PathBuf,
        /// Run-config JSON file; defaults to the built-in desk config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Preprocessing preset governing downstream training.
        #[arg(long)]
        preset: Option<String>,
        /// Number of studies.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Label schema name (desk-8, diagnostic-18, diagnostic-30).
        #[arg(long)]
        schema: Option<String>,
    },
    /// Extract label vectors from manifest reports via a chat-model client.
    ExtractLabels {
        #[arg(long)]
        manifest: PathBuf,
        /// Output label file (JSON lines).
        #[arg(long)]
        out: PathBuf,
        /// Client: "mock" (offline keyword labeler) or "http".
        #[arg(long, default_value = "mock")]
        client: String,
        #[arg(long)]
        schema: Option<String>,
        #[arg(long, default_value_t = 3)]
        max_attempts: usize,
        /// Worker threads for corpus-level extraction.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Chat-completions base URL (http client).
        #[arg(long, default_value = "http://localhost:8000/v1")]
        base_url: String,
        /// Model name (http client).
        #[arg(long, default_value = "default-model")]
        model: String,
        /// Environment variable holding the API key.
        #[arg(long, default_value = "VOXALIGN_API_KEY")]
        api_key_env: String,
        /// Backoff base delay in milliseconds.
        #[arg(long, default_value_t = 500)]
        backoff_ms: u64,
        /// Optional second client ("mock" or "http") for dual-model consensus.
        #[arg(long)]
        consensus_client: Option<String>,
        /// Model name for the consensus client.
        #[arg(long)]
        consensus_model: Option<String>,
        /// Per-category agreement-rate threshold (strict >).
        #[arg(long, default_value_t = 0.9)]
        consensus_threshold: f64,
    },
    /// Stage 1: supervised pre-training of the vision encoder.
    PretrainVision(commands::TrainArgs),
    /// Stage 1: supervised pre-training of the text encoder.
    PretrainText(commands::TrainArgs),
    /// Stage 2: contrastive alignment of two stage-1 checkpoints.
    Align {
        #[command(flatten)]
        common: commands::TrainArgs,
        #[arg(long)]
        vision_ckpt: PathBuf,
        #[arg(long)]
        text_ckpt: PathBuf,
    },
    /// Joint multi-task baseline trained from scratch at matched budget.
    Joint(commands::TrainArgs),
    /// Zero-shot diagnosis over prompt pairs.
    EvalZeroshot {
        #[command(flatten)]
        common: commands::EvalArgs,
        /// 1-based prompt pair (1..=5).
        #[arg(long)]
        prompt_index: Option<usize>,
        /// Decision threshold on P(c|I).
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Report-to-volume retrieval (Recall@k).
    EvalRetrieval {
        #[command(flatten)]
        common: commands::EvalArgs,
        /// Comma-separated k values; values above the split size are skipped.
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
    },
    /// Alignment-loss probe over filtered report sentences.
    ProbeAlignment {
        #[command(flatten)]
        common: commands::EvalArgs,
        /// all | label-related | label-unrelated
        #[arg(long, default_value = "all")]
        filter: String,
    },
    /// Prompt-conditioned Grad-CAM for one study.
    Gradcam {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        study: String,
        /// Prompt template with a {pathology} slot.
        #[arg(long, default_value = "There is {pathology}.")]
        prompt: String,
        #[arg(long)]
        pathology: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Display clip quantile for the overlay.
        #[arg(long, default_value_t = 0.99)]
        quantile: f64,
    },
    /// Print the JSON schema for run-config documents.
    ConfigSchema,
    /// Print the default desk run config.
    ConfigDefault {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth {
            out,
            config,
            preset,
            n,
            seed,
            schema,
        } => commands::cmd_synth(out, config, preset, n, seed, schema),
        Command::ExtractLabels {
            manifest,
            out,
            client,
            schema,
            max_attempts,
            workers,
            base_url,
            model,
            api_key_env,
            backoff_ms,
            consensus_client,
            consensus_model,
            consensus_threshold,
        } => commands::cmd_extract_labels(commands::ExtractOpts {
            manifest,
            out,
            client,
            schema,
            max_attempts,
            workers,
            base_url,
            model,
            api_key_env,
            backoff_ms,
            consensus_client,
            consensus_model,
            consensus_threshold,
        }),
        Command::PretrainVision(args) => commands::cmd_pretrain_vision(args),
        Command::PretrainText(args) => commands::cmd_pretrain_text(args),
        Command::Align {
            common,
            vision_ckpt,
            text_ckpt,
        } => commands::cmd_align(common, vision_ckpt, text_ckpt),
        Command::Joint(args) => commands::cmd_joint(args),
        Command::EvalZeroshot {
            common,
            prompt_index,
            threshold,
        } => commands::cmd_eval_zeroshot(common, prompt_index, threshold),
        Command::EvalRetrieval { common, ks } => commands::cmd_eval_retrieval(common, ks),
        Command::ProbeAlignment { common, filter } => commands::cmd_probe(common, filter),
        Command::Gradcam {
            manifest,
            ckpt,
            study,
            prompt,
            pathology,
            out,
            config,
            quantile,
        } => commands::cmd_gradcam(manifest, ckpt, study, prompt, pathology, out, config, quantile),
        Command::ConfigSchema => {
            println!("{}", voxalign_core::runcfg::RUNCONFIG_JSON_SCHEMA);
            Ok(())
        }
        Command::ConfigDefault { seed } => {
            println!("{}", voxalign_core::runcfg::RunConfig::desk_default(seed).to_json());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(runs::exit_code(&e))
        }
    }
}
