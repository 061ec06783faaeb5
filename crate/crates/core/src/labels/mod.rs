//! Report-to-label distillation.
//!
//! Converts unstructured report text into structured label vectors through a
//! pluggable chat-model client, with strict output validation, retry with
//! exponential backoff, dual-model consensus filtering, and agreement scoring
//! against reference labels.

mod agreement;
mod client;
mod consensus;
mod extract;
mod parse;
mod prompts;

pub use agreement::{agreement_metrics, cohens_kappa, AgreementProtocol, AgreementReport};
pub use client::{HttpChatClient, LlmClient, MockReportLabeler, ScriptedClient};
pub use consensus::{consensus_filter, per_category_agreement};
pub use extract::{
    extract_corpus, extract_with_retry, read_label_file, write_label_file, BackoffPolicy,
    ExtractionOutcome, ExtractionStatus, LabelFileRecord,
};
pub use parse::{parse_label_response, FormatError, FormatErrorReason};
pub use prompts::{build_extraction_prompt, ExtractionPrompt};
