//! Zero-shot diagnosis, retrieval, alignment probes, and scalar metrics.

pub mod metrics;
pub mod probe;
pub mod retrieval;
pub mod zeroshot;

pub use metrics::{
    auc, binary_counts, recall_at_k, BinaryCounts, ClassMetrics, MacroMetrics, MetricsReport,
};
pub use probe::{alignment_probe, split_sentences, ProbeResult, SentenceFilter};
pub use retrieval::{eval_retrieval, similarity_matrix};
pub use zeroshot::{
    eval_zero_shot, prompt_bank, prompt_by_index, zero_shot_probability, PromptPair,
};
