//! Extraction with retry, corpus-level extraction, and label files.

use crate::error::CoreError;
use crate::labels::client::LlmClient;
use crate::labels::parse::parse_label_response;
use crate::labels::prompts::build_extraction_prompt;
use crate::schema::{LabelSchema, LabelVector};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

/// Exponential backoff schedule: `base * factor^(attempt-1)` after the
/// `attempt`-th failed try. No jitter.
#[derive(Debug, Clone, Copy)]
pub struct BackoffPolicy {
    pub base: Duration,
    pub factor: f64,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        BackoffPolicy {
            base: Duration::from_millis(500),
            factor: 2.0,
        }
    }
}

impl BackoffPolicy {
    /// No sleeping; used by tests and offline mocks.
    pub fn none() -> Self {
        BackoffPolicy {
            base: Duration::ZERO,
            factor: 2.0,
        }
    }

    /// Delay to wait after the `attempt`-th (1-based) failed attempt.
    pub fn delay(&self, attempt: usize) -> Duration {
        self.base
            .mul_f64(self.factor.powi(attempt.saturating_sub(1) as i32))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionStatus {
    Ok,
    FlaggedForReview,
}

/// Result of extracting one report, including every raw model response.
#[derive(Debug, Clone)]
pub struct ExtractionOutcome {
    pub status: ExtractionStatus,
    pub labels: Option<LabelVector>,
    pub attempts: usize,
    pub raw_responses: Vec<String>,
}

/// Query the client for labels, re-querying with exponential backoff on
/// invalid output. Transport errors count as failed attempts. After
/// `max_attempts` failures the report is flagged for manual review.
pub fn extract_with_retry(
    client: &dyn LlmClient,
    report: &str,
    schema: &LabelSchema,
    max_attempts: usize,
    backoff: &BackoffPolicy,
) -> Result<ExtractionOutcome, CoreError> {
    if max_attempts < 1 {
        return Err(CoreError::Config("max_attempts must be >= 1".into()));
    }
    let prompt = build_extraction_prompt(schema, report)?;
    let mut raw_responses = Vec::new();
    for attempt in 1..=max_attempts {
        let response = client.send(&prompt.system, &prompt.user);
        match response {
            Ok(text) => {
                raw_responses.push(text.clone());
                if let Ok(labels) = parse_label_response(&text, schema) {
                    return Ok(ExtractionOutcome {
                        status: ExtractionStatus::Ok,
                        labels: Some(labels),
                        attempts: attempt,
                        raw_responses,
                    });
                }
            }
            Err(e) => raw_responses.push(format!("<transport error: {e}>")),
        }
        if attempt < max_attempts {
            let d = backoff.delay(attempt);
            if !d.is_zero() {
                std::thread::sleep(d);
            }
        }
    }
    Ok(ExtractionOutcome {
        status: ExtractionStatus::FlaggedForReview,
        labels: None,
        attempts: max_attempts,
        raw_responses,
    })
}

/// Extract labels for `(study_id, report)` pairs with bounded parallelism.
/// Each report's retry loop stays sequential; results come back in input
/// order regardless of worker count.
pub fn extract_corpus(
    client: &dyn LlmClient,
    reports: &[(String, String)],
    schema: &LabelSchema,
    max_attempts: usize,
    backoff: &BackoffPolicy,
    workers: usize,
) -> Result<Vec<(String, ExtractionOutcome)>, CoreError> {
    let workers = workers.max(1).min(reports.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<(String, ExtractionOutcome)>>> =
        Mutex::new(vec![None; reports.len()]);
    let first_err: Mutex<Option<CoreError>> = Mutex::new(None);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= reports.len() {
                    break;
                }
                let (study_id, report) = &reports[i];
                match extract_with_retry(client, report, schema, max_attempts, backoff) {
                    Ok(outcome) => {
                        slots.lock().expect("slots")[i] = Some((study_id.clone(), outcome));
                    }
                    Err(e) => {
                        let mut guard = first_err.lock().expect("err slot");
                        if guard.is_none() {
                            *guard = Some(e);
                        }
                        break;
                    }
                }
            });
        }
    });

    if let Some(e) = first_err.into_inner().expect("err slot") {
        return Err(e);
    }
    Ok(slots
        .into_inner()
        .expect("slots")
        .into_iter()
        .map(|s| s.expect("all slots filled"))
        .collect())
}

// ---------------------------------------------------------------------------
// Label files (JSON lines)
// ---------------------------------------------------------------------------

/// One line of a label file: `{"study_id": ..., "labels": [...], "schema":
/// ..., "status": "ok"|"flagged"}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct LabelFileRecord {
    pub study_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<i8>>,
    pub schema: String,
    pub status: String,
}

impl LabelFileRecord {
    pub fn from_outcome(study_id: &str, outcome: &ExtractionOutcome, schema: &str) -> Self {
        LabelFileRecord {
            study_id: study_id.to_string(),
            labels: outcome.labels.as_ref().map(|l| l.values.clone()),
            schema: schema.to_string(),
            status: match outcome.status {
                ExtractionStatus::Ok => "ok".to_string(),
                ExtractionStatus::FlaggedForReview => "flagged".to_string(),
            },
        }
    }
}

pub fn write_label_file(path: &Path, records: &[LabelFileRecord]) -> Result<(), CoreError> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    for rec in records {
        let line = serde_json::to_string(rec)
            .map_err(|e| CoreError::Data(format!("serialize label record: {e}")))?;
        writeln!(file, "{line}").map_err(|e| CoreError::io(path.display().to_string(), e))?;
    }
    Ok(())
}

pub fn read_label_file(path: &Path) -> Result<Vec<LabelFileRecord>, CoreError> {
    let file =
        std::fs::File::open(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CoreError::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelFileRecord = serde_json::from_str(&line).map_err(|e| {
            CoreError::Data(format!(
                "{}:{}: malformed label record: {e}",
                path.display(),
                lineno + 1
            ))
        })?;
        out.push(rec);
    }
    Ok(out)
}
