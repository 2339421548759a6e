//! Deterministic in-process backends for tests and `--mock-backends` runs.

use super::{
    check_dataset, BackendError, DecodingParams, FineTuneJob, FineTuner, JobStatus, TextEmbedder,
    TextGenerator, TrainingParams,
};
use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

/// One recorded generation call.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationCall {
    pub model: String,
    pub prompt: String,
    pub params: DecodingParams,
}

type ScriptFn = dyn Fn(&str, &str, &DecodingParams) -> Result<String, BackendError> + Send + Sync;

/// Generator driven by a caller-supplied closure, with a full call log.
/// The workhorse of the unit tests: scripts decide completions from the
/// prompt text, and assertions read back exactly what was asked.
pub struct ScriptedGenerator {
    script: Box<ScriptFn>,
    calls: Mutex<Vec<GenerationCall>>,
}

impl ScriptedGenerator {
    pub fn new<F>(script: F) -> Self
    where
        F: Fn(&str, &str, &DecodingParams) -> Result<String, BackendError>
            + Send
            + Sync
            + 'static,
    {
        ScriptedGenerator { script: Box::new(script), calls: Mutex::new(Vec::new()) }
    }

    /// Generator that always returns the same completion.
    pub fn constant(text: impl Into<String>) -> Self {
        let text = text.into();
        ScriptedGenerator::new(move |_, _, _| Ok(text.clone()))
    }

    pub fn calls(&self) -> Vec<GenerationCall> {
        self.calls.lock().expect("call log lock").clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().expect("call log lock").len()
    }
}

impl TextGenerator for ScriptedGenerator {
    fn generate(
        &self,
        model: &str,
        prompt: &str,
        params: &DecodingParams,
    ) -> Result<String, BackendError> {
        self.calls.lock().expect("call log lock").push(GenerationCall {
            model: model.to_string(),
            prompt: prompt.to_string(),
            params: params.clone(),
        });
        let text = (self.script)(model, prompt, params)?;
        if text.trim().is_empty() {
            return Err(BackendError::EmptyCompletion);
        }
        Ok(text)
    }
}

const HINT_LABEL: &str = "Gold Response: ";
const HISTORY_LABEL: &str = "Dialogue History H:\n";

/// Offline generator for end-to-end mock runs. It answers each
/// sub-question by echoing text it finds in the prompt itself: the hint
/// when one is present, otherwise the most recent history line. That
/// keeps a full pipeline run self-consistent without any model.
pub struct EchoGenerator;

fn last_history_line(prompt: &str) -> Option<&str> {
    // Demonstrations also contain history blocks, so take the last one,
    // which is the block for the instance being solved.
    let start = prompt.rfind(HISTORY_LABEL)? + HISTORY_LABEL.len();
    let body = &prompt[start..];
    let body = match body.find("\nSub-question") {
        Some(end) => &body[..end],
        None => body,
    };
    let line = body.lines().last()?.trim();
    let line = line.strip_prefix("P: ").or_else(|| line.strip_prefix("R: ")).unwrap_or(line);
    if line.is_empty() {
        None
    } else {
        Some(line)
    }
}

impl TextGenerator for EchoGenerator {
    fn generate(
        &self,
        _model: &str,
        prompt: &str,
        _params: &DecodingParams,
    ) -> Result<String, BackendError> {
        if let Some(pos) = prompt.rfind(HINT_LABEL) {
            let hint = prompt[pos + HINT_LABEL.len()..].trim();
            if !hint.is_empty() {
                return Ok(format!(
                    "Working backward from the known response.\nAnswer: {hint}"
                ));
            }
        }
        match last_history_line(prompt) {
            Some(line) => Ok(format!("Reading the dialogue so far.\nAnswer: {line}")),
            None => Err(BackendError::Generation("prompt has no history section".into())),
        }
    }
}

/// Embedding dimension of [`BigramEmbedder`].
pub const BIGRAM_DIM: usize = 256;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Hashed character-bigram embedder. Each consecutive character pair is
/// hashed into one of [`BIGRAM_DIM`] buckets and the count vector is
/// L2-normalized. Identical texts embed identically, overlapping texts
/// land near each other, and the whole thing is process-independent, so
/// similarity scores are reproducible everywhere.
///
/// Texts shorter than two characters have no bigrams and embed to the
/// zero vector, which downstream cosine scoring rejects.
pub struct BigramEmbedder;

impl TextEmbedder for BigramEmbedder {
    fn dimension(&self) -> Option<usize> {
        Some(BIGRAM_DIM)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let mut counts = vec![0.0f64; BIGRAM_DIM];
        let chars: Vec<char> = text.chars().collect();
        let mut buf = [0u8; 8];
        for pair in chars.windows(2) {
            let a = pair[0].encode_utf8(&mut buf[..4]).len();
            let b = pair[1].encode_utf8(&mut buf[4..]).len();
            let mut bytes = Vec::with_capacity(a + b);
            bytes.extend_from_slice(&buf[..a]);
            bytes.extend_from_slice(&buf[4..4 + b]);
            let bucket = (fnv1a(&bytes) % BIGRAM_DIM as u64) as usize;
            counts[bucket] += 1.0;
        }
        let norm: f64 = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 0.0 {
            for c in &mut counts {
                *c /= norm;
            }
        }
        Ok(counts)
    }
}

/// One recorded fine-tune submission.
#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub base_model: String,
    pub dataset: std::path::PathBuf,
    pub params: TrainingParams,
}

struct JobState {
    polls: usize,
    outcome: JobStatus,
}

struct FineTunerState {
    submissions: Vec<Submission>,
    jobs: HashMap<String, JobState>,
}

/// In-process fine-tuner. Every submission is logged; each job reports
/// `Pending`, then `Running`, then its terminal outcome after a fixed
/// number of polls, and stays terminal forever after. The produced model
/// id is `{base}#ft{n}` for the n-th submission.
pub struct MockFineTuner {
    state: Mutex<FineTunerState>,
    polls_to_complete: usize,
    fail_at: Option<usize>,
}

impl MockFineTuner {
    pub fn new() -> Self {
        MockFineTuner::with_polls(2)
    }

    /// Jobs complete on the `polls_to_complete`-th poll.
    pub fn with_polls(polls_to_complete: usize) -> Self {
        MockFineTuner {
            state: Mutex::new(FineTunerState { submissions: Vec::new(), jobs: HashMap::new() }),
            polls_to_complete: polls_to_complete.max(1),
            fail_at: None,
        }
    }

    /// The `n`-th submission (1-based) will report `Failed` instead of
    /// producing a model.
    pub fn failing_at(n: usize) -> Self {
        let mut ft = MockFineTuner::new();
        ft.fail_at = Some(n);
        ft
    }

    pub fn submissions(&self) -> Vec<Submission> {
        self.state.lock().expect("fine-tuner lock").submissions.clone()
    }

    /// Model ids produced by successful submissions so far, in order.
    pub fn registered_models(&self) -> Vec<String> {
        let state = self.state.lock().expect("fine-tuner lock");
        let mut ids: Vec<(usize, String)> = state
            .jobs
            .iter()
            .filter_map(|(id, job)| match &job.outcome {
                JobStatus::Succeeded { model } => {
                    let n: usize = id.trim_start_matches("mock-job-").parse().unwrap_or(0);
                    Some((n, model.clone()))
                }
                _ => None,
            })
            .collect();
        ids.sort();
        ids.into_iter().map(|(_, m)| m).collect()
    }
}

impl Default for MockFineTuner {
    fn default() -> Self {
        MockFineTuner::new()
    }
}

impl FineTuner for MockFineTuner {
    fn submit(
        &self,
        base_model: &str,
        dataset: &Path,
        params: &TrainingParams,
    ) -> Result<FineTuneJob, BackendError> {
        check_dataset(dataset)?;
        let mut state = self.state.lock().expect("fine-tuner lock");
        state.submissions.push(Submission {
            base_model: base_model.to_string(),
            dataset: dataset.to_path_buf(),
            params: params.clone(),
        });
        let n = state.submissions.len();
        let id = format!("mock-job-{n}");
        let outcome = if self.fail_at == Some(n) {
            JobStatus::Failed { message: format!("scripted failure of submission {n}") }
        } else {
            JobStatus::Succeeded { model: format!("{base_model}#ft{n}") }
        };
        state.jobs.insert(id.clone(), JobState { polls: 0, outcome });
        Ok(FineTuneJob { id })
    }

    fn poll(&self, job: &FineTuneJob) -> Result<JobStatus, BackendError> {
        let mut state = self.state.lock().expect("fine-tuner lock");
        let entry = state
            .jobs
            .get_mut(&job.id)
            .ok_or_else(|| BackendError::UnknownJob(job.id.clone()))?;
        entry.polls += 1;
        if entry.polls >= self.polls_to_complete {
            Ok(entry.outcome.clone())
        } else if entry.polls > 1 {
            Ok(JobStatus::Running)
        } else {
            Ok(JobStatus::Pending)
        }
    }
}
