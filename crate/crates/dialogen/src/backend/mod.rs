//! Pluggable model backends.
//!
//! Three capabilities are abstracted behind object-safe traits: text
//! generation, text embedding, and fine-tuning. Production deployments
//! talk to HTTP services ([`http`]) or shell out to a training command
//! ([`command`]); tests and mock runs use the deterministic
//! implementations in [`mock`].

pub mod command;
pub mod http;
pub mod mock;

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("embedding failed: {0}")]
    Embedding(String),
    #[error("embedding dimension changed: got {got}, expected {expected}")]
    DimensionDrift { got: usize, expected: usize },
    #[error("fine-tune failed: {0}")]
    FineTune(String),
    #[error("training dataset {path} is missing or empty")]
    BadDataset { path: String },
    #[error("unknown fine-tune job {0}")]
    UnknownJob(String),
    #[error("transport error: {0}")]
    Transport(String),
}

/// Decoding controls passed through to the generation backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: usize,
    /// Sampling seed; meaningful only when temperature > 0.
    pub seed: Option<u64>,
}

impl DecodingParams {
    /// Deterministic decoding: temperature zero, full nucleus.
    pub fn greedy() -> Self {
        DecodingParams { temperature: 0.0, top_p: 1.0, max_tokens: 256, seed: None }
    }

    /// Stochastic decoding with an explicit seed for reproducibility.
    pub fn sampling(temperature: f64, top_p: f64, seed: u64) -> Self {
        DecodingParams { temperature, top_p, max_tokens: 256, seed: Some(seed) }
    }

    /// Default sampling settings: temperature 0.8, nucleus 0.95.
    pub fn sampling_default(seed: u64) -> Self {
        DecodingParams::sampling(0.8, 0.95, seed)
    }

    pub fn is_greedy(&self) -> bool {
        self.temperature == 0.0
    }
}

/// Hyperparameters forwarded to the fine-tuning backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingParams {
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainingParams {
    fn default() -> Self {
        TrainingParams { batch_size: 32, learning_rate: 1e-2 }
    }
}

/// Handle to a submitted fine-tune job.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineTuneJob {
    pub id: String,
}

/// Lifecycle of a fine-tune job. `Succeeded` and `Failed` are terminal:
/// once reported, later polls must repeat them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Running,
    Succeeded { model: String },
    Failed { message: String },
}

impl JobStatus {
    pub fn is_terminal(&self) -> bool {
        matches!(self, JobStatus::Succeeded { .. } | JobStatus::Failed { .. })
    }
}

/// Produces a completion for a prompt. Implementations must reject empty
/// completions rather than hand them downstream.
pub trait TextGenerator: Send + Sync {
    fn generate(
        &self,
        model: &str,
        prompt: &str,
        params: &DecodingParams,
    ) -> Result<String, BackendError>;
}

/// Maps text to a fixed-dimension embedding vector.
pub trait TextEmbedder: Send + Sync {
    /// The embedding dimension, when known up front. Remote embedders may
    /// only learn it from the first response.
    fn dimension(&self) -> Option<usize>;

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError>;
}

/// Starts fine-tune jobs and reports their status.
pub trait FineTuner: Send + Sync {
    fn submit(
        &self,
        base_model: &str,
        dataset: &Path,
        params: &TrainingParams,
    ) -> Result<FineTuneJob, BackendError>;

    fn poll(&self, job: &FineTuneJob) -> Result<JobStatus, BackendError>;
}

/// Reject missing or empty training files before submission. Shared by
/// every [`FineTuner`] implementation.
pub(crate) fn check_dataset(path: &Path) -> Result<(), BackendError> {
    match std::fs::metadata(path) {
        Ok(meta) if meta.len() > 0 => Ok(()),
        _ => Err(BackendError::BadDataset { path: path.display().to_string() }),
    }
}
