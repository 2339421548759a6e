//! HTTP backends over blocking JSON endpoints.
//!
//! Wire shapes:
//!
//! * generation: `POST <endpoint>` with `{"model", "prompt", "temperature",
//!   "top_p", "max_tokens", "seed"}`, answered by `{"text": "..."}`
//! * embedding: `POST <endpoint>` with `{"input": "..."}`, answered by
//!   `{"embedding": [...], "dim": N}`
//! * fine-tune: `POST <endpoint>` with `{"base_model", "dataset",
//!   "batch_size", "learning_rate"}`, answered by `{"job_id": "..."}`;
//!   `GET <endpoint>/<job_id>` answers a tagged status object such as
//!   `{"status": "succeeded", "model": "..."}`
//!
//! When an API token is configured it is sent as a bearer Authorization
//! header on every request.

use super::{
    check_dataset, BackendError, DecodingParams, FineTuneJob, FineTuner, JobStatus, TextEmbedder,
    TextGenerator, TrainingParams,
};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

fn agent() -> ureq::Agent {
    ureq::AgentBuilder::new()
        .timeout_connect(Duration::from_secs(10))
        .timeout_read(Duration::from_secs(120))
        .timeout_write(Duration::from_secs(120))
        .build()
}

fn post_json(
    agent: &ureq::Agent,
    url: &str,
    token: Option<&str>,
    body: impl Serialize,
) -> Result<ureq::Response, BackendError> {
    let mut req = agent.post(url);
    if let Some(token) = token {
        req = req.set("Authorization", &format!("Bearer {token}"));
    }
    req.send_json(body).map_err(wire_error)
}

fn get_json(
    agent: &ureq::Agent,
    url: &str,
    token: Option<&str>,
) -> Result<ureq::Response, BackendError> {
    let mut req = agent.get(url);
    if let Some(token) = token {
        req = req.set("Authorization", &format!("Bearer {token}"));
    }
    req.call().map_err(wire_error)
}

fn wire_error(err: ureq::Error) -> BackendError {
    match err {
        ureq::Error::Status(code, response) => {
            let body = response.into_string().unwrap_or_default();
            let snippet: String = body.chars().take(200).collect();
            BackendError::Transport(format!("HTTP {code}: {snippet}"))
        }
        ureq::Error::Transport(t) => BackendError::Transport(t.to_string()),
    }
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    top_p: f64,
    max_tokens: usize,
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

/// Client for a generation endpoint.
pub struct HttpGenerator {
    endpoint: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpGenerator {
    pub fn new(endpoint: impl Into<String>, token: Option<String>) -> Self {
        HttpGenerator { endpoint: endpoint.into(), token, agent: agent() }
    }
}

impl TextGenerator for HttpGenerator {
    fn generate(
        &self,
        model: &str,
        prompt: &str,
        params: &DecodingParams,
    ) -> Result<String, BackendError> {
        let request = GenerateRequest {
            model,
            prompt,
            temperature: params.temperature,
            top_p: params.top_p,
            max_tokens: params.max_tokens,
            seed: params.seed,
        };
        let response = post_json(&self.agent, &self.endpoint, self.token.as_deref(), request)?;
        let parsed: GenerateResponse = response
            .into_json()
            .map_err(|e| BackendError::Generation(format!("bad response body: {e}")))?;
        if parsed.text.trim().is_empty() {
            return Err(BackendError::EmptyCompletion);
        }
        Ok(parsed.text)
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
    dim: usize,
}

/// Client for an embedding endpoint. The dimension is learned from the
/// first response and later responses must agree with it.
pub struct HttpEmbedder {
    endpoint: String,
    token: Option<String>,
    agent: ureq::Agent,
    dim: Mutex<Option<usize>>,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, token: Option<String>) -> Self {
        HttpEmbedder { endpoint: endpoint.into(), token, agent: agent(), dim: Mutex::new(None) }
    }
}

impl TextEmbedder for HttpEmbedder {
    fn dimension(&self) -> Option<usize> {
        *self.dim.lock().expect("dim lock")
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let response =
            post_json(&self.agent, &self.endpoint, self.token.as_deref(), EmbedRequest { input: text })?;
        let parsed: EmbedResponse = response
            .into_json()
            .map_err(|e| BackendError::Embedding(format!("bad response body: {e}")))?;
        if parsed.embedding.len() != parsed.dim {
            return Err(BackendError::Embedding(format!(
                "embedding length {} disagrees with declared dim {}",
                parsed.embedding.len(),
                parsed.dim
            )));
        }
        let mut dim = self.dim.lock().expect("dim lock");
        match *dim {
            Some(expected) if expected != parsed.dim => {
                return Err(BackendError::DimensionDrift { got: parsed.dim, expected })
            }
            _ => *dim = Some(parsed.dim),
        }
        Ok(parsed.embedding)
    }
}

#[derive(Serialize)]
struct TuneRequest<'a> {
    base_model: &'a str,
    dataset: String,
    batch_size: usize,
    learning_rate: f64,
}

#[derive(Deserialize)]
struct TuneResponse {
    job_id: String,
}

/// Client for a fine-tune job service.
pub struct HttpFineTuner {
    endpoint: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpFineTuner {
    pub fn new(endpoint: impl Into<String>, token: Option<String>) -> Self {
        HttpFineTuner { endpoint: endpoint.into(), token, agent: agent() }
    }

    fn job_url(&self, id: &str) -> String {
        format!("{}/{}", self.endpoint.trim_end_matches('/'), id)
    }
}

impl FineTuner for HttpFineTuner {
    fn submit(
        &self,
        base_model: &str,
        dataset: &Path,
        params: &TrainingParams,
    ) -> Result<FineTuneJob, BackendError> {
        check_dataset(dataset)?;
        let request = TuneRequest {
            base_model,
            dataset: dataset.display().to_string(),
            batch_size: params.batch_size,
            learning_rate: params.learning_rate,
        };
        let response = post_json(&self.agent, &self.endpoint, self.token.as_deref(), request)?;
        let parsed: TuneResponse = response
            .into_json()
            .map_err(|e| BackendError::FineTune(format!("bad response body: {e}")))?;
        Ok(FineTuneJob { id: parsed.job_id })
    }

    fn poll(&self, job: &FineTuneJob) -> Result<JobStatus, BackendError> {
        let response = get_json(&self.agent, &self.job_url(&job.id), self.token.as_deref())?;
        response
            .into_json()
            .map_err(|e| BackendError::FineTune(format!("bad status body: {e}")))
    }
}
