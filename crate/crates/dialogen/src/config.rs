//! Declarative pipeline configuration: one TOML file describing corpus
//! paths, the sub-question chain, bootstrap thresholds, backend wiring,
//! and iteration settings, with dataset presets and environment
//! overrides layered on top.
//!
//! Precedence, lowest to highest: built-in defaults, the config file,
//! environment variables, command-line flags. Validation happens after
//! all layers are applied.

use crate::backend::TrainingParams;
use crate::bootstrap::{BootstrapConfig, BootstrapMode, IterateOptions, MetricKey};
use crate::dialogue::{DemonstrationExample, SubQuestionChain};
use crate::metrics::TokenScheme;
use crate::prompt::PromptTemplate;
use crate::similarity::ThresholdVector;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config at {field}: {message}")]
    Invalid { field: String, message: String },
    #[error("unknown preset {0:?} (expected \"meddg\" or \"kamed\")")]
    UnknownPreset(String),
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: message.into() }
}

/// A named dataset profile: its acceptance thresholds and the split
/// sizes its published version ships with.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub eta: [f64; 3],
    /// Expected (train, valid, test) dialogue counts.
    pub expected_splits: [usize; 3],
}

pub const PRESET_MEDDG: Preset = Preset {
    name: "meddg",
    eta: [0.75, 0.8, 0.65],
    expected_splits: [14_864, 2_000, 1_000],
};

pub const PRESET_KAMED: Preset = Preset {
    name: "kamed",
    eta: [0.65, 0.75, 0.65],
    expected_splits: [29_159, 1_532, 1_539],
};

impl Preset {
    pub fn by_name(name: &str) -> Option<&'static Preset> {
        match name {
            "meddg" => Some(&PRESET_MEDDG),
            "kamed" => Some(&PRESET_KAMED),
            _ => None,
        }
    }
}

/// Which corpus split a file claims to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

impl SplitName {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "train" => Some(SplitName::Train),
            "valid" => Some(SplitName::Valid),
            "test" => Some(SplitName::Test),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Valid => "valid",
            SplitName::Test => "test",
        }
    }

    fn index(self) -> usize {
        match self {
            SplitName::Train => 0,
            SplitName::Valid => 1,
            SplitName::Test => 2,
        }
    }
}

/// Compare an ingested split's size against the preset's published one.
/// Returns a warning line when they differ, naming the expected count.
pub fn split_size_warning(preset: &Preset, split: SplitName, count: usize) -> Option<String> {
    let expected = preset.expected_splits[split.index()];
    if count == expected {
        return None;
    }
    Some(format!(
        "{} split has {count} dialogues, expected {expected} for preset {}",
        split.as_str(),
        preset.name
    ))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusPaths {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Line-delimited demonstration pool for few-shot prompts.
    pub fewshot_pool: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSettings {
    /// Per-step acceptance thresholds. Unset means: take them from the
    /// preset, or the meddg defaults when no preset is named.
    pub eta: Option<Vec<f64>>,
    pub theta: f64,
    pub max_revisions: usize,
    pub fewshot_size: usize,
    pub final_step_only: bool,
    pub sampling_temperature: f64,
    pub sampling_top_p: f64,
    /// Character budget for rendered histories; unset means unlimited.
    pub history_budget: Option<usize>,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        BootstrapSettings {
            eta: None,
            theta: 0.8,
            max_revisions: 3,
            fewshot_size: crate::dialogue::DEFAULT_FEWSHOT_MAX,
            final_step_only: false,
            sampling_temperature: 0.8,
            sampling_top_p: 0.95,
            history_budget: None,
        }
    }
}

/// One generation or embedding backend: either the built-in mock or an
/// HTTP endpoint, never both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointSettings {
    pub mock: bool,
    pub endpoint: Option<String>,
}

impl Default for EndpointSettings {
    fn default() -> Self {
        EndpointSettings { mock: true, endpoint: None }
    }
}

/// The fine-tune backend adds a third option: an external command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineTuneSettings {
    pub mock: bool,
    pub endpoint: Option<String>,
    pub command: Option<String>,
}

impl Default for FineTuneSettings {
    fn default() -> Self {
        FineTuneSettings { mock: true, endpoint: None, command: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSettings {
    pub generation: EndpointSettings,
    pub embedding: EndpointSettings,
    pub finetune: FineTuneSettings,
    /// Model identifier passed to the generation backend.
    pub model: String,
    /// Bearer token for HTTP backends. Prefer the API_TOKEN environment
    /// variable over writing secrets into the file.
    pub api_token: Option<String>,
}

impl Default for BackendSettings {
    fn default() -> Self {
        BackendSettings {
            generation: EndpointSettings::default(),
            embedding: EndpointSettings::default(),
            finetune: FineTuneSettings::default(),
            model: "base".into(),
            api_token: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSettings {
    pub scheme: TokenScheme,
}

impl Default for MetricsSettings {
    fn default() -> Self {
        MetricsSettings { scheme: TokenScheme::Mixed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IterationSettings {
    pub mode: BootstrapMode,
    pub max_iterations: usize,
    /// Minimum validation gain, in percentage points, that counts as
    /// progress.
    pub plateau_epsilon_pp: f64,
    pub patience: usize,
    /// Validation metric key, e.g. "B@1".
    pub metric: String,
    pub poll_interval_ms: u64,
}

impl Default for IterationSettings {
    fn default() -> Self {
        IterationSettings {
            mode: BootstrapMode::Ap,
            max_iterations: 5,
            plateau_epsilon_pp: 0.1,
            patience: 1,
            metric: "B@1".into(),
            poll_interval_ms: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSettings {
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        let params = TrainingParams::default();
        TrainingSettings { batch_size: params.batch_size, learning_rate: params.learning_rate }
    }
}

/// The whole declarative surface. Every field has a default, so an
/// empty file is a valid config (mock backends, meddg thresholds).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Dataset preset supplying thresholds and expected split sizes.
    pub preset: Option<String>,
    pub seed: u64,
    pub parallelism: Option<usize>,
    pub corpus: CorpusPaths,
    /// Sub-questions solved in order; empty means the built-in chain.
    pub chain: Vec<String>,
    pub template: PromptTemplate,
    pub bootstrap: BootstrapSettings,
    pub backends: BackendSettings,
    pub metrics: MetricsSettings,
    pub iteration: IterationSettings,
    pub training: TrainingSettings,
}

/// The effective backend selection after validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendChoice {
    Mock,
    Http(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TunerChoice {
    Mock,
    Http(String),
    Command(String),
}

fn endpoint_choice(settings: &EndpointSettings, field: &str) -> Result<BackendChoice, ConfigError> {
    match (settings.mock, &settings.endpoint) {
        (true, None) => Ok(BackendChoice::Mock),
        (false, Some(url)) => Ok(BackendChoice::Http(url.clone())),
        (true, Some(_)) => {
            Err(invalid(field, "both mock and an endpoint are selected; pick exactly one"))
        }
        (false, None) => Err(invalid(field, "neither mock nor an endpoint is selected")),
    }
}

impl PipelineConfig {
    /// The chain this config solves: the configured questions, or the
    /// built-in three-step chain when none are given.
    pub fn chain(&self) -> Result<SubQuestionChain, ConfigError> {
        if self.chain.is_empty() {
            return Ok(SubQuestionChain::default_chain());
        }
        SubQuestionChain::new(self.chain.clone()).map_err(|e| invalid("chain", e.to_string()))
    }

    /// Thresholds actually in force: explicit `bootstrap.eta` wins, then
    /// the named preset, then the meddg defaults.
    pub fn effective_eta(&self) -> Result<ThresholdVector, ConfigError> {
        let values: Vec<f64> = match (&self.bootstrap.eta, self.preset()?) {
            (Some(explicit), _) => explicit.clone(),
            (None, Some(preset)) => preset.eta.to_vec(),
            (None, None) => PRESET_MEDDG.eta.to_vec(),
        };
        ThresholdVector::new(values).map_err(|e| invalid("bootstrap.eta", e.to_string()))
    }

    pub fn preset(&self) -> Result<Option<&'static Preset>, ConfigError> {
        match &self.preset {
            None => Ok(None),
            Some(name) => {
                Preset::by_name(name).map(Some).ok_or_else(|| ConfigError::UnknownPreset(name.clone()))
            }
        }
    }

    pub fn generation_choice(&self) -> Result<BackendChoice, ConfigError> {
        endpoint_choice(&self.backends.generation, "backends.generation")
    }

    pub fn embedding_choice(&self) -> Result<BackendChoice, ConfigError> {
        endpoint_choice(&self.backends.embedding, "backends.embedding")
    }

    pub fn finetune_choice(&self) -> Result<TunerChoice, ConfigError> {
        let f = &self.backends.finetune;
        let picks =
            usize::from(f.mock) + usize::from(f.endpoint.is_some()) + usize::from(f.command.is_some());
        if picks != 1 {
            return Err(invalid(
                "backends.finetune",
                format!("exactly one of mock, endpoint, command must be selected, found {picks}"),
            ));
        }
        if f.mock {
            Ok(TunerChoice::Mock)
        } else if let Some(url) = &f.endpoint {
            Ok(TunerChoice::Http(url.clone()))
        } else {
            Ok(TunerChoice::Command(f.command.clone().expect("command selected")))
        }
    }

    pub fn metric_key(&self) -> Result<MetricKey, ConfigError> {
        MetricKey::parse(&self.iteration.metric).ok_or_else(|| {
            invalid(
                "iteration.metric",
                format!("unknown metric {:?} (expected B@1/B@2/B@4/R@1/R@2/D@1/D@2)", self.iteration.metric),
            )
        })
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism.unwrap_or(1).max(1)
    }

    pub fn training_params(&self) -> TrainingParams {
        TrainingParams {
            batch_size: self.training.batch_size,
            learning_rate: self.training.learning_rate,
        }
    }

    /// Assemble the bootstrap settings for a run over the given pool.
    pub fn to_bootstrap_config(
        &self,
        fewshot_pool: Vec<DemonstrationExample>,
    ) -> Result<BootstrapConfig, ConfigError> {
        let mut config = BootstrapConfig::new(self.effective_eta()?, fewshot_pool);
        config.theta = self.bootstrap.theta;
        config.max_revisions = self.bootstrap.max_revisions;
        config.fewshot_size = self.bootstrap.fewshot_size;
        config.final_step_only = self.bootstrap.final_step_only;
        config.sampling_temperature = self.bootstrap.sampling_temperature;
        config.sampling_top_p = self.bootstrap.sampling_top_p;
        config.seed = self.seed;
        config.history_budget = self.bootstrap.history_budget;
        Ok(config)
    }

    pub fn to_iterate_options(&self) -> Result<IterateOptions, ConfigError> {
        Ok(IterateOptions {
            mode: self.iteration.mode,
            max_iterations: self.iteration.max_iterations,
            plateau_epsilon_pp: self.iteration.plateau_epsilon_pp,
            patience: self.iteration.patience,
            metric_key: self.metric_key()?,
            scheme: self.metrics.scheme,
            training: self.training_params(),
            poll_interval_ms: self.iteration.poll_interval_ms,
        })
    }

    /// Check every invariant, returning the first violation with the
    /// offending field's path.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let chain = self.chain()?;
        let eta = self.effective_eta()?;
        eta.check_len(chain.len()).map_err(|e| invalid("bootstrap.eta", e.to_string()))?;
        if !(self.bootstrap.theta > 0.0 && self.bootstrap.theta < 1.0) {
            return Err(invalid("bootstrap.theta", "must lie strictly between 0 and 1"));
        }
        if self.bootstrap.max_revisions == 0 {
            return Err(invalid("bootstrap.max_revisions", "must be at least 1"));
        }
        if self.bootstrap.fewshot_size == 0 {
            return Err(invalid("bootstrap.fewshot_size", "must be at least 1"));
        }
        if self.bootstrap.sampling_temperature <= 0.0 {
            return Err(invalid("bootstrap.sampling_temperature", "must be positive"));
        }
        if !(self.bootstrap.sampling_top_p > 0.0 && self.bootstrap.sampling_top_p <= 1.0) {
            return Err(invalid("bootstrap.sampling_top_p", "must lie in (0, 1]"));
        }
        self.generation_choice()?;
        self.embedding_choice()?;
        self.finetune_choice()?;
        if self.backends.model.trim().is_empty() {
            return Err(invalid("backends.model", "must not be empty"));
        }
        self.metric_key()?;
        if self.iteration.max_iterations == 0 {
            return Err(invalid("iteration.max_iterations", "must be at least 1"));
        }
        if self.iteration.patience == 0 {
            return Err(invalid("iteration.patience", "must be at least 1"));
        }
        if self.training.batch_size == 0 {
            return Err(invalid("training.batch_size", "must be at least 1"));
        }
        if self.training.learning_rate <= 0.0 {
            return Err(invalid("training.learning_rate", "must be positive"));
        }
        if let Some(p) = self.parallelism {
            if p == 0 {
                return Err(invalid("parallelism", "must be at least 1"));
            }
        }
        Ok(())
    }

    /// Layer in the environment: endpoint and secret variables override
    /// the file. Setting an endpoint variable also deselects that
    /// backend's mock, since the variable expresses intent to use it.
    /// `lookup` is injectable so tests need not mutate process state.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(url) = lookup("GENERATION_ENDPOINT") {
            self.backends.generation = EndpointSettings { mock: false, endpoint: Some(url) };
        }
        if let Some(url) = lookup("EMBEDDING_ENDPOINT") {
            self.backends.embedding = EndpointSettings { mock: false, endpoint: Some(url) };
        }
        if let Some(url) = lookup("FINETUNE_ENDPOINT") {
            self.backends.finetune =
                FineTuneSettings { mock: false, endpoint: Some(url), command: None };
        }
        if let Some(cmd) = lookup("FINETUNE_CMD") {
            self.backends.finetune =
                FineTuneSettings { mock: false, endpoint: None, command: Some(cmd) };
        }
        if let Some(token) = lookup("API_TOKEN") {
            self.backends.api_token = Some(token);
        }
    }

    /// Layer in command-line flags, the final word on every knob they
    /// cover. `--mock-backends` forces all three backends onto mocks,
    /// clearing any endpoints so the selection stays unambiguous.
    pub fn apply_cli(&mut self, overrides: &CliOverrides) {
        if let Some(preset) = &overrides.preset {
            self.preset = Some(preset.clone());
        }
        if overrides.mock_backends {
            self.backends.generation = EndpointSettings { mock: true, endpoint: None };
            self.backends.embedding = EndpointSettings { mock: true, endpoint: None };
            self.backends.finetune = FineTuneSettings { mock: true, endpoint: None, command: None };
        }
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(parallelism) = overrides.parallelism {
            self.parallelism = Some(parallelism);
        }
        if let Some(max_iterations) = overrides.max_iterations {
            self.iteration.max_iterations = max_iterations;
        }
    }

    /// Stable digest of the effective config, for manifests. TOML
    /// serialization follows struct field order, so the hash is
    /// insensitive to the source file's formatting.
    pub fn digest(&self) -> String {
        let rendered = toml::to_string(self).expect("config serializes");
        let mut hasher = <sha2::Sha256 as sha2::Digest>::new();
        sha2::Digest::update(&mut hasher, rendered.as_bytes());
        hex::encode(sha2::Digest::finalize(hasher))
    }
}

/// Flags that override the file and environment.
#[derive(Debug, Clone, Default)]
pub struct CliOverrides {
    pub preset: Option<String>,
    pub mock_backends: bool,
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
    pub max_iterations: Option<usize>,
}

/// Read, parse, default, and validate a config file.
pub fn load_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
    let config: PipelineConfig = toml::from_str(&text)
        .map_err(|e| ConfigError::Parse { path: path.display().to_string(), message: e.to_string() })?;
    config.validate()?;
    Ok(config)
}
