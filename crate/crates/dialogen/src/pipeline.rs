//! Run orchestration: each subcommand reads its inputs, drives the
//! library, and leaves a self-describing artifact directory behind.
//!
//! Every run claims its output directory exclusively (creation is the
//! lock), writes its artifacts, and finishes with a `manifest.json`
//! recording the effective config digest, seed, model ids, input
//! hashes, and timestamps. Identical configs, seeds, and mock backends
//! produce byte-identical artifacts, manifests differing only in their
//! timestamps.

use crate::backend::mock::{BigramEmbedder, EchoGenerator, MockFineTuner};
use crate::backend::{DecodingParams, FineTuner, TextEmbedder, TextGenerator};
use crate::bootstrap::{
    iterate, write_filtered_dataset, BootstrapError, BootstrapMode, BootstrapRun, FilteredRecord,
    Provenance,
};
use crate::config::{
    split_size_warning, BackendChoice, ConfigError, PipelineConfig, SplitName, TunerChoice,
};
use crate::corpus::{read_fewshot_pool, read_sessions, write_sessions, CorpusError};
use crate::dialogue::{expand_session, ExpandOptions, GenerationInstance};
use crate::metrics::{evaluate_corpus, MetricsError};
use crate::prompt::ChainSolver;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("output directory {0} already exists; runs never overwrite each other")]
    OutDirExists(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Bootstrap(#[from] BootstrapError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Input(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("iteration aborted: {0}")]
    Iterate(String),
}

impl PipelineError {
    /// Stable identifier for machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::OutDirExists(_) => "out_dir_exists",
            PipelineError::Config(_) => "config",
            PipelineError::Corpus(_) => "corpus",
            PipelineError::Bootstrap(_) => "bootstrap",
            PipelineError::Metrics(_) => "metrics",
            PipelineError::Input(_) => "input",
            PipelineError::Io { .. } => "io",
            PipelineError::Iterate(_) => "iterate",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

/// Raw corpus layouts `ingest` accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawFormat {
    /// Detect from the file's first non-whitespace byte.
    Auto,
    /// A single JSON array of sessions.
    Json,
    /// One JSON session per line.
    Jsonl,
}

impl RawFormat {
    pub fn parse(id: &str) -> Result<Self, PipelineError> {
        match id {
            "auto" => Ok(RawFormat::Auto),
            "json" => Ok(RawFormat::Json),
            "jsonl" => Ok(RawFormat::Jsonl),
            other => Err(PipelineError::Input(format!(
                "unknown raw format {other:?} (expected auto, json, or jsonl)"
            ))),
        }
    }
}

/// What to run. Paths left unset fall back to the config's corpus
/// section where one applies.
#[derive(Debug, Clone)]
pub enum Command {
    Ingest { raw: PathBuf, format: RawFormat, split: SplitName },
    Expand { input: Option<PathBuf> },
    Solve { input: Option<PathBuf> },
    Bootstrap { mode: BootstrapMode, input: Option<PathBuf> },
    Iterate { train: Option<PathBuf>, valid: Option<PathBuf> },
    Eval { hypotheses: PathBuf, references: PathBuf },
    Export { records: PathBuf },
}

impl Command {
    pub fn name(&self) -> String {
        match self {
            Command::Ingest { .. } => "ingest".into(),
            Command::Expand { .. } => "expand".into(),
            Command::Solve { .. } => "solve".into(),
            Command::Bootstrap { mode, .. } => format!("bootstrap {}", mode.as_str()),
            Command::Iterate { .. } => "iterate".into(),
            Command::Eval { .. } => "eval".into(),
            Command::Export { .. } => "export".into(),
        }
    }
}

/// The audit record every run writes next to its artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    /// SHA-256 over the effective config's serialized form.
    pub config_digest: String,
    pub seed: u64,
    /// Model ids involved, in order of appearance.
    pub models: Vec<String>,
    /// SHA-256 of the few-shot pool file, when one was used.
    pub fewshot_pool_sha256: Option<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Artifact file names relative to the run directory.
    pub outputs: Vec<String>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// What a completed run hands back to the caller.
#[derive(Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    /// Human-readable result lines, one per stdout line.
    pub summary: Vec<String>,
    pub warnings: Vec<String>,
}

struct RunContext<'a> {
    config: &'a PipelineConfig,
    out_dir: &'a Path,
    started_unix: u64,
    outputs: Vec<String>,
    models: Vec<String>,
    fewshot_pool_sha256: Option<String>,
    summary: Vec<String>,
    warnings: Vec<String>,
}

impl RunContext<'_> {
    fn write_artifact(&mut self, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), PipelineError> {
        let mut body = serde_json::to_string_pretty(value).expect("artifact serializes");
        body.push('\n');
        self.write_artifact(name, body.as_bytes())
    }

    fn write_jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> Result<(), PipelineError> {
        let mut body = String::new();
        for item in items {
            body.push_str(&serde_json::to_string(item).expect("line serializes"));
            body.push('\n');
        }
        self.write_artifact(name, body.as_bytes())
    }

    fn finish(mut self, command: &Command) -> Result<RunOutcome, PipelineError> {
        let mut outputs = self.outputs.clone();
        outputs.push(MANIFEST_NAME.to_string());
        outputs.sort();
        let manifest = Manifest {
            command: command.name(),
            config_digest: self.config.digest(),
            seed: self.config.seed,
            models: self.models.clone(),
            fewshot_pool_sha256: self.fewshot_pool_sha256.clone(),
            started_unix: self.started_unix,
            finished_unix: unix_now(),
            outputs,
        };
        let mut body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        body.push('\n');
        let path = self.out_dir.join(MANIFEST_NAME);
        std::fs::write(&path, body).map_err(io_err(&path))?;
        Ok(RunOutcome {
            out_dir: self.out_dir.to_path_buf(),
            manifest,
            summary: std::mem::take(&mut self.summary),
            warnings: std::mem::take(&mut self.warnings),
        })
    }
}

fn make_generator(config: &PipelineConfig) -> Result<Box<dyn TextGenerator>, PipelineError> {
    Ok(match config.generation_choice()? {
        BackendChoice::Mock => Box::new(EchoGenerator),
        BackendChoice::Http(url) => Box::new(crate::backend::http::HttpGenerator::new(
            url,
            config.backends.api_token.clone(),
        )),
    })
}

fn make_embedder(config: &PipelineConfig) -> Result<Box<dyn TextEmbedder>, PipelineError> {
    Ok(match config.embedding_choice()? {
        BackendChoice::Mock => Box::new(BigramEmbedder),
        BackendChoice::Http(url) => Box::new(crate::backend::http::HttpEmbedder::new(
            url,
            config.backends.api_token.clone(),
        )),
    })
}

fn make_tuner(config: &PipelineConfig) -> Result<Box<dyn FineTuner>, PipelineError> {
    Ok(match config.finetune_choice()? {
        TunerChoice::Mock => Box::new(MockFineTuner::with_polls(1)),
        TunerChoice::Http(url) => Box::new(crate::backend::http::HttpFineTuner::new(
            url,
            config.backends.api_token.clone(),
        )),
        TunerChoice::Command(program) => Box::new(crate::backend::command::CmdFineTuner::new(program)),
    })
}

/// Read a file of generation instances. Accepts either an instances
/// file (one JSON instance per line) or a sessions corpus, which is
/// expanded on the fly; the two layouts are distinguished by their
/// required keys.
pub fn load_instances(path: &Path) -> Result<Vec<GenerationInstance>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let first = text.lines().find(|l| !l.trim().is_empty());
    let Some(first) = first else {
        return Err(PipelineError::Input(format!("{} is empty", path.display())));
    };
    let looks_like_instance = serde_json::from_str::<serde_json::Value>(first)
        .ok()
        .map(|v| v.get("session_id").is_some() && v.get("gold_response").is_some())
        .unwrap_or(false);
    if looks_like_instance {
        let mut instances = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let instance: GenerationInstance = serde_json::from_str(line).map_err(|e| {
                PipelineError::Input(format!("{} line {}: {e}", path.display(), i + 1))
            })?;
            instances.push(instance);
        }
        Ok(instances)
    } else {
        let sessions = read_sessions(path)?;
        let options = ExpandOptions::default();
        let mut instances = Vec::new();
        for session in &sessions {
            instances.extend(
                expand_session(session, &options)
                    .map_err(|e| PipelineError::Input(e.to_string()))?,
            );
        }
        Ok(instances)
    }
}

fn require_pool(
    config: &PipelineConfig,
) -> Result<(Vec<crate::dialogue::DemonstrationExample>, PathBuf), PipelineError> {
    let path = config.corpus.fewshot_pool.as_ref().ok_or_else(|| {
        PipelineError::Input("corpus.fewshot_pool must point at a demonstration file".into())
    })?;
    let pool = read_fewshot_pool(path)?;
    if pool.is_empty() {
        return Err(PipelineError::Input(format!("{} holds no demonstrations", path.display())));
    }
    Ok((pool, path.clone()))
}

fn resolve_input(
    explicit: &Option<PathBuf>,
    fallback: &Option<PathBuf>,
    what: &str,
) -> Result<PathBuf, PipelineError> {
    explicit
        .clone()
        .or_else(|| fallback.clone())
        .ok_or_else(|| PipelineError::Input(format!("no {what} given on the command line or in the config")))
}

fn read_lines(path: &Path) -> Result<Vec<String>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

/// A solved trace line in `solve` output.
#[derive(Serialize)]
struct SolveFailure {
    id: String,
    error: String,
}

/// Execute one command. The output directory must not exist yet; its
/// creation is the run's lock and no artifacts land anywhere else.
pub fn run(
    command: &Command,
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<RunOutcome, PipelineError> {
    config.validate()?;
    if let Some(parent) = out_dir.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    match std::fs::create_dir(out_dir) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
            return Err(PipelineError::OutDirExists(out_dir.display().to_string()));
        }
        Err(e) => return Err(io_err(out_dir)(e)),
    }
    let mut ctx = RunContext {
        config,
        out_dir,
        started_unix: unix_now(),
        outputs: Vec::new(),
        models: Vec::new(),
        fewshot_pool_sha256: None,
        summary: Vec::new(),
        warnings: Vec::new(),
    };

    match command {
        Command::Ingest { raw, format, split } => cmd_ingest(&mut ctx, raw, *format, *split)?,
        Command::Expand { input } => cmd_expand(&mut ctx, input)?,
        Command::Solve { input } => cmd_solve(&mut ctx, input)?,
        Command::Bootstrap { mode, input } => cmd_bootstrap(&mut ctx, *mode, input)?,
        Command::Iterate { train, valid } => {
            // A failed loop still leaves reports and a manifest behind;
            // the error surfaces after the artifacts are safe.
            if let Some(failure) = cmd_iterate(&mut ctx, train, valid)? {
                let outcome = ctx.finish(command)?;
                drop(outcome);
                return Err(PipelineError::Iterate(failure));
            }
        }
        Command::Eval { hypotheses, references } => cmd_eval(&mut ctx, hypotheses, references)?,
        Command::Export { records } => cmd_export(&mut ctx, records)?,
    }
    ctx.finish(command)
}

fn cmd_ingest(
    ctx: &mut RunContext<'_>,
    raw: &Path,
    format: RawFormat,
    split: SplitName,
) -> Result<(), PipelineError> {
    let text = std::fs::read_to_string(raw).map_err(io_err(raw))?;
    let first = text.trim_start().chars().next();
    match (format, first) {
        (RawFormat::Json, Some(c)) if c != '[' => {
            return Err(PipelineError::Input(format!(
                "{} does not start with a JSON array but format json was requested",
                raw.display()
            )));
        }
        (RawFormat::Jsonl, Some('[')) => {
            return Err(PipelineError::Input(format!(
                "{} starts with a JSON array but format jsonl was requested",
                raw.display()
            )));
        }
        _ => {}
    }
    let sessions = crate::corpus::convert_raw(raw)?;
    let out_path = ctx.out_dir.join("corpus.jsonl");
    write_sessions(&out_path, &sessions)?;
    ctx.outputs.push("corpus.jsonl".to_string());
    if let Some(preset) = ctx.config.preset()? {
        if let Some(warning) = split_size_warning(preset, split, sessions.len()) {
            ctx.warnings.push(warning);
        }
    }
    ctx.summary.push(format!(
        "ingested {} sessions into corpus.jsonl ({} split)",
        sessions.len(),
        split.as_str()
    ));
    Ok(())
}

fn cmd_expand(ctx: &mut RunContext<'_>, input: &Option<PathBuf>) -> Result<(), PipelineError> {
    let path = resolve_input(input, &ctx.config.corpus.train, "sessions file")?;
    let sessions = read_sessions(&path)?;
    let options = ExpandOptions::default();
    let mut instances = Vec::new();
    for session in &sessions {
        instances
            .extend(expand_session(session, &options).map_err(|e| PipelineError::Input(e.to_string()))?);
    }
    ctx.write_jsonl("instances.jsonl", &instances)?;
    ctx.summary.push(format!(
        "expanded {} sessions into {} instances",
        sessions.len(),
        instances.len()
    ));
    Ok(())
}

fn cmd_solve(ctx: &mut RunContext<'_>, input: &Option<PathBuf>) -> Result<(), PipelineError> {
    let path = resolve_input(input, &ctx.config.corpus.train, "instances file")?;
    let instances = load_instances(&path)?;
    let (pool, pool_path) = require_pool(ctx.config)?;
    ctx.fewshot_pool_sha256 = Some(crate::corpus::hash_file(&pool_path)?);
    let generator = make_generator(ctx.config)?;
    let chain = ctx.config.chain()?;
    let fewshot = crate::bootstrap::initial_fewshot(
        &pool,
        ctx.config.bootstrap.fewshot_size.min(pool.len()),
        ctx.config.seed,
    )?;
    let solver = ChainSolver {
        generator: generator.as_ref(),
        model: &ctx.config.backends.model,
        template: &ctx.config.template,
        history_budget: ctx.config.bootstrap.history_budget,
    };
    ctx.models.push(ctx.config.backends.model.clone());
    let mut traces = Vec::new();
    let mut failures = Vec::new();
    for instance in &instances {
        match solver.solve(&fewshot, instance, &chain, &DecodingParams::greedy(), None) {
            Ok(trace) => traces.push(trace),
            Err(e) => failures.push(SolveFailure {
                id: instance.instance_ref().to_string(),
                error: e.to_string(),
            }),
        }
    }
    ctx.write_jsonl("traces.jsonl", &traces)?;
    if !failures.is_empty() {
        ctx.write_jsonl("failures.jsonl", &failures)?;
    }
    ctx.summary.push(format!(
        "solved {} of {} instances ({} failed)",
        traces.len(),
        instances.len(),
        failures.len()
    ));
    Ok(())
}

fn bootstrap_artifacts(
    ctx: &mut RunContext<'_>,
    records: &[FilteredRecord],
    stats: &crate::bootstrap::BootstrapStats,
) -> Result<usize, PipelineError> {
    ctx.write_jsonl("records.jsonl", records)?;
    let filtered_path = ctx.out_dir.join("filtered.jsonl");
    let written = write_filtered_dataset(records, &filtered_path)?;
    ctx.outputs.push("filtered.jsonl".to_string());
    let unresolved: Vec<&FilteredRecord> =
        records.iter().filter(|r| r.provenance == Provenance::Unresolved).collect();
    if !unresolved.is_empty() {
        ctx.write_jsonl("unresolved.jsonl", &unresolved)?;
    }
    ctx.write_json("stats.json", stats)?;
    Ok(written)
}

fn cmd_bootstrap(
    ctx: &mut RunContext<'_>,
    mode: BootstrapMode,
    input: &Option<PathBuf>,
) -> Result<(), PipelineError> {
    let path = resolve_input(input, &ctx.config.corpus.train, "instances file")?;
    let instances = load_instances(&path)?;
    let (pool, pool_path) = require_pool(ctx.config)?;
    ctx.fewshot_pool_sha256 = Some(crate::corpus::hash_file(&pool_path)?);
    let generator = make_generator(ctx.config)?;
    let embedder = make_embedder(ctx.config)?;
    let chain = ctx.config.chain()?;
    let bootstrap_config = ctx.config.to_bootstrap_config(pool)?;
    let run = BootstrapRun {
        generator: generator.as_ref(),
        embedder: embedder.as_ref(),
        model: &ctx.config.backends.model,
        chain: &chain,
        template: &ctx.config.template,
        config: &bootstrap_config,
        parallelism: ctx.config.parallelism(),
    };
    ctx.models.push(ctx.config.backends.model.clone());
    let (records, stats) = match mode {
        BootstrapMode::Ap => run.ap(&instances)?,
        BootstrapMode::Pr => run.pr(&instances)?,
        BootstrapMode::ApThenPr => run.ap_then_pr(&instances)?,
    };
    let written = bootstrap_artifacts(ctx, &records, &stats)?;
    ctx.summary.push(format!(
        "bootstrap {}: {} credible, {} rationalized, {} consistent, {} unresolved; {} training records",
        mode.as_str(),
        stats.counts.credible,
        stats.counts.rationalized,
        stats.counts.consistent,
        stats.counts.unresolved,
        written
    ));
    ctx.summary.push(format!("dataset reward {:.1}", stats.dataset_reward));
    Ok(())
}

fn cmd_iterate(
    ctx: &mut RunContext<'_>,
    train: &Option<PathBuf>,
    valid: &Option<PathBuf>,
) -> Result<Option<String>, PipelineError> {
    let train_path = resolve_input(train, &ctx.config.corpus.train, "training instances file")?;
    let valid_path = resolve_input(valid, &ctx.config.corpus.valid, "validation instances file")?;
    let train_instances = load_instances(&train_path)?;
    let valid_instances = load_instances(&valid_path)?;
    let (pool, pool_path) = require_pool(ctx.config)?;
    ctx.fewshot_pool_sha256 = Some(crate::corpus::hash_file(&pool_path)?);
    let generator = make_generator(ctx.config)?;
    let embedder = make_embedder(ctx.config)?;
    let tuner = make_tuner(ctx.config)?;
    let chain = ctx.config.chain()?;
    let bootstrap_config = ctx.config.to_bootstrap_config(pool)?;
    let options = ctx.config.to_iterate_options()?;
    let base_model = ctx.config.backends.model.clone();
    let run = BootstrapRun {
        generator: generator.as_ref(),
        embedder: embedder.as_ref(),
        model: &base_model,
        chain: &chain,
        template: &ctx.config.template,
        config: &bootstrap_config,
        parallelism: ctx.config.parallelism(),
    };
    ctx.models.push(base_model.clone());
    let outcome = iterate(
        &run,
        tuner.as_ref(),
        &base_model,
        &train_instances,
        &valid_instances,
        &options,
        ctx.out_dir,
    )?;
    for report in &outcome.reports {
        ctx.models.push(report.model.clone());
        // The per-iteration files were written by the loop itself.
        let dir = format!("iter-{:02}", report.iteration);
        ctx.outputs.push(format!("{dir}/filtered.jsonl"));
        ctx.outputs.push(format!("{dir}/stats.json"));
        ctx.summary.push(format!(
            "iteration {}: model {}, {} {:.4}{}",
            report.iteration,
            report.model,
            options.metric_key.as_str(),
            report.metric_value,
            match report.stopped_reason {
                Some(reason) => format!(" (stopped: {})", stop_reason_str(reason)),
                None => String::new(),
            }
        ));
    }
    ctx.write_json("reports.json", &outcome.reports)?;
    Ok(outcome.failure)
}

fn stop_reason_str(reason: crate::bootstrap::StopReason) -> &'static str {
    match reason {
        crate::bootstrap::StopReason::Plateau => "plateau",
        crate::bootstrap::StopReason::MaxIterations => "max_iterations",
    }
}

fn cmd_eval(
    ctx: &mut RunContext<'_>,
    hypotheses: &Path,
    references: &Path,
) -> Result<(), PipelineError> {
    let hyp_lines = read_lines(hypotheses)?;
    let ref_lines = read_lines(references)?;
    if hyp_lines.len() != ref_lines.len() {
        return Err(PipelineError::Input(format!(
            "hypothesis file has {} lines but reference file has {}",
            hyp_lines.len(),
            ref_lines.len()
        )));
    }
    let pairs: Vec<(String, String)> =
        hyp_lines.into_iter().zip(ref_lines).collect();
    let report = evaluate_corpus(&pairs, ctx.config.metrics.scheme)?;
    let mut body = serde_json::to_string_pretty(&report.to_json()).expect("report serializes");
    body.push('\n');
    ctx.write_artifact("report.json", body.as_bytes())?;
    for line in report.to_table().lines() {
        ctx.summary.push(line.to_string());
    }
    Ok(())
}

fn cmd_export(ctx: &mut RunContext<'_>, records_path: &Path) -> Result<(), PipelineError> {
    let text = std::fs::read_to_string(records_path).map_err(io_err(records_path))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: FilteredRecord = serde_json::from_str(line).map_err(|e| {
            PipelineError::Input(format!("{} line {}: {e}", records_path.display(), i + 1))
        })?;
        records.push(record);
    }
    let filtered_path = ctx.out_dir.join("filtered.jsonl");
    let written = write_filtered_dataset(&records, &filtered_path)?;
    ctx.outputs.push("filtered.jsonl".to_string());
    ctx.summary.push(format!(
        "exported {written} training records from {} bootstrap records",
        records.len()
    ));
    Ok(())
}
