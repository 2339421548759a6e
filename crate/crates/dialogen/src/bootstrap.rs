//! Trace bootstrapping: generate reasoning chains, keep the trustworthy
//! ones, repair or retry the rest, and drive the fine-tune loop.
//!
//! Two filters are provided. The answer-providing bootstrap (AP) solves
//! each chain greedily, scores every step's answer against the gold
//! response, keeps traces whose scores all strictly clear their
//! thresholds as `credible`, and re-solves the rest with the gold
//! response as a hint (`rationalized`). The prompt-revising bootstrap
//! (PR) samples candidate answers per step under revised few-shot
//! selections until two candidates agree (cosine above theta), accepting
//! the pair's representative (`consistent`) or giving up at the revision
//! cap (`unresolved`).
//!
//! The iteration controller alternates bootstrap, fine-tune (always from
//! the original base model), and validation scoring until the chosen
//! metric plateaus or an iteration cap is hit.

use crate::backend::{
    DecodingParams, FineTuner, JobStatus, TextEmbedder, TextGenerator, TrainingParams,
};
use crate::dialogue::{
    DemonstrationExample, FewShotSet, GenerationInstance, InstanceRef, ReasoningTrace,
    SubQuestionChain,
};
use crate::metrics::{evaluate_corpus, MetricReport, TokenScheme};
use crate::prompt::{build_step_prompt, extract_answer, ChainSolver, PromptTemplate};
use crate::similarity::{
    cosine, indicator_reward, most_consistent_pair, representative_of_pair, ThresholdVector,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BootstrapError {
    #[error("invalid bootstrap configuration: {0}")]
    InvalidConfig(String),
    #[error("no instances to bootstrap")]
    NoInstances,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// How a record earned its place in (or out of) the training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Credible,
    Rationalized,
    Consistent,
    Unresolved,
}

impl Provenance {
    pub fn is_trainable(self) -> bool {
        self != Provenance::Unresolved
    }
}

/// Candidate bookkeeping for one PR step: every sampled answer, the pair
/// that won, its score, and which member was chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCandidates {
    pub answers: Vec<String>,
    pub winning_pair: (usize, usize),
    pub pair_score: f64,
    pub chosen: usize,
    pub revisions: usize,
}

/// One bootstrapped instance. Exactly one record exists per input
/// instance; unresolved records carry no trace and are excluded from
/// training files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredRecord {
    pub instance: GenerationInstance,
    pub provenance: Provenance,
    pub trace: Option<ReasoningTrace>,
    /// AP: per-step similarity of the stored trace's answers against the
    /// gold response. PR: per-step winning-pair scores.
    pub per_step_scores: Vec<f64>,
    /// Largest per-step revision count (always 0 for AP).
    pub revisions_used: usize,
    /// PR candidate details, one entry per resolved step.
    pub step_details: Option<Vec<StepCandidates>>,
    /// Why the instance is unresolved, when it is.
    pub error: Option<String>,
}

impl FilteredRecord {
    pub fn instance_ref(&self) -> InstanceRef {
        self.instance.instance_ref()
    }
}

/// Tuning knobs shared by both bootstraps.
#[derive(Debug, Clone)]
pub struct BootstrapConfig {
    /// Per-step acceptance thresholds for AP.
    pub eta: ThresholdVector,
    /// Pair-consistency threshold for PR.
    pub theta: f64,
    /// PR revision cap per step.
    pub max_revisions: usize,
    pub fewshot_pool: Vec<DemonstrationExample>,
    pub fewshot_size: usize,
    /// Accept AP traces on the final step's score alone.
    pub final_step_only: bool,
    /// Sampling controls for PR candidate generation.
    pub sampling_temperature: f64,
    pub sampling_top_p: f64,
    pub seed: u64,
    /// Character budget when rendering histories into prompts.
    pub history_budget: Option<usize>,
}

impl BootstrapConfig {
    pub fn new(eta: ThresholdVector, fewshot_pool: Vec<DemonstrationExample>) -> Self {
        BootstrapConfig {
            eta,
            theta: 0.8,
            max_revisions: 3,
            fewshot_size: crate::dialogue::DEFAULT_FEWSHOT_MAX.min(fewshot_pool.len().max(1)),
            fewshot_pool,
            final_step_only: false,
            sampling_temperature: 0.8,
            sampling_top_p: 0.95,
            seed: 0,
            history_budget: None,
        }
    }

    fn validate(&self, chain: &SubQuestionChain) -> Result<(), BootstrapError> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(BootstrapError::InvalidConfig(format!(
                "theta {} outside (0, 1)",
                self.theta
            )));
        }
        if self.max_revisions == 0 {
            return Err(BootstrapError::InvalidConfig("max_revisions must be positive".into()));
        }
        if self.fewshot_size == 0 {
            return Err(BootstrapError::InvalidConfig("fewshot_size must be positive".into()));
        }
        if self.fewshot_size > self.fewshot_pool.len() {
            return Err(BootstrapError::InvalidConfig(format!(
                "fewshot_size {} exceeds pool of {}",
                self.fewshot_size,
                self.fewshot_pool.len()
            )));
        }
        self.eta.check_len(chain.len()).map_err(|e| BootstrapError::InvalidConfig(e.to_string()))
    }
}

/// Stable sub-seed derivation: FNV over a context string, so identical
/// runs derive identical sampling seeds on every platform.
fn derive_seed(root: u64, context: &str) -> u64 {
    crate::backend::mock::fnv1a(format!("{root}/{context}").as_bytes())
}

fn keyed_selection(pool_len: usize, size: usize, seed: u64, revision_index: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("fewshot/{revision_index}")));
    let mut indices = rand::seq::index::sample(&mut rng, pool_len, size).into_vec();
    indices.sort_unstable();
    indices
}

/// The few-shot selection every run starts from: revision index 0.
pub fn initial_fewshot(
    pool: &[DemonstrationExample],
    size: usize,
    seed: u64,
) -> Result<FewShotSet, BootstrapError> {
    if size == 0 || size > pool.len() {
        return Err(BootstrapError::InvalidConfig(format!(
            "fewshot size {size} invalid for pool of {}",
            pool.len()
        )));
    }
    let indices = keyed_selection(pool.len(), size, seed, 0);
    FewShotSet::from_pool(pool, &indices, size.max(crate::dialogue::DEFAULT_FEWSHOT_MAX))
        .map_err(|e| BootstrapError::InvalidConfig(e.to_string()))
}

/// Draw the few-shot selection for a revision. Selections are keyed by
/// `(seed, revision_index)` alone, so every instance sees the same
/// revision sequence. When the pool is larger than the selection the
/// result is nudged to differ from `previous` in at least one example;
/// when the pool is exhausted the selection cannot change and candidate
/// diversity comes from sampling instead.
pub fn revise_fewshot(
    pool: &[DemonstrationExample],
    previous: &FewShotSet,
    revision_index: u64,
    seed: u64,
) -> Result<FewShotSet, BootstrapError> {
    let size = previous.len();
    if size > pool.len() {
        return Err(BootstrapError::InvalidConfig(format!(
            "fewshot size {size} exceeds pool of {}",
            pool.len()
        )));
    }
    if size == pool.len() {
        return Ok(previous.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("fewshot/{revision_index}")));
    let mut indices: Vec<usize> = Vec::new();
    for _ in 0..16 {
        indices = rand::seq::index::sample(&mut rng, pool.len(), size).into_vec();
        indices.sort_unstable();
        if indices != previous.pool_indices() {
            break;
        }
    }
    if indices == previous.pool_indices() {
        // Deterministic fallback: swap the last pick for the smallest
        // index outside the selection.
        let outside = (0..pool.len()).find(|i| !indices.contains(i)).expect("pool is larger");
        *indices.last_mut().expect("non-empty selection") = outside;
        indices.sort_unstable();
    }
    FewShotSet::from_pool(pool, &indices, size.max(crate::dialogue::DEFAULT_FEWSHOT_MAX))
        .map_err(|e| BootstrapError::InvalidConfig(e.to_string()))
}

/// Per-provenance record counts. They always sum to the instance count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProvenanceCounts {
    pub credible: usize,
    pub rationalized: usize,
    pub consistent: usize,
    pub unresolved: usize,
}

impl ProvenanceCounts {
    pub fn total(&self) -> usize {
        self.credible + self.rationalized + self.consistent + self.unresolved
    }

    fn add(&mut self, provenance: Provenance) {
        match provenance {
            Provenance::Credible => self.credible += 1,
            Provenance::Rationalized => self.rationalized += 1,
            Provenance::Consistent => self.consistent += 1,
            Provenance::Unresolved => self.unresolved += 1,
        }
    }
}

pub const SCORE_HISTOGRAM_BINS: usize = 20;

/// Run summary written next to every filtered dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapStats {
    pub counts: ProvenanceCounts,
    /// Indicator-reward sum over final-step scores against gold: the
    /// unhinted greedy pass for AP runs, the chosen answers for PR runs.
    pub dataset_reward: f64,
    /// One 20-bin histogram over [0, 1] per chain step, filled from the
    /// per-step scores of records that carry a trace.
    pub per_step_score_histograms: Vec<Vec<u64>>,
    /// Histogram of `revisions_used` (index = revision count).
    pub revisions_histogram: Vec<u64>,
}

fn score_bin(score: f64) -> usize {
    let bin = (score.clamp(0.0, 1.0) * SCORE_HISTOGRAM_BINS as f64) as usize;
    bin.min(SCORE_HISTOGRAM_BINS - 1)
}

fn build_stats(
    records: &[FilteredRecord],
    chain_len: usize,
    max_revisions: usize,
    final_scores_unhinted: &[Option<f64>],
    eta_final: f64,
) -> BootstrapStats {
    let mut counts = ProvenanceCounts::default();
    let mut histograms = vec![vec![0u64; SCORE_HISTOGRAM_BINS]; chain_len];
    let mut revisions = vec![0u64; max_revisions + 1];
    for record in records {
        counts.add(record.provenance);
        if record.trace.is_some() {
            for (step, &score) in record.per_step_scores.iter().enumerate() {
                if step < chain_len {
                    histograms[step][score_bin(score)] += 1;
                }
            }
        }
        revisions[record.revisions_used.min(max_revisions)] += 1;
    }
    let dataset_reward = final_scores_unhinted
        .iter()
        .flatten()
        .map(|&s| indicator_reward(s, eta_final))
        .sum();
    BootstrapStats {
        counts,
        dataset_reward,
        per_step_score_histograms: histograms,
        revisions_histogram: revisions,
    }
}

/// Everything fixed across one bootstrap pass.
pub struct BootstrapRun<'a> {
    pub generator: &'a dyn TextGenerator,
    pub embedder: &'a dyn TextEmbedder,
    pub model: &'a str,
    pub chain: &'a SubQuestionChain,
    pub template: &'a PromptTemplate,
    pub config: &'a BootstrapConfig,
    /// Worker threads for instance-level parallelism; 1 = sequential.
    pub parallelism: usize,
}

impl BootstrapRun<'_> {
    fn solver(&self) -> ChainSolver<'_> {
        ChainSolver {
            generator: self.generator,
            model: self.model,
            template: self.template,
            history_budget: self.config.history_budget,
        }
    }

    fn map_instances<T, F>(
        &self,
        instances: &[GenerationInstance],
        f: F,
    ) -> Vec<(FilteredRecord, T)>
    where
        F: Fn(&GenerationInstance) -> (FilteredRecord, T) + Send + Sync,
        T: Send,
    {
        let mut records: Vec<(FilteredRecord, T)> = if self.parallelism <= 1 {
            instances.iter().map(f).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.parallelism)
                .build()
                .expect("worker pool");
            pool.install(|| instances.par_iter().map(f).collect())
        };
        // Canonical order regardless of completion order; the payload
        // travels with its record.
        records.sort_by(|a, b| a.0.instance_ref().cmp(&b.0.instance_ref()));
        records
    }

    fn score_trace_against_gold(
        &self,
        trace: &ReasoningTrace,
        gold_embedding: &[f64],
    ) -> Result<Vec<f64>, String> {
        let mut scores = Vec::with_capacity(trace.steps.len());
        for step in &trace.steps {
            let answer_embedding =
                self.embedder.embed(&step.answer).map_err(|e| e.to_string())?;
            let score = cosine(&answer_embedding, gold_embedding).map_err(|e| e.to_string())?;
            scores.push(score);
        }
        Ok(scores)
    }

    fn ap_passes(&self, scores: &[f64]) -> bool {
        let eta = self.config.eta.values();
        if self.config.final_step_only {
            match (scores.last(), eta.last()) {
                (Some(&score), Some(&threshold)) => indicator_reward(score, threshold) == 1.0,
                _ => false,
            }
        } else {
            scores.len() == eta.len()
                && scores.iter().zip(eta).all(|(&s, &t)| indicator_reward(s, t) == 1.0)
        }
    }

    /// Answer-providing bootstrap over a whole instance list.
    pub fn ap(
        &self,
        instances: &[GenerationInstance],
    ) -> Result<(Vec<FilteredRecord>, BootstrapStats), BootstrapError> {
        self.ap_with_repair(instances, true)
    }

    /// AP with the rationalization pass made optional so the sequential
    /// composition can skip it and hand failures to PR instead.
    fn ap_with_repair(
        &self,
        instances: &[GenerationInstance],
        repair: bool,
    ) -> Result<(Vec<FilteredRecord>, BootstrapStats), BootstrapError> {
        self.config.validate(self.chain)?;
        if instances.is_empty() {
            return Err(BootstrapError::NoInstances);
        }
        let fewshot =
            initial_fewshot(&self.config.fewshot_pool, self.config.fewshot_size, self.config.seed)?;
        let solver = self.solver();
        let params = DecodingParams::greedy();

        // Each instance yields its record plus the final-step score of
        // the unhinted pass. The reward is defined over those scores, so
        // they must survive even when the record itself ends up holding
        // a hinted trace or an error.
        let outcomes = self.map_instances(instances, |instance| {
            let unresolved = |message: String| FilteredRecord {
                instance: instance.clone(),
                provenance: Provenance::Unresolved,
                trace: None,
                per_step_scores: Vec::new(),
                revisions_used: 0,
                step_details: None,
                error: Some(message),
            };
            let gold_embedding = match self.embedder.embed(&instance.gold_response) {
                Ok(v) => v,
                Err(e) => return (unresolved(format!("gold embedding failed: {e}")), None),
            };
            let trace = match solver.solve(&fewshot, instance, self.chain, &params, None) {
                Ok(t) => t,
                Err(e) => return (unresolved(e.to_string()), None),
            };
            let scores = match self.score_trace_against_gold(&trace, &gold_embedding) {
                Ok(s) => s,
                Err(e) => return (unresolved(format!("scoring failed: {e}")), None),
            };
            let unhinted_final = scores.last().copied();
            if self.ap_passes(&scores) {
                let record = FilteredRecord {
                    instance: instance.clone(),
                    provenance: Provenance::Credible,
                    trace: Some(trace),
                    per_step_scores: scores,
                    revisions_used: 0,
                    step_details: None,
                    error: None,
                };
                return (record, unhinted_final);
            }
            if !repair {
                let record = unresolved("trace failed the credibility thresholds".into());
                return (record, unhinted_final);
            }
            // Rationalization: re-solve with the gold response in view.
            let hinted = match solver.solve(
                &fewshot,
                instance,
                self.chain,
                &params,
                Some(&instance.gold_response),
            ) {
                Ok(t) => t,
                Err(e) => {
                    return (unresolved(format!("rationalization failed: {e}")), unhinted_final)
                }
            };
            let hinted_scores = match self.score_trace_against_gold(&hinted, &gold_embedding) {
                Ok(s) => s,
                Err(e) => {
                    return (
                        unresolved(format!("rationalized scoring failed: {e}")),
                        unhinted_final,
                    )
                }
            };
            let record = FilteredRecord {
                instance: instance.clone(),
                provenance: Provenance::Rationalized,
                trace: Some(hinted),
                per_step_scores: hinted_scores,
                revisions_used: 0,
                step_details: None,
                error: None,
            };
            (record, unhinted_final)
        });
        let (records, finals): (Vec<FilteredRecord>, Vec<Option<f64>>) =
            outcomes.into_iter().unzip();
        let eta_final = *self.config.eta.values().last().expect("non-empty eta");
        let stats =
            build_stats(&records, self.chain.len(), self.config.max_revisions, &finals, eta_final);
        Ok((records, stats))
    }

    /// Prompt-revising bootstrap over a whole instance list.
    pub fn pr(
        &self,
        instances: &[GenerationInstance],
    ) -> Result<(Vec<FilteredRecord>, BootstrapStats), BootstrapError> {
        self.config.validate(self.chain)?;
        if instances.is_empty() {
            return Err(BootstrapError::NoInstances);
        }
        let records: Vec<FilteredRecord> = self
            .map_instances(instances, |instance| (self.pr_one(instance), ()))
            .into_iter()
            .map(|(record, ())| record)
            .collect();
        let eta_final = *self.config.eta.values().last().expect("non-empty eta");
        // PR never scores against gold while filtering; the reward is a
        // post-hoc diagnostic of the chosen final answers.
        let finals: Vec<Option<f64>> = records
            .iter()
            .map(|record| {
                let answer = record.trace.as_ref()?.final_answer()?;
                let gold = self.embedder.embed(&record.instance.gold_response).ok()?;
                let ans = self.embedder.embed(answer).ok()?;
                cosine(&ans, &gold).ok()
            })
            .collect();
        let stats =
            build_stats(&records, self.chain.len(), self.config.max_revisions, &finals, eta_final);
        Ok((records, stats))
    }

    fn pr_one(&self, instance: &GenerationInstance) -> FilteredRecord {
        let unresolved = |revisions: usize, message: String| FilteredRecord {
            instance: instance.clone(),
            provenance: Provenance::Unresolved,
            trace: None,
            per_step_scores: Vec::new(),
            revisions_used: revisions,
            step_details: None,
            error: Some(message),
        };
        let history_text =
            match crate::dialogue::render_history(&instance.history, self.config.history_budget) {
                Ok(t) => t,
                Err(e) => return unresolved(0, e.to_string()),
            };
        let pool = &self.config.fewshot_pool;
        let initial = match initial_fewshot(pool, self.config.fewshot_size, self.config.seed) {
            Ok(f) => f,
            Err(e) => return unresolved(0, e.to_string()),
        };

        let mut steps = Vec::with_capacity(self.chain.len());
        let mut answered: Vec<(String, String)> = Vec::new();
        let mut details: Vec<StepCandidates> = Vec::with_capacity(self.chain.len());
        let mut scores = Vec::with_capacity(self.chain.len());
        let mut max_revisions_used = 0usize;

        for (index, question) in self.chain.steps().iter().enumerate() {
            let step_no = index + 1;
            let mut fewshot = initial.clone();
            let mut candidates: Vec<(String, String, Vec<f64>)> = Vec::new();
            let mut revisions = 0usize;
            let winning = loop {
                let candidate_index = candidates.len();
                let sample = match self.pr_sample(
                    &fewshot,
                    &history_text,
                    &answered,
                    question,
                    instance,
                    step_no,
                    candidate_index,
                ) {
                    Ok(s) => s,
                    Err(e) => {
                        return unresolved(
                            max_revisions_used.max(revisions),
                            format!("step {step_no}: {e}"),
                        )
                    }
                };
                candidates.push(sample);
                let embeddings: Vec<Vec<f64>> =
                    candidates.iter().map(|(_, _, e)| e.clone()).collect();
                let best = match most_consistent_pair(&embeddings) {
                    Ok(b) => b,
                    Err(e) => {
                        return unresolved(
                            max_revisions_used.max(revisions),
                            format!("step {step_no}: {e}"),
                        )
                    }
                };
                if let Some(pair) = best {
                    if pair.score > self.config.theta {
                        let chosen = match representative_of_pair(&embeddings, &pair) {
                            Ok(c) => c,
                            Err(e) => {
                                return unresolved(
                                    max_revisions_used.max(revisions),
                                    format!("step {step_no}: {e}"),
                                )
                            }
                        };
                        break Some((pair, chosen));
                    }
                }
                if revisions >= self.config.max_revisions {
                    break None;
                }
                revisions += 1;
                fewshot = match revise_fewshot(pool, &fewshot, revisions as u64, self.config.seed) {
                    Ok(f) => f,
                    Err(e) => {
                        return unresolved(
                            max_revisions_used.max(revisions),
                            format!("step {step_no}: {e}"),
                        )
                    }
                };
            };
            max_revisions_used = max_revisions_used.max(revisions);
            let Some((pair, chosen)) = winning else {
                return unresolved(
                    max_revisions_used,
                    format!(
                        "step {step_no}: no consistent pair within {} revisions",
                        self.config.max_revisions
                    ),
                );
            };
            let (rationale, answer, _) = candidates[chosen].clone();
            details.push(StepCandidates {
                answers: candidates.iter().map(|(_, a, _)| a.clone()).collect(),
                winning_pair: (pair.left, pair.right),
                pair_score: pair.score,
                chosen,
                revisions,
            });
            scores.push(pair.score);
            steps.push(crate::dialogue::ReasoningStep {
                question: question.clone(),
                rationale,
                answer: answer.clone(),
            });
            answered.push((question.clone(), answer));
        }

        FilteredRecord {
            instance: instance.clone(),
            provenance: Provenance::Consistent,
            trace: Some(ReasoningTrace {
                session_id: instance.session_id.clone(),
                turn_index: instance.turn_index,
                steps,
            }),
            per_step_scores: scores,
            revisions_used: max_revisions_used,
            step_details: Some(details),
            error: None,
        }
    }

    /// Sample one PR candidate: build the step prompt under the given
    /// few-shot selection and decode with a per-candidate seed.
    #[allow(clippy::too_many_arguments)]
    fn pr_sample(
        &self,
        fewshot: &FewShotSet,
        history_text: &str,
        answered: &[(String, String)],
        question: &str,
        instance: &GenerationInstance,
        step_no: usize,
        candidate_index: usize,
    ) -> Result<(String, String, Vec<f64>), String> {
        let prompt = build_step_prompt(self.template, fewshot, history_text, answered, question, None)
            .map_err(|e| e.to_string())?;
        let context = format!(
            "sample/{}#{}/{step_no}/{candidate_index}",
            instance.session_id, instance.turn_index
        );
        let params = DecodingParams::sampling(
            self.config.sampling_temperature,
            self.config.sampling_top_p,
            derive_seed(self.config.seed, &context),
        );
        let completion = self
            .generator
            .generate(self.model, &prompt.text, &params)
            .map_err(|e| e.to_string())?;
        let (rationale, answer) =
            extract_answer(&completion, &self.template.answer_delimiter).map_err(|e| e.to_string())?;
        let embedding = self.embedder.embed(&answer).map_err(|e| e.to_string())?;
        Ok((rationale, answer, embedding))
    }

    /// Sequential composition: AP keeps its credible traces, everything
    /// else is retried under PR. Unresolved records are those PR also
    /// gave up on. Exactly one record per instance either way.
    pub fn ap_then_pr(
        &self,
        instances: &[GenerationInstance],
    ) -> Result<(Vec<FilteredRecord>, BootstrapStats), BootstrapError> {
        let (ap_records, ap_stats) = self.ap_with_repair(instances, false)?;
        let retry: Vec<GenerationInstance> = ap_records
            .iter()
            .filter(|r| r.provenance == Provenance::Unresolved)
            .map(|r| r.instance.clone())
            .collect();
        let mut records: Vec<FilteredRecord> = ap_records
            .into_iter()
            .filter(|r| r.provenance == Provenance::Credible)
            .collect();
        if !retry.is_empty() {
            let (pr_records, _) = self.pr(&retry)?;
            records.extend(pr_records);
        }
        records.sort_by(|a, b| a.instance_ref().cmp(&b.instance_ref()));
        let eta_final = *self.config.eta.values().last().expect("non-empty eta");
        let mut stats =
            build_stats(&records, self.chain.len(), self.config.max_revisions, &[], eta_final);
        // Keep the AP pass's reward: it reflects the unhinted greedy
        // solve over the full instance list.
        stats.dataset_reward = ap_stats.dataset_reward;
        Ok((records, stats))
    }
}

#[derive(Serialize)]
struct TrainingLine<'a> {
    id: String,
    history: String,
    steps: &'a [crate::dialogue::ReasoningStep],
    response: &'a str,
    provenance: Provenance,
}

/// Write the trainable records (everything but unresolved) in canonical
/// order as line-delimited JSON. Returns how many lines were written.
/// The training target is the final answer, except for rationalized
/// records where the hinted trace may echo the hint, so the gold
/// response itself is the target.
pub fn write_filtered_dataset(
    records: &[FilteredRecord],
    path: &Path,
) -> Result<usize, BootstrapError> {
    let io_err = |source: std::io::Error| BootstrapError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut sorted: Vec<&FilteredRecord> =
        records.iter().filter(|r| r.provenance.is_trainable()).collect();
    sorted.sort_by(|a, b| a.instance_ref().cmp(&b.instance_ref()));
    let mut out = String::new();
    let mut count = 0usize;
    for record in sorted {
        let Some(trace) = &record.trace else { continue };
        let response = match record.provenance {
            Provenance::Rationalized => record.instance.gold_response.as_str(),
            _ => trace.final_answer().unwrap_or(record.instance.gold_response.as_str()),
        };
        let history = crate::dialogue::render_history(&record.instance.history, None)
            .map_err(|e| BootstrapError::InvalidConfig(e.to_string()))?;
        let line = TrainingLine {
            id: record.instance_ref().to_string(),
            history,
            steps: &trace.steps,
            response,
            provenance: record.provenance,
        };
        out.push_str(&serde_json::to_string(&line).expect("record serializes"));
        out.push('\n');
        count += 1;
    }
    std::fs::write(path, out).map_err(io_err)?;
    Ok(count)
}

/// Which bootstrap a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BootstrapMode {
    Ap,
    Pr,
    ApThenPr,
}

impl BootstrapMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BootstrapMode::Ap => "ap",
            BootstrapMode::Pr => "pr",
            BootstrapMode::ApThenPr => "ap-then-pr",
        }
    }
}

/// Validation metric the plateau rule watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKey {
    B1,
    B2,
    B4,
    R1,
    R2,
    D1,
    D2,
}

impl MetricKey {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "B@1" => Some(MetricKey::B1),
            "B@2" => Some(MetricKey::B2),
            "B@4" => Some(MetricKey::B4),
            "R@1" => Some(MetricKey::R1),
            "R@2" => Some(MetricKey::R2),
            "D@1" => Some(MetricKey::D1),
            "D@2" => Some(MetricKey::D2),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKey::B1 => "B@1",
            MetricKey::B2 => "B@2",
            MetricKey::B4 => "B@4",
            MetricKey::R1 => "R@1",
            MetricKey::R2 => "R@2",
            MetricKey::D1 => "D@1",
            MetricKey::D2 => "D@2",
        }
    }

    pub fn of(self, report: &MetricReport) -> f64 {
        match self {
            MetricKey::B1 => report.b1,
            MetricKey::B2 => report.b2,
            MetricKey::B4 => report.b4,
            MetricKey::R1 => report.r1,
            MetricKey::R2 => report.r2,
            MetricKey::D1 => report.d1,
            MetricKey::D2 => report.d2,
        }
    }
}

/// Why the iteration loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Plateau,
    MaxIterations,
}

/// One fine-tune iteration's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    /// 1-based iteration number.
    pub iteration: usize,
    /// Model the iteration produced.
    pub model: String,
    pub validation: serde_json::Value,
    /// Value of the watched metric, as a fraction.
    pub metric_value: f64,
    pub counts: ProvenanceCounts,
    pub written: usize,
    /// Set only on the final report.
    pub stopped_reason: Option<StopReason>,
}

/// Controls for [`iterate`].
#[derive(Debug, Clone)]
pub struct IterateOptions {
    pub mode: BootstrapMode,
    pub max_iterations: usize,
    /// Minimum improvement, in percentage points, that counts as
    /// progress over the best iteration so far.
    pub plateau_epsilon_pp: f64,
    /// Consecutive no-progress iterations tolerated before stopping.
    pub patience: usize,
    pub metric_key: MetricKey,
    pub scheme: TokenScheme,
    pub training: TrainingParams,
    /// Delay between fine-tune status polls.
    pub poll_interval_ms: u64,
}

impl Default for IterateOptions {
    fn default() -> Self {
        IterateOptions {
            mode: BootstrapMode::Ap,
            max_iterations: 5,
            plateau_epsilon_pp: 0.1,
            patience: 1,
            metric_key: MetricKey::B1,
            scheme: TokenScheme::Mixed,
            training: TrainingParams::default(),
            poll_interval_ms: 500,
        }
    }
}

/// Result of the full loop: the per-iteration reports plus the failure
/// that aborted it, if one did.
#[derive(Debug)]
pub struct IterateOutcome {
    pub reports: Vec<IterationReport>,
    pub failure: Option<String>,
}

fn await_job(
    tuner: &dyn FineTuner,
    job: &crate::backend::FineTuneJob,
    poll_interval_ms: u64,
) -> Result<String, String> {
    loop {
        match tuner.poll(job) {
            Ok(JobStatus::Succeeded { model }) => return Ok(model),
            Ok(JobStatus::Failed { message }) => {
                return Err(format!("fine-tune job {} failed: {message}", job.id))
            }
            Ok(_) => {
                if poll_interval_ms > 0 {
                    std::thread::sleep(std::time::Duration::from_millis(poll_interval_ms));
                }
            }
            Err(e) => return Err(format!("polling job {} failed: {e}", job.id)),
        }
    }
}

/// The outer loop: bootstrap with the current model, fine-tune from the
/// ORIGINAL base model on the filtered data, score the new model on the
/// validation instances, and repeat until the watched metric plateaus or
/// `max_iterations` is reached.
///
/// Each iteration writes `iter-<i>/filtered.jsonl` and
/// `iter-<i>/stats.json` under `work_dir`. A fine-tune failure aborts
/// the loop; the reports gathered so far are returned with the failure.
#[allow(clippy::too_many_arguments)]
pub fn iterate(
    run: &BootstrapRun<'_>,
    tuner: &dyn FineTuner,
    base_model: &str,
    train: &[GenerationInstance],
    validation: &[GenerationInstance],
    options: &IterateOptions,
    work_dir: &Path,
) -> Result<IterateOutcome, BootstrapError> {
    if options.max_iterations == 0 {
        return Err(BootstrapError::InvalidConfig("max_iterations must be at least 1".into()));
    }
    if validation.is_empty() {
        return Err(BootstrapError::InvalidConfig("validation set is empty".into()));
    }
    let mut reports: Vec<IterationReport> = Vec::new();
    let mut current_model = base_model.to_string();
    let mut best_value = f64::NEG_INFINITY;
    let mut streak = 0usize;
    let fail = |reports: Vec<IterationReport>, message: String| {
        Ok(IterateOutcome { reports, failure: Some(message) })
    };

    for iteration in 1..=options.max_iterations {
        let bootstrap_run = BootstrapRun { model: &current_model, ..*run };
        let (records, stats) = match options.mode {
            BootstrapMode::Ap => bootstrap_run.ap(train)?,
            BootstrapMode::Pr => bootstrap_run.pr(train)?,
            BootstrapMode::ApThenPr => bootstrap_run.ap_then_pr(train)?,
        };
        let iter_dir = work_dir.join(format!("iter-{iteration:02}"));
        std::fs::create_dir_all(&iter_dir).map_err(|e| BootstrapError::Io {
            path: iter_dir.display().to_string(),
            source: e,
        })?;
        let dataset_path = iter_dir.join("filtered.jsonl");
        let written = write_filtered_dataset(&records, &dataset_path)?;
        let stats_path = iter_dir.join("stats.json");
        std::fs::write(&stats_path, serde_json::to_string_pretty(&stats).expect("stats serialize"))
            .map_err(|e| BootstrapError::Io { path: stats_path.display().to_string(), source: e })?;
        if written == 0 {
            return fail(reports, format!("iteration {iteration}: no trainable records"));
        }

        // Always fine-tune from the original base model.
        let job = match tuner.submit(base_model, &dataset_path, &options.training) {
            Ok(j) => j,
            Err(e) => return fail(reports, format!("iteration {iteration}: submit failed: {e}")),
        };
        let new_model = match await_job(tuner, &job, options.poll_interval_ms) {
            Ok(m) => m,
            Err(e) => return fail(reports, format!("iteration {iteration}: {e}")),
        };

        // Score the new model on the validation instances.
        let eval_run = BootstrapRun { model: &new_model, ..*run };
        let solver = eval_run.solver();
        let fewshot = initial_fewshot(
            eval_run.config.fewshot_pool.as_slice(),
            eval_run.config.fewshot_size,
            eval_run.config.seed,
        )?;
        let mut pairs: Vec<(String, String)> = Vec::with_capacity(validation.len());
        for instance in validation {
            match solver.solve(&fewshot, instance, eval_run.chain, &DecodingParams::greedy(), None)
            {
                Ok(trace) => {
                    if let Some(answer) = trace.final_answer() {
                        pairs.push((answer.to_string(), instance.gold_response.clone()));
                    }
                }
                Err(_) => continue,
            }
        }
        if pairs.is_empty() {
            return fail(reports, format!("iteration {iteration}: validation produced no pairs"));
        }
        let report = match evaluate_corpus(&pairs, options.scheme) {
            Ok(r) => r,
            Err(e) => {
                return fail(reports, format!("iteration {iteration}: validation scoring: {e}"))
            }
        };
        let value = options.metric_key.of(&report);

        let mut stopped_reason = None;
        if iteration > 1 && (value - best_value) * 100.0 < options.plateau_epsilon_pp {
            streak += 1;
            if streak >= options.patience {
                stopped_reason = Some(StopReason::Plateau);
            }
        } else if iteration > 1 {
            streak = 0;
        }
        best_value = best_value.max(value);
        if stopped_reason.is_none() && iteration == options.max_iterations {
            stopped_reason = Some(StopReason::MaxIterations);
        }

        reports.push(IterationReport {
            iteration,
            model: new_model.clone(),
            validation: report.to_json(),
            metric_value: value,
            counts: stats.counts,
            written,
            stopped_reason,
        });
        if stopped_reason.is_some() {
            break;
        }
        current_model = new_model;
    }
    Ok(IterateOutcome { reports, failure: None })
}
