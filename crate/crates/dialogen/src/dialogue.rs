//! Core dialogue data model: sessions, turns, generation instances,
//! sub-question chains, and reasoning traces.
//!
//! A session is an alternating patient/physician utterance sequence. Each
//! physician turn that follows a patient turn yields one generation
//! instance: the history up to that turn plus the physician's utterance as
//! the gold response. Responses are produced by solving a fixed chain of
//! sub-questions, so the trace of a solved instance carries one step per
//! chain entry and the final step's answer is the response candidate.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DialogueError {
    #[error("history must not be empty")]
    EmptyHistory,
    #[error("session {id} failed validation: {}", violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidSession { id: String, violations: Vec<Violation> },
    #[error("sub-question chain must have at least one step")]
    EmptyChain,
    #[error("reasoning step answer must not be empty")]
    EmptyAnswer,
    #[error("demonstration example fields must all be non-empty")]
    EmptyDemonstration,
    #[error("few-shot set: {0}")]
    FewShot(String),
}

/// Who is speaking in a turn. The physician side is written as "doctor"
/// on the wire to match the source corpora.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    #[serde(rename = "patient")]
    Patient,
    #[serde(rename = "doctor")]
    Physician,
}

impl Speaker {
    pub fn is_patient(self) -> bool {
        self == Speaker::Patient
    }

    pub fn is_physician(self) -> bool {
        self == Speaker::Physician
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Speaker::Patient => write!(f, "patient"),
            Speaker::Physician => write!(f, "doctor"),
        }
    }
}

/// One utterance. Text must be non-empty after trimming.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

impl Turn {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        Turn { speaker, text: text.into() }
    }

    pub fn patient(text: impl Into<String>) -> Self {
        Turn::new(Speaker::Patient, text)
    }

    pub fn physician(text: impl Into<String>) -> Self {
        Turn::new(Speaker::Physician, text)
    }

    pub fn is_valid(&self) -> bool {
        !self.text.trim().is_empty()
    }
}

/// A full consultation: an id plus the ordered utterances.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSession {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl DialogueSession {
    pub fn new(id: impl Into<String>, turns: Vec<Turn>) -> Self {
        DialogueSession { id: id.into(), turns }
    }
}

/// A single rule breach found by [`validate_session`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Index of the offending turn, when the rule is per-turn.
    pub turn_index: Option<usize>,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.turn_index {
            Some(i) => write!(f, "{} at turn {}", self.rule, i),
            None => write!(f, "{}", self.rule),
        }
    }
}

/// Check session invariants. Violations are data, not failures: an empty
/// list means the session is well formed.
pub fn validate_session(session: &DialogueSession) -> Vec<Violation> {
    let mut violations = Vec::new();
    if session.id.trim().is_empty() {
        violations.push(Violation { turn_index: None, rule: "empty session id".into() });
    }
    for (i, turn) in session.turns.iter().enumerate() {
        if !turn.is_valid() {
            violations.push(Violation { turn_index: Some(i), rule: "empty text".into() });
        }
    }
    if !session.turns.iter().any(|t| t.speaker.is_physician()) {
        violations.push(Violation { turn_index: None, rule: "no physician turn".into() });
    }
    violations
}

/// Stable reference to one generation instance: session id plus the index
/// of the physician turn it targets. Orders lexicographically by
/// `(session_id, turn_index)`, which is the canonical record order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstanceRef {
    pub session_id: String,
    pub turn_index: usize,
}

impl fmt::Display for InstanceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.session_id, self.turn_index)
    }
}

/// One training/generation unit: the history before a physician turn and
/// that turn's text as the gold response. `turn_index` addresses the
/// physician turn in the (merged) session turn list, so `history` is
/// exactly the turns strictly before it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationInstance {
    pub session_id: String,
    pub turn_index: usize,
    pub history: Vec<Turn>,
    pub gold_response: String,
}

impl GenerationInstance {
    pub fn instance_ref(&self) -> InstanceRef {
        InstanceRef { session_id: self.session_id.clone(), turn_index: self.turn_index }
    }
}

/// Options for [`expand_session`].
#[derive(Debug, Clone)]
pub struct ExpandOptions {
    /// Merge runs of consecutive same-speaker turns into one turn joined
    /// by a single space, restoring the patient/physician alternation the
    /// rest of the pipeline assumes. Default on.
    pub merge_consecutive: bool,
}

impl Default for ExpandOptions {
    fn default() -> Self {
        ExpandOptions { merge_consecutive: true }
    }
}

/// Collapse consecutive same-speaker turns, joining texts with a space.
pub fn merge_consecutive_turns(turns: &[Turn]) -> Vec<Turn> {
    let mut merged: Vec<Turn> = Vec::with_capacity(turns.len());
    for turn in turns {
        match merged.last_mut() {
            Some(last) if last.speaker == turn.speaker => {
                last.text.push(' ');
                last.text.push_str(&turn.text);
            }
            _ => merged.push(turn.clone()),
        }
    }
    merged
}

/// Expand a session into one instance per physician turn whose immediately
/// preceding turn is a patient turn. A session that opens with a physician
/// turn contributes nothing for that turn. Instances come back ordered by
/// turn index; indices address the merged turn list when merging is on.
pub fn expand_session(
    session: &DialogueSession,
    options: &ExpandOptions,
) -> Result<Vec<GenerationInstance>, DialogueError> {
    let violations = validate_session(session);
    if !violations.is_empty() {
        return Err(DialogueError::InvalidSession { id: session.id.clone(), violations });
    }
    let turns = if options.merge_consecutive {
        merge_consecutive_turns(&session.turns)
    } else {
        session.turns.clone()
    };
    let mut instances = Vec::new();
    for (t, turn) in turns.iter().enumerate() {
        if turn.speaker.is_physician() && t > 0 && turns[t - 1].speaker.is_patient() {
            instances.push(GenerationInstance {
                session_id: session.id.clone(),
                turn_index: t,
                history: turns[..t].to_vec(),
                gold_response: turn.text.clone(),
            });
        }
    }
    Ok(instances)
}

/// Speaker tags and elision marker used when rendering histories to text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryStyle {
    pub patient_tag: String,
    pub physician_tag: String,
    pub elision_marker: String,
}

impl Default for HistoryStyle {
    fn default() -> Self {
        HistoryStyle {
            patient_tag: "P: ".into(),
            physician_tag: "R: ".into(),
            elision_marker: "...".into(),
        }
    }
}

impl HistoryStyle {
    fn tag(&self, speaker: Speaker) -> &str {
        match speaker {
            Speaker::Patient => &self.patient_tag,
            Speaker::Physician => &self.physician_tag,
        }
    }
}

/// Render a history as speaker-tagged lines with the default style.
pub fn render_history(history: &[Turn], budget: Option<usize>) -> Result<String, DialogueError> {
    render_history_styled(history, budget, &HistoryStyle::default())
}

/// Render a history as speaker-tagged lines, one turn per line.
///
/// When `budget` (a maximum character count) is set and the full render
/// exceeds it, the output keeps the first turn, a single elision marker
/// line, and then the longest run of most-recent turns that still fits.
/// The first turn carries the self-reported complaint, so it is never
/// dropped. A single-turn history is returned whole regardless of budget.
pub fn render_history_styled(
    history: &[Turn],
    budget: Option<usize>,
    style: &HistoryStyle,
) -> Result<String, DialogueError> {
    if history.is_empty() {
        return Err(DialogueError::EmptyHistory);
    }
    let lines: Vec<String> = history
        .iter()
        .map(|t| format!("{}{}", style.tag(t.speaker), t.text))
        .collect();
    let full = lines.join("\n");
    let budget = match budget {
        Some(b) if full.chars().count() > b => b,
        _ => return Ok(full),
    };
    if lines.len() == 1 {
        return Ok(full);
    }
    let char_len = |s: &str| s.chars().count();
    // first line + newline + marker is the floor; it stands even when the
    // budget cannot accommodate it.
    let mut used = char_len(&lines[0]) + 1 + char_len(&style.elision_marker);
    let mut keep_from = lines.len();
    for (i, line) in lines.iter().enumerate().skip(1).rev() {
        let cost = 1 + char_len(line);
        if used + cost > budget {
            break;
        }
        used += cost;
        keep_from = i;
    }
    let mut out = String::with_capacity(full.len());
    out.push_str(&lines[0]);
    out.push('\n');
    out.push_str(&style.elision_marker);
    for line in &lines[keep_from..] {
        out.push('\n');
        out.push_str(line);
    }
    Ok(out)
}

/// The ordered sub-questions a response is decomposed into.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubQuestionChain {
    steps: Vec<String>,
}

impl SubQuestionChain {
    pub fn new(steps: Vec<String>) -> Result<Self, DialogueError> {
        if steps.is_empty() || steps.iter().any(|s| s.trim().is_empty()) {
            return Err(DialogueError::EmptyChain);
        }
        Ok(SubQuestionChain { steps })
    }

    /// The default three-step decomposition: patient state, next decision,
    /// response.
    pub fn default_chain() -> Self {
        SubQuestionChain {
            steps: vec![
                "What's the patient's current state?".into(),
                "What's the physician's next decision?".into(),
                "What's the physician's response?".into(),
            ],
        }
    }

    pub fn steps(&self) -> &[String] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// One solved chain step: the sub-question, an optional rationale, and the
/// extracted answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningStep {
    pub question: String,
    pub rationale: String,
    pub answer: String,
}

impl ReasoningStep {
    pub fn new(
        question: impl Into<String>,
        rationale: impl Into<String>,
        answer: impl Into<String>,
    ) -> Result<Self, DialogueError> {
        let answer = answer.into();
        if answer.trim().is_empty() {
            return Err(DialogueError::EmptyAnswer);
        }
        Ok(ReasoningStep { question: question.into(), rationale: rationale.into(), answer })
    }
}

/// The solved chain for one instance. Steps match the chain in order and
/// the final step's answer is the generated response candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub session_id: String,
    pub turn_index: usize,
    pub steps: Vec<ReasoningStep>,
}

impl ReasoningTrace {
    pub fn instance_ref(&self) -> InstanceRef {
        InstanceRef { session_id: self.session_id.clone(), turn_index: self.turn_index }
    }

    /// The final step's answer, i.e. the response candidate.
    pub fn final_answer(&self) -> Option<&str> {
        self.steps.last().map(|s| s.answer.as_str())
    }
}

/// A worked example shown in prompts: rendered history, rationale text,
/// and the response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemonstrationExample {
    pub history_text: String,
    pub rationale_text: String,
    pub response_text: String,
}

impl DemonstrationExample {
    pub fn new(
        history_text: impl Into<String>,
        rationale_text: impl Into<String>,
        response_text: impl Into<String>,
    ) -> Result<Self, DialogueError> {
        let ex = DemonstrationExample {
            history_text: history_text.into(),
            rationale_text: rationale_text.into(),
            response_text: response_text.into(),
        };
        if ex.history_text.trim().is_empty()
            || ex.rationale_text.trim().is_empty()
            || ex.response_text.trim().is_empty()
        {
            return Err(DialogueError::EmptyDemonstration);
        }
        Ok(ex)
    }
}

/// The demonstrations selected for a prompt, with the pool indices they
/// came from. At most `max_size` entries, no duplicates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSet {
    examples: Vec<DemonstrationExample>,
    pool_indices: Vec<usize>,
}

pub const DEFAULT_FEWSHOT_MAX: usize = 5;

impl FewShotSet {
    /// Build a set from pool entries at `indices`. Indices are stored in
    /// ascending order; duplicates and out-of-range entries are rejected.
    pub fn from_pool(
        pool: &[DemonstrationExample],
        indices: &[usize],
        max_size: usize,
    ) -> Result<Self, DialogueError> {
        if indices.is_empty() {
            return Err(DialogueError::FewShot("selection is empty".into()));
        }
        if indices.len() > max_size {
            return Err(DialogueError::FewShot(format!(
                "selection of {} exceeds maximum {}",
                indices.len(),
                max_size
            )));
        }
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != indices.len() {
            return Err(DialogueError::FewShot("duplicate pool indices".into()));
        }
        if let Some(&bad) = sorted.iter().find(|&&i| i >= pool.len()) {
            return Err(DialogueError::FewShot(format!(
                "index {} out of range for pool of {}",
                bad,
                pool.len()
            )));
        }
        let examples = sorted.iter().map(|&i| pool[i].clone()).collect();
        Ok(FewShotSet { examples, pool_indices: sorted })
    }

    pub fn examples(&self) -> &[DemonstrationExample] {
        &self.examples
    }

    pub fn pool_indices(&self) -> &[usize] {
        &self.pool_indices
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}
