//! Demonstration prompt construction and sequential chain solving.
//!
//! A step prompt is assembled as: few-shot examples, the dialogue history,
//! every already-answered sub-question/answer pair, the next sub-question,
//! and optionally a gold-response hint. Because each step appends its
//! answer and asks the next question, the prompt of step j (up to its
//! question) is a literal prefix of the prompt of step j + 1; solving a
//! chain is then one generation call per step, feeding answers forward.

use crate::backend::{BackendError, DecodingParams, TextGenerator};
use crate::dialogue::{
    render_history, FewShotSet, GenerationInstance, ReasoningStep, ReasoningTrace,
    SubQuestionChain,
};
use std::fmt::Write as _;
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("history text must not be empty")]
    EmptyHistory,
    #[error("next question must not be empty")]
    EmptyQuestion,
    #[error("completion trims to empty")]
    EmptyCompletion,
    #[error("text after the answer delimiter is empty")]
    EmptyAnswer,
}

/// Why a chain step failed.
#[derive(Debug, Error)]
pub enum StepFailure {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Parse(#[from] PromptError),
}

#[derive(Debug, Error)]
pub enum ChainError {
    #[error(transparent)]
    Dialogue(#[from] crate::dialogue::DialogueError),
    #[error("chain failed at step {step}: {source}")]
    Step {
        /// 1-based step number, matching the S_j labels.
        step: usize,
        /// Steps completed before the failure, for diagnostics.
        partial: Vec<ReasoningStep>,
        #[source]
        source: StepFailure,
    },
}

/// The fixed label strings a prompt is rendered with. Kept as data so a
/// deployment can swap in locale variants without code changes.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PromptTemplate {
    pub examples_label: String,
    pub history_label: String,
    pub subquestion_label: String,
    pub answer_label: String,
    pub rationale_label: String,
    pub response_label: String,
    pub hint_label: String,
    /// Delimiter that separates rationale from answer in completions.
    pub answer_delimiter: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            examples_label: "Examples:".into(),
            history_label: "Dialogue History H:".into(),
            subquestion_label: "Sub-question S".into(),
            answer_label: "Answer A".into(),
            rationale_label: "Rationale: ".into(),
            response_label: "Response: ".into(),
            hint_label: "Gold Response: ".into(),
            answer_delimiter: "Answer:".into(),
        }
    }
}

/// Byte ranges of the logical sections inside a rendered prompt, in
/// document order. `answered` is empty (zero-length) at step one and
/// `hint` is present only in rationalization mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectionSpans {
    pub examples: Range<usize>,
    pub history: Range<usize>,
    pub answered: Range<usize>,
    pub next_question: Range<usize>,
    pub hint: Option<Range<usize>>,
}

impl SectionSpans {
    /// Check ordering, bounds, and non-overlap against the rendered text.
    pub fn validate(&self, text: &str) -> Result<(), String> {
        let mut spans: Vec<(&str, &Range<usize>)> = vec![
            ("examples", &self.examples),
            ("history", &self.history),
            ("answered", &self.answered),
            ("next_question", &self.next_question),
        ];
        if let Some(hint) = &self.hint {
            spans.push(("hint", hint));
        }
        let mut previous_end = 0usize;
        for (name, span) in spans {
            if span.start > span.end {
                return Err(format!("{name} span is inverted"));
            }
            if span.start < previous_end {
                return Err(format!("{name} span overlaps the previous section"));
            }
            if span.end > text.len() {
                return Err(format!("{name} span exceeds text length"));
            }
            if !text.is_char_boundary(span.start) || !text.is_char_boundary(span.end) {
                return Err(format!("{name} span splits a character"));
            }
            previous_end = span.end;
        }
        Ok(())
    }
}

/// A rendered prompt plus the location of each section in it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptText {
    pub text: String,
    pub spans: SectionSpans,
}

/// Render the prompt for one chain step.
///
/// `answered` holds the (question, answer) pairs of every step already
/// solved, in chain order; `hint` appends the gold response as a final
/// section for rationalization. The render is deterministic: identical
/// inputs give identical bytes.
pub fn build_step_prompt(
    template: &PromptTemplate,
    fewshot: &FewShotSet,
    history_text: &str,
    answered: &[(String, String)],
    next_question: &str,
    hint: Option<&str>,
) -> Result<PromptText, PromptError> {
    if history_text.trim().is_empty() {
        return Err(PromptError::EmptyHistory);
    }
    if next_question.trim().is_empty() {
        return Err(PromptError::EmptyQuestion);
    }

    let mut text = String::new();
    text.push_str(&template.examples_label);
    for example in fewshot.examples() {
        text.push('\n');
        text.push_str(&template.history_label);
        text.push('\n');
        text.push_str(&example.history_text);
        text.push('\n');
        text.push_str(&template.rationale_label);
        text.push_str(&example.rationale_text);
        text.push('\n');
        text.push_str(&template.response_label);
        text.push_str(&example.response_text);
        if !std::ptr::eq(example, fewshot.examples().last().expect("non-empty set")) {
            text.push('\n');
        }
    }
    let examples = 0..text.len();

    text.push('\n');
    let history_start = text.len();
    text.push_str(&template.history_label);
    text.push('\n');
    text.push_str(history_text);
    let history = history_start..text.len();

    text.push('\n');
    let answered_start = text.len();
    for (i, (question, answer)) in answered.iter().enumerate() {
        write!(text, "{}{}: {}\n", template.subquestion_label, i + 1, question)
            .expect("write to string");
        write!(text, "{}{}: {}\n", template.answer_label, i + 1, answer)
            .expect("write to string");
    }
    let answered_span = answered_start..text.len();

    let question_start = text.len();
    write!(text, "{}{}: {}", template.subquestion_label, answered.len() + 1, next_question)
        .expect("write to string");
    let next_question_span = question_start..text.len();

    let hint_span = match hint {
        Some(gold) => {
            text.push('\n');
            let start = text.len();
            text.push_str(&template.hint_label);
            text.push_str(gold);
            Some(start..text.len())
        }
        None => None,
    };

    let spans = SectionSpans {
        examples,
        history,
        answered: answered_span,
        next_question: next_question_span,
        hint: hint_span,
    };
    debug_assert!(spans.validate(&text).is_ok());
    Ok(PromptText { text, spans })
}

/// Split a completion into (rationale, answer).
///
/// The text after the last occurrence of the delimiter is the answer and
/// everything before it the rationale; without a delimiter the whole
/// trimmed completion is the answer. A completion that trims to nothing,
/// or a delimiter followed by nothing, is an error.
pub fn extract_answer(
    completion: &str,
    delimiter: &str,
) -> Result<(String, String), PromptError> {
    let trimmed = completion.trim();
    if trimmed.is_empty() {
        return Err(PromptError::EmptyCompletion);
    }
    match trimmed.rfind(delimiter) {
        Some(pos) => {
            let rationale = trimmed[..pos].trim().to_string();
            let answer = trimmed[pos + delimiter.len()..].trim().to_string();
            if answer.is_empty() {
                return Err(PromptError::EmptyAnswer);
            }
            Ok((rationale, answer))
        }
        None => Ok((String::new(), trimmed.to_string())),
    }
}

/// Everything fixed across the steps of one chain solve: the backend and
/// model to call, the labels, and the history rendering budget.
pub struct ChainSolver<'a> {
    pub generator: &'a dyn TextGenerator,
    pub model: &'a str,
    pub template: &'a PromptTemplate,
    pub history_budget: Option<usize>,
}

impl ChainSolver<'_> {
    /// Solve every sub-question in order, one generation call per step.
    ///
    /// Step j's prompt carries the answers of steps 1..j. With `hint`,
    /// the gold response rides along in every step's prompt
    /// (rationalization mode). A failure at any step aborts and reports
    /// the steps already solved.
    pub fn solve(
        &self,
        fewshot: &FewShotSet,
        instance: &GenerationInstance,
        chain: &SubQuestionChain,
        params: &DecodingParams,
        hint: Option<&str>,
    ) -> Result<ReasoningTrace, ChainError> {
        let history_text = render_history(&instance.history, self.history_budget)?;
        let mut steps: Vec<ReasoningStep> = Vec::with_capacity(chain.len());
        let mut answered: Vec<(String, String)> = Vec::with_capacity(chain.len());
        for (index, question) in chain.steps().iter().enumerate() {
            let step_no = index + 1;
            let fail = |partial: &[ReasoningStep], source: StepFailure| ChainError::Step {
                step: step_no,
                partial: partial.to_vec(),
                source,
            };
            let prompt = build_step_prompt(
                self.template,
                fewshot,
                &history_text,
                &answered,
                question,
                hint,
            )
            .map_err(|e| fail(&steps, e.into()))?;
            let completion = self
                .generator
                .generate(self.model, &prompt.text, params)
                .map_err(|e| fail(&steps, e.into()))?;
            let (rationale, answer) = extract_answer(&completion, &self.template.answer_delimiter)
                .map_err(|e| fail(&steps, e.into()))?;
            steps.push(ReasoningStep { question: question.clone(), rationale, answer: answer.clone() });
            answered.push((question.clone(), answer));
        }
        Ok(ReasoningTrace {
            session_id: instance.session_id.clone(),
            turn_index: instance.turn_index,
            steps,
        })
    }
}
