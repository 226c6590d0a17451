//! Per-label synthetic note generation with human verdicts in the loop.
//!
//! Each round draws raw notes from the pool, rewrites every one toward the
//! target label, and waits for a True/False verdict on each output. A round
//! whose accuracy reaches the threshold ends the loop; otherwise the
//! reviewers' feedback is folded into a revised prompt for the next round.
//! Verified notes accumulate across rounds.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{CompletionRequest, Gateway, GatewayError, Message};
use crate::ingest::{IngestError, NotePool, RawNote};
use crate::taxonomy::{LabelDefinition, SdohLabel, Taxonomy, TaxonomyError};

pub const AUGMENT_TEMPLATE: &str = "You are tasked with rewriting the raw notes to become related to some SDoH label.
Here is the raw note: {raw_notes}
And the specific label: {label}
The definition of the label: {definition}
Note:
1. Do NOT include the definitions or examples provided in your rewrited content.
2. Focus exclusively on the social history, disregarding sentences related to family history or other topics.
3. The augmented notes should clearly reflect the label context, be contextually coherent, with varied and diverse expressions.
4. The augmented note should be a detailed description of a specific patient case that illustrates the application of the SDoH label. Focus on the unique circumstances, events, and actions related to this individual case. Avoid using general or broad descriptions of processes or procedures; instead, provide concrete details and examples that are directly relevant to the patient's situation.
5. Your output should not exceed 100 words.
Augmented Notes:
";

pub const PLACEHOLDERS: [&str; 3] = ["raw_notes", "label", "definition"];

const DEFAULT_META_PROMPT: &str = include_str!("../config/meta_prompt.txt");

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("raw note is empty")]
    EmptyRawNote,
    #[error("no raw notes to augment")]
    NoRawNotes,
    #[error("unknown item `{0}`")]
    UnknownItem(String),
    #[error("item `{0}` already has a verdict")]
    AlreadyVerdicted(String),
    #[error("item `{0}` failed to generate and cannot be verdicted")]
    ItemFailed(String),
    #[error("a false verdict needs feedback (item `{0}`)")]
    MissingFeedback(String),
    #[error("{0} items still need a verdict")]
    IncompleteVerdicts(usize),
    #[error("batch has no verified items")]
    NothingVerified,
    #[error("revised prompt is missing placeholder {{{0}}}")]
    InvalidRevision(String),
    #[error("template is missing placeholder {{{0}}}")]
    InvalidTemplate(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("threshold not reached after {max_rounds} rounds")]
    ThresholdNotReached { max_rounds: usize },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Pool(#[from] IngestError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

/// Replaces `{name}` for each given name in a single pass, so text pulled
/// in from a substitution is never expanded again.
pub fn fill_template(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'scan: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        for (name, value) in values {
            let key = format!("{{{name}}}");
            if tail.starts_with(&key) {
                out.push_str(value);
                rest = &tail[key.len()..];
                continue 'scan;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

/// First placeholder missing from `template`, if any.
pub fn missing_placeholder(template: &str) -> Option<&'static str> {
    PLACEHOLDERS
        .into_iter()
        .find(|p| !template.contains(&format!("{{{p}}}")))
}

pub fn render_augment_prompt(
    template: &str,
    raw_note: &str,
    label: SdohLabel,
    definition: &LabelDefinition,
) -> Result<String, AugmentError> {
    if raw_note.trim().is_empty() {
        return Err(AugmentError::EmptyRawNote);
    }
    Ok(fill_template(
        template,
        &[
            ("raw_notes", raw_note),
            ("label", label.canonical_name()),
            ("definition", &definition.definition_text),
        ],
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmenterConfig {
    pub threshold: f64,
    pub max_rounds: usize,
    pub batch_size: usize,
    pub model_tag: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub meta_prompt: String,
}

impl Default for AugmenterConfig {
    fn default() -> Self {
        AugmenterConfig {
            threshold: 0.90,
            max_rounds: 3,
            batch_size: 20,
            model_tag: "gpt-4o".into(),
            temperature: 0.7,
            seed: Some(0),
            meta_prompt: DEFAULT_META_PROMPT.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchItem {
    pub item_id: String,
    pub source_raw_note_id: String,
    pub generated_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    /// Set when generation failed; such items take no verdict.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl BatchItem {
    pub fn is_failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn is_pending(&self) -> bool {
        !self.is_failed() && self.verdict.is_none()
    }

    pub fn passed(&self) -> bool {
        matches!(self.verdict, Some(Verdict { passed: true, .. }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationBatch {
    pub batch_id: String,
    pub label: SdohLabel,
    pub round_index: usize,
    pub items: Vec<BatchItem>,
}

impl AugmentationBatch {
    pub fn item(&self, item_id: &str) -> Option<&BatchItem> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    pub fn pending(&self) -> impl Iterator<Item = &BatchItem> {
        self.items.iter().filter(|i| i.is_pending())
    }

    pub fn verdicted_count(&self) -> usize {
        self.items.iter().filter(|i| i.verdict.is_some()).count()
    }

    pub fn passed_count(&self) -> usize {
        self.items.iter().filter(|i| i.passed()).count()
    }

    /// Items that can take a verdict.
    pub fn verifiable_count(&self) -> usize {
        self.items.iter().filter(|i| !i.is_failed()).count()
    }

    /// Passed over verdicted, ignoring pending items.
    pub fn running_accuracy(&self) -> f64 {
        match self.verdicted_count() {
            0 => 0.0,
            n => self.passed_count() as f64 / n as f64,
        }
    }
}

pub fn batch_id_for(label: SdohLabel, round_index: usize) -> String {
    format!("{}-r{round_index}", label.canonical_name())
}

pub fn record_verdict(
    batch: &mut AugmentationBatch,
    item_id: &str,
    passed: bool,
    feedback: Option<String>,
) -> Result<(), AugmentError> {
    let item = batch
        .items
        .iter_mut()
        .find(|i| i.item_id == item_id)
        .ok_or_else(|| AugmentError::UnknownItem(item_id.to_string()))?;
    if item.is_failed() {
        return Err(AugmentError::ItemFailed(item_id.to_string()));
    }
    if item.verdict.is_some() {
        return Err(AugmentError::AlreadyVerdicted(item_id.to_string()));
    }
    let feedback = feedback.filter(|f| !f.trim().is_empty());
    if !passed && feedback.is_none() {
        return Err(AugmentError::MissingFeedback(item_id.to_string()));
    }
    item.verdict = Some(Verdict { passed, feedback });
    Ok(())
}

pub fn batch_accuracy(batch: &AugmentationBatch) -> Result<f64, AugmentError> {
    let pending = batch.pending().count();
    if pending > 0 {
        return Err(AugmentError::IncompleteVerdicts(pending));
    }
    if batch.verdicted_count() == 0 {
        return Err(AugmentError::NothingVerified);
    }
    Ok(batch.running_accuracy())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackItem {
    pub item_id: String,
    pub generated_text: String,
    pub feedback: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub round_index: usize,
    pub batch_id: String,
    pub prompt: String,
    pub accuracy: f64,
    pub accepted_ids: Vec<String>,
    pub feedback: Vec<FeedbackItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptedNote {
    pub item_id: String,
    pub source_raw_note_id: String,
    pub text: String,
    pub label: SdohLabel,
    pub round_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmenterState {
    pub label: SdohLabel,
    pub current_prompt: String,
    pub round_index: usize,
    pub history: Vec<RoundOutcome>,
    pub accepted: Vec<AcceptedNote>,
    pub optimizations: usize,
}

impl AugmenterState {
    pub fn new(label: SdohLabel) -> Self {
        AugmenterState {
            label,
            current_prompt: AUGMENT_TEMPLATE.to_string(),
            round_index: 0,
            history: Vec::new(),
            accepted: Vec::new(),
            optimizations: 0,
        }
    }

    pub fn with_prompt(label: SdohLabel, prompt: impl Into<String>) -> Result<Self, AugmentError> {
        let prompt = prompt.into();
        if let Some(p) = missing_placeholder(&prompt) {
            return Err(AugmentError::InvalidTemplate(p.to_string()));
        }
        Ok(AugmenterState {
            current_prompt: prompt,
            ..Self::new(label)
        })
    }
}

fn generation_request(prompt: String, config: &AugmenterConfig) -> CompletionRequest {
    CompletionRequest::new(&config.model_tag, vec![Message::user(prompt)])
        .with_temperature(config.temperature)
        .with_seed(config.seed)
}

/// One generated note per raw note. Gateway failures and empty outputs mark
/// the item failed instead of aborting the batch.
pub fn generate_batch(
    state: &AugmenterState,
    raw_notes: &[RawNote],
    definition: &LabelDefinition,
    gateway: &Gateway,
    config: &AugmenterConfig,
) -> Result<AugmentationBatch, AugmentError> {
    if raw_notes.is_empty() {
        return Err(AugmentError::NoRawNotes);
    }
    let requests = raw_notes
        .iter()
        .map(|n| {
            render_augment_prompt(&state.current_prompt, n.augmentation_text(), state.label, definition)
                .map(|p| generation_request(p, config))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let batch_id = batch_id_for(state.label, state.round_index);
    let items = gateway
        .complete_all(&requests)
        .into_iter()
        .zip(raw_notes)
        .enumerate()
        .map(|(i, (result, note))| {
            let (generated_text, error) = match result {
                Ok(text) if !text.trim().is_empty() => (text.trim().to_string(), None),
                Ok(_) => (String::new(), Some("empty generation".to_string())),
                Err(e) => (String::new(), Some(e.to_string())),
            };
            BatchItem {
                item_id: format!("{batch_id}-{i:03}"),
                source_raw_note_id: note.id.clone(),
                generated_text,
                verdict: None,
                error,
            }
        })
        .collect();
    Ok(AugmentationBatch {
        batch_id,
        label: state.label,
        round_index: state.round_index,
        items,
    })
}

fn render_failures(feedback: &[FeedbackItem]) -> String {
    feedback
        .iter()
        .enumerate()
        .map(|(i, f)| format!("{}. Note: {}\n   Feedback: {}", i + 1, f.generated_text, f.feedback))
        .collect::<Vec<_>>()
        .join("\n")
}

fn strip_fences(text: &str) -> &str {
    let t = text.trim();
    let Some(inner) = t.strip_prefix("```") else { return t };
    let inner = inner.split_once('\n').map_or("", |(_, body)| body);
    inner.strip_suffix("```").unwrap_or(inner).trim()
}

/// Asks the model for a revised template from the latest round's feedback.
/// A revision that drops a placeholder gets one corrective retry.
pub fn optimize_prompt(
    state: &AugmenterState,
    gateway: &Gateway,
    config: &AugmenterConfig,
) -> Result<String, AugmentError> {
    let last = state
        .history
        .last()
        .ok_or_else(|| AugmentError::Precondition("no completed round".into()))?;
    if last.accuracy >= config.threshold {
        return Err(AugmentError::Precondition("latest round met the threshold".into()));
    }
    if last.feedback.is_empty() {
        return Err(AugmentError::Precondition("latest round has no feedback".into()));
    }
    let meta = fill_template(
        &config.meta_prompt,
        &[
            ("current_prompt", &state.current_prompt),
            ("failures", &render_failures(&last.feedback)),
        ],
    );
    let mut request = CompletionRequest::new(&config.model_tag, vec![Message::user(meta)])
        .with_temperature(0.0)
        .with_seed(config.seed);
    let mut missing = "";
    for attempt in 0..2 {
        let reply = gateway.complete(&request)?;
        let revised = strip_fences(&reply).to_string();
        match missing_placeholder(&revised) {
            None => return Ok(revised),
            Some(p) => {
                missing = p;
                if attempt == 0 {
                    request.messages.push(Message::assistant(reply));
                    request.messages.push(Message::user(format!(
                        "The revised template must contain each of {{raw_notes}}, {{label}} and {{definition}}; {{{p}}} is missing. Reply with the corrected template only."
                    )));
                }
            }
        }
    }
    Err(AugmentError::InvalidRevision(missing.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    /// A batch is out for review.
    Reviewing,
    /// A round met the threshold.
    Completed,
    /// Every allowed round fell short.
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvanceReport {
    pub round_index: usize,
    pub accuracy: f64,
    pub status: SessionStatus,
    /// Set when a new batch was generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_batch_id: Option<String>,
}

/// The loop for one label as an explicit state machine, so verdicts can
/// arrive from a scripted driver or the review API alike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSession {
    pub state: AugmenterState,
    pub definition: LabelDefinition,
    pub config: AugmenterConfig,
    pub status: SessionStatus,
    pub batch: AugmentationBatch,
    pub batches: Vec<AugmentationBatch>,
}

impl AugmentSession {
    /// The open batch or a closed one from an earlier round.
    pub fn batch_by_id(&self, batch_id: &str) -> Option<&AugmentationBatch> {
        if self.batch.batch_id == batch_id {
            return Some(&self.batch);
        }
        self.batches.iter().find(|b| b.batch_id == batch_id)
    }

    /// Draws the first batch of raw notes and generates round 0.
    pub fn start(
        state: AugmenterState,
        taxonomy: &Taxonomy,
        config: AugmenterConfig,
        pool: &mut NotePool,
        gateway: &Gateway,
    ) -> Result<Self, AugmentError> {
        if config.batch_size == 0 || config.max_rounds == 0 {
            return Err(AugmentError::Precondition("batch_size and max_rounds must be positive".into()));
        }
        if let Some(p) = missing_placeholder(&state.current_prompt) {
            return Err(AugmentError::InvalidTemplate(p.to_string()));
        }
        let definition = taxonomy.definition_of(state.label)?.clone();
        let batch = Self::draw_and_generate(&state, &definition, &config, pool, gateway)?;
        Ok(AugmentSession {
            state,
            definition,
            config,
            status: SessionStatus::Reviewing,
            batch,
            batches: Vec::new(),
        })
    }

    fn draw_and_generate(
        state: &AugmenterState,
        definition: &LabelDefinition,
        config: &AugmenterConfig,
        pool: &mut NotePool,
        gateway: &Gateway,
    ) -> Result<AugmentationBatch, AugmentError> {
        let notes = pool.draw(config.batch_size)?;
        match generate_batch(state, &notes, definition, gateway, config) {
            Ok(b) => Ok(b),
            Err(e) => {
                for n in &notes {
                    pool.return_note(&n.id)?;
                }
                Err(e)
            }
        }
    }

    pub fn record_verdict(
        &mut self,
        item_id: &str,
        passed: bool,
        feedback: Option<String>,
    ) -> Result<(), AugmentError> {
        if self.status != SessionStatus::Reviewing {
            return Err(AugmentError::Precondition("session is closed".into()));
        }
        record_verdict(&mut self.batch, item_id, passed, feedback)
    }

    /// Closes the current round. Raw notes behind rejected or failed items
    /// go back to the pool; accepted ones stay checked out for quality
    /// control. Then either finishes, gives up, or revises the prompt and
    /// opens the next round.
    pub fn advance(&mut self, pool: &mut NotePool, gateway: &Gateway) -> Result<AdvanceReport, AugmentError> {
        if self.status != SessionStatus::Reviewing {
            return Err(AugmentError::Precondition("session is closed".into()));
        }
        let accuracy = batch_accuracy(&self.batch)?;
        let mut accepted_ids = Vec::new();
        let mut feedback = Vec::new();
        for item in &self.batch.items {
            match &item.verdict {
                Some(Verdict { passed: true, .. }) => {
                    accepted_ids.push(item.item_id.clone());
                    self.state.accepted.push(AcceptedNote {
                        item_id: item.item_id.clone(),
                        source_raw_note_id: item.source_raw_note_id.clone(),
                        text: item.generated_text.clone(),
                        label: self.state.label,
                        round_index: self.state.round_index,
                    });
                }
                Some(Verdict { passed: false, feedback: f }) => {
                    feedback.push(FeedbackItem {
                        item_id: item.item_id.clone(),
                        generated_text: item.generated_text.clone(),
                        feedback: f.clone().unwrap_or_default(),
                    });
                    pool.return_note(&item.source_raw_note_id)?;
                }
                None => pool.return_note(&item.source_raw_note_id)?,
            }
        }
        let round_index = self.state.round_index;
        self.state.history.push(RoundOutcome {
            round_index,
            batch_id: self.batch.batch_id.clone(),
            prompt: self.state.current_prompt.clone(),
            accuracy,
            accepted_ids,
            feedback,
        });
        self.state.round_index += 1;
        self.batches.push(self.batch.clone());

        let mut report = AdvanceReport {
            round_index,
            accuracy,
            status: SessionStatus::Reviewing,
            next_batch_id: None,
        };
        if accuracy >= self.config.threshold {
            self.status = SessionStatus::Completed;
        } else if self.state.round_index >= self.config.max_rounds {
            self.status = SessionStatus::Exhausted;
        } else {
            let revised = optimize_prompt(&self.state, gateway, &self.config)?;
            self.state.current_prompt = revised;
            self.state.optimizations += 1;
            self.batch = Self::draw_and_generate(&self.state, &self.definition, &self.config, pool, gateway)?;
            report.next_batch_id = Some(self.batch.batch_id.clone());
        }
        report.status = self.status;
        Ok(report)
    }
}

/// Source of verdicts for a batch: `(item_id, passed, feedback)`.
pub trait Verifier {
    fn verify(&mut self, batch: &AugmentationBatch) -> Vec<(String, bool, Option<String>)>;
}

impl<F> Verifier for F
where
    F: FnMut(&AugmentationBatch) -> Vec<(String, bool, Option<String>)>,
{
    fn verify(&mut self, batch: &AugmentationBatch) -> Vec<(String, bool, Option<String>)> {
        self(batch)
    }
}

/// Passes the first `ceil(fraction * n)` verifiable items of round `r`
/// using `fractions[r]`, failing the rest with fixed feedback.
pub struct ScriptedVerifier {
    pub fractions: Vec<f64>,
}

impl Verifier for ScriptedVerifier {
    fn verify(&mut self, batch: &AugmentationBatch) -> Vec<(String, bool, Option<String>)> {
        let fraction = self.fractions.get(batch.round_index).copied().unwrap_or(0.0);
        let verifiable: Vec<&BatchItem> = batch.items.iter().filter(|i| !i.is_failed()).collect();
        let n_pass = (fraction * verifiable.len() as f64 - 1e-9).ceil().max(0.0) as usize;
        verifiable
            .iter()
            .enumerate()
            .map(|(i, item)| {
                let passed = i < n_pass;
                let feedback = (!passed).then(|| "does not reflect the target label".to_string());
                (item.item_id.clone(), passed, feedback)
            })
            .collect()
    }
}

#[derive(Debug)]
pub struct LoopResult {
    pub session: AugmentSession,
    pub outcome: Result<(), AugmentError>,
}

impl LoopResult {
    pub fn rounds_run(&self) -> usize {
        self.session.state.history.len()
    }
}

/// Runs the loop to completion with verdicts from `verifier`. The session
/// is returned even when the threshold is never reached, so accepted notes
/// and history survive; `outcome` carries `ThresholdNotReached` then.
pub fn run_until_threshold(
    state: AugmenterState,
    taxonomy: &Taxonomy,
    config: AugmenterConfig,
    pool: &mut NotePool,
    gateway: &Gateway,
    verifier: &mut dyn Verifier,
) -> Result<LoopResult, AugmentError> {
    let max_rounds = config.max_rounds;
    let mut session = AugmentSession::start(state, taxonomy, config, pool, gateway)?;
    let mut previous: BTreeSet<String> = BTreeSet::new();
    loop {
        for (item_id, passed, feedback) in verifier.verify(&session.batch) {
            session.record_verdict(&item_id, passed, feedback)?;
        }
        session.advance(pool, gateway)?;
        let now: BTreeSet<String> = session.state.accepted.iter().map(|a| a.item_id.clone()).collect();
        debug_assert!(previous.is_subset(&now), "accepted set shrank");
        previous = now;
        match session.status {
            SessionStatus::Reviewing => continue,
            SessionStatus::Completed => {
                return Ok(LoopResult {
                    session,
                    outcome: Ok(()),
                })
            }
            SessionStatus::Exhausted => {
                return Ok(LoopResult {
                    session,
                    outcome: Err(AugmentError::ThresholdNotReached { max_rounds }),
                })
            }
        }
    }
}
