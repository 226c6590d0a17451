//! Cascaded annotation: a binary eviction-relevance step routes each note to
//! exactly one of the eviction or non-eviction classifiers. Every step
//! returns a label plus its chain-of-thought rationale.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, Message};
use crate::program::{AnnotationLabel, PromptProgram, Step};
use crate::taxonomy::SdohLabel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnotateError {
    #[error("no legal label in model output after reprompt")]
    UnparseableOutput { raw_outputs: Vec<String> },
    #[error("program answers {actual:?}, step needs {expected:?}")]
    ProgramMismatch { expected: Step, actual: Step },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("no legal label in output")]
pub struct Unparseable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationResult {
    pub step: Step,
    pub label: AnnotationLabel,
    pub rationale: String,
    pub raw_output: String,
    pub run_index: usize,
}

fn label_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?im)^[ \t*#]*(?:label|answer|annotation)[ \t*]*:(.*)$").unwrap())
}

fn reasoning_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?ims)^[ \t*#]*(?:reasoning|rationale)[ \t*]*:(.*?)(?:^[ \t*#]*(?:label|answer|annotation)[ \t*]*:|\z)")
            .unwrap()
    })
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Start offset and token of the last legal token in `text`, matched on
/// identifier boundaries.
fn last_legal_token<'t>(text: &str, legal: &[&'t str]) -> Option<(usize, &'t str)> {
    let bytes = text.as_bytes();
    let mut best: Option<(usize, &str)> = None;
    for &token in legal {
        for (start, _) in text.match_indices(token) {
            let end = start + token.len();
            let left_ok = start == 0 || !is_word_byte(bytes[start - 1]);
            let right_ok = end == bytes.len() || !is_word_byte(bytes[end]);
            if left_ok && right_ok && best.is_none_or(|(s, _)| start >= s) {
                best = Some((start, token));
            }
        }
    }
    best
}

/// Extracts `(label, rationale)` from model output.
///
/// A `Label:` line wins when it names a legal token; otherwise the last legal
/// token anywhere in the text is taken. The rationale is the `Reasoning:`
/// field when present and non-empty, else the whole output verbatim.
pub fn parse_annotation_output<'t>(
    raw: &str,
    legal_labels: &[&'t str],
) -> Result<(&'t str, String), Unparseable> {
    let structured = label_line_re()
        .captures_iter(raw)
        .filter_map(|c| last_legal_token(c.get(1)?.as_str(), legal_labels))
        .last()
        .map(|(_, t)| t);
    let label = match structured {
        Some(t) => t,
        None => last_legal_token(raw, legal_labels).ok_or(Unparseable)?.1,
    };
    let rationale = reasoning_re()
        .captures(raw)
        .and_then(|c| c.get(1))
        .map(|m| m.as_str().trim())
        .filter(|r| !r.is_empty())
        .map(str::to_string)
        .unwrap_or_else(|| raw.to_string());
    Ok((label, rationale))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotateSettings {
    pub model_tag: String,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub run_index: usize,
}

impl Default for AnnotateSettings {
    fn default() -> Self {
        AnnotateSettings {
            model_tag: "gpt-4o-mini".into(),
            temperature: 0.0,
            seed: None,
            run_index: 0,
        }
    }
}

fn reprompt_text(step: Step) -> String {
    format!(
        "Your previous answer did not name a valid label. Answer again with a line \
         `Reasoning: ...` followed by a line `Label: <label>`, where <label> is exactly one of: {}",
        step.legal_tokens().join(", ")
    )
}

/// Runs a step program on a note, reprompting once on unparseable output.
pub fn annotate_step(
    note: &str,
    program: &PromptProgram,
    expected: Step,
    gateway: &Gateway,
    settings: &AnnotateSettings,
) -> Result<AnnotationResult, AnnotateError> {
    if program.step() != expected {
        return Err(AnnotateError::ProgramMismatch {
            expected,
            actual: program.step(),
        });
    }
    let legal = expected.legal_tokens();
    let request = program
        .request(note, &settings.model_tag)
        .with_temperature(settings.temperature)
        .with_seed(settings.seed);
    let first = gateway.complete(&request)?;
    let (raw, parsed) = match parse_annotation_output(&first, &legal) {
        Ok(p) => (first, p),
        Err(Unparseable) => {
            let mut retry = request.clone();
            retry.messages.push(Message::assistant(first.clone()));
            retry.messages.push(Message::user(reprompt_text(expected)));
            let second = gateway.complete(&retry)?;
            match parse_annotation_output(&second, &legal) {
                Ok(p) => (second, p),
                Err(Unparseable) => {
                    return Err(AnnotateError::UnparseableOutput {
                        raw_outputs: vec![first, second],
                    })
                }
            }
        }
    };
    let (token, rationale) = parsed;
    let label = expected.parse(token).expect("token drawn from the legal set");
    Ok(AnnotationResult {
        step: expected,
        label,
        rationale,
        raw_output: raw,
        run_index: settings.run_index,
    })
}

pub fn annotate_binary(
    note: &str,
    program: &PromptProgram,
    gateway: &Gateway,
    settings: &AnnotateSettings,
) -> Result<AnnotationResult, AnnotateError> {
    annotate_step(note, program, Step::Binary, gateway, settings)
}

pub fn annotate_eviction(
    note: &str,
    program: &PromptProgram,
    gateway: &Gateway,
    settings: &AnnotateSettings,
) -> Result<AnnotationResult, AnnotateError> {
    annotate_step(note, program, Step::Eviction, gateway, settings)
}

pub fn annotate_non_eviction(
    note: &str,
    program: &PromptProgram,
    gateway: &Gateway,
    settings: &AnnotateSettings,
) -> Result<AnnotationResult, AnnotateError> {
    annotate_step(note, program, Step::NonEviction, gateway, settings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadePrograms {
    pub binary: PromptProgram,
    pub eviction: PromptProgram,
    pub non_eviction: PromptProgram,
}

impl CascadePrograms {
    pub fn defaults(taxonomy: &crate::taxonomy::Taxonomy) -> Self {
        CascadePrograms {
            binary: PromptProgram::default_for(Step::Binary, taxonomy),
            eviction: PromptProgram::default_for(Step::Eviction, taxonomy),
            non_eviction: PromptProgram::default_for(Step::NonEviction, taxonomy),
        }
    }

    pub fn for_step(&self, step: Step) -> &PromptProgram {
        match step {
            Step::Binary => &self.binary,
            Step::Eviction => &self.eviction,
            Step::NonEviction => &self.non_eviction,
        }
    }

    pub fn version_tag(&self) -> String {
        format!(
            "b{}.e{}.n{}",
            self.binary.version, self.eviction.version, self.non_eviction.version
        )
    }
}

/// Step 1 plus whichever second step it routed to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeTrace {
    pub note_id: String,
    pub step1: Option<AnnotationResult>,
    pub second: Option<AnnotationResult>,
    pub final_label: Option<SdohLabel>,
}

impl CascadeTrace {
    pub fn step2(&self) -> Option<&AnnotationResult> {
        self.second.as_ref().filter(|r| r.step == Step::Eviction)
    }

    pub fn step3(&self) -> Option<&AnnotationResult> {
        self.second.as_ref().filter(|r| r.step == Step::NonEviction)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("cascade failed for note `{}`: {source}", trace.note_id)]
pub struct CascadeError {
    pub trace: Box<CascadeTrace>,
    #[source]
    pub source: AnnotateError,
}

pub fn annotate_cascade(
    note_id: &str,
    note: &str,
    programs: &CascadePrograms,
    gateway: &Gateway,
    settings: &AnnotateSettings,
) -> Result<CascadeTrace, CascadeError> {
    let mut trace = CascadeTrace {
        note_id: note_id.to_string(),
        step1: None,
        second: None,
        final_label: None,
    };
    let step1 = match annotate_binary(note, &programs.binary, gateway, settings) {
        Ok(r) => r,
        Err(source) => {
            return Err(CascadeError {
                trace: Box::new(trace),
                source,
            })
        }
    };
    let route = if step1.label == AnnotationLabel::Yes {
        Step::Eviction
    } else {
        Step::NonEviction
    };
    trace.step1 = Some(step1);
    match annotate_step(note, programs.for_step(route), route, gateway, settings) {
        Ok(second) => {
            trace.final_label = second.label.sdoh();
            trace.second = Some(second);
            Ok(trace)
        }
        Err(source) => Err(CascadeError {
            trace: Box::new(trace),
            source,
        }),
    }
}

/// Flat persisted form of a cascade trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub note_id: String,
    pub step1_label: Option<AnnotationLabel>,
    pub step1_rationale: Option<String>,
    pub final_label: Option<SdohLabel>,
    pub final_rationale: Option<String>,
    pub run_index: usize,
    pub program_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TraceRecord {
    pub fn from_trace(trace: &CascadeTrace, run_index: usize, programs: &CascadePrograms) -> Self {
        TraceRecord {
            note_id: trace.note_id.clone(),
            step1_label: trace.step1.as_ref().map(|r| r.label),
            step1_rationale: trace.step1.as_ref().map(|r| r.rationale.clone()),
            final_label: trace.final_label,
            final_rationale: trace.second.as_ref().map(|r| r.rationale.clone()),
            run_index,
            program_version: programs.version_tag(),
            error: None,
        }
    }

    pub fn from_result(
        result: &Result<CascadeTrace, CascadeError>,
        run_index: usize,
        programs: &CascadePrograms,
    ) -> Self {
        match result {
            Ok(t) => Self::from_trace(t, run_index, programs),
            Err(e) => TraceRecord {
                error: Some(e.source.to_string()),
                ..Self::from_trace(&e.trace, run_index, programs)
            },
        }
    }
}
