//! Prompt programs: an instruction, ordered demonstrations and an output
//! signature for one cascade step. This is the unit the optimizer searches
//! over and the annotator executes.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{CompletionRequest, Message};
use crate::taxonomy::{parse_label, SdohLabel, Taxonomy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProgramError {
    #[error("label `{label}` is not legal for step {step:?}")]
    IllegalLabel { label: String, step: Step },
    #[error("program has {count} demos, limit is {max}")]
    TooManyDemos { count: usize, max: usize },
    #[error("program file: {0}")]
    Io(String),
    #[error("program file: {0}")]
    Parse(String),
}

/// Cascade step a program answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Binary,
    Eviction,
    NonEviction,
}

impl std::str::FromStr for Step {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "binary" => Ok(Step::Binary),
            "eviction" => Ok(Step::Eviction),
            "non_eviction" | "non-eviction" => Ok(Step::NonEviction),
            _ => Err(format!("unknown step `{s}` (binary | eviction | non_eviction)")),
        }
    }
}

impl Step {
    /// Tokens the step may emit, in prompt order.
    pub fn legal_tokens(self) -> Vec<&'static str> {
        match self {
            Step::Binary => vec!["Yes", "No"],
            Step::Eviction => SdohLabel::EVICTION
                .iter()
                .chain([SdohLabel::Other].iter())
                .map(|l| l.canonical_name())
                .collect(),
            Step::NonEviction => SdohLabel::NON_EVICTION
                .iter()
                .chain([SdohLabel::Other].iter())
                .map(|l| l.canonical_name())
                .collect(),
        }
    }

    pub fn parse(self, token: &str) -> Option<AnnotationLabel> {
        let label = AnnotationLabel::parse(token)?;
        self.accepts(label).then_some(label)
    }

    pub fn accepts(self, label: AnnotationLabel) -> bool {
        match (self, label) {
            (Step::Binary, AnnotationLabel::Yes | AnnotationLabel::No) => true,
            (Step::Eviction, AnnotationLabel::Sdoh(l)) => l.is_eviction_related() || l.is_sentinel(),
            (Step::NonEviction, AnnotationLabel::Sdoh(l)) => {
                (!l.is_eviction_related()) || l.is_sentinel()
            }
            _ => false,
        }
    }

    /// Second step that owns a gold class.
    pub fn for_label(label: SdohLabel) -> Step {
        if label.is_eviction_related() {
            Step::Eviction
        } else {
            Step::NonEviction
        }
    }
}

/// What an annotator step emits: a binary answer or an SDoH token
/// (including `Other`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnnotationLabel {
    Yes,
    No,
    Sdoh(SdohLabel),
}

impl AnnotationLabel {
    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "Yes" => Some(AnnotationLabel::Yes),
            "No" => Some(AnnotationLabel::No),
            other => parse_label(other).ok().map(AnnotationLabel::Sdoh),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            AnnotationLabel::Yes => "Yes",
            AnnotationLabel::No => "No",
            AnnotationLabel::Sdoh(l) => l.canonical_name(),
        }
    }

    pub fn sdoh(&self) -> Option<SdohLabel> {
        match self {
            AnnotationLabel::Sdoh(l) => Some(*l),
            _ => None,
        }
    }
}

impl fmt::Display for AnnotationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for AnnotationLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for AnnotationLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        AnnotationLabel::parse(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown label token `{s}`")))
    }
}

/// A worked (note, rationale, label) example embedded in the prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Demo {
    pub note: String,
    #[serde(default)]
    pub rationale: Option<String>,
    pub label: AnnotationLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    pub step: Step,
    pub input_field: String,
    pub output_field: String,
}

impl Signature {
    pub fn for_step(step: Step) -> Self {
        Signature {
            step,
            input_field: "Patient Social History Note".into(),
            output_field: "SDoH Annotation".into(),
        }
    }
}

pub const DEFAULT_MAX_DEMOS: usize = 8;

/// Prefix of the chain-of-thought reasoning field.
pub const REASONING_PREFIX: &str = "Let's think step by step in order to";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptProgram {
    pub instruction: String,
    pub demos: Vec<Demo>,
    pub signature: Signature,
    pub version: u64,
    #[serde(default = "default_max_demos")]
    pub max_demos: usize,
}

fn default_max_demos() -> usize {
    DEFAULT_MAX_DEMOS
}

const BINARY_INSTRUCTION: &str = "Go through each sentence of the patient note. If a sentence reflects eviction-related social determinants of health (SDoH), assign the label \"Yes\", else annotate as label \"No\"";

const EVICTION_INSTRUCTION: &str = "Go through each sentence of the patient note. If a sentence reflects eviction-related social determinants of health (SDoH), assign the most appropriate label from the following list: \"t3_Eviction_absent\", \"t3_Eviction_present_history\", \"t3_Eviction_present_current\", \"t3_Eviction_pending\", \"t3_Eviction_hypothetical\", \"t3_Eviction_mr_history\", \"t3_Eviction_mr_current\", \"Other\". For status part, if no eviction in the history and in the future: \"absent\"; if eviction is completed: \"present\"; if eviction noticed but not completed: \"pending\"; if eviction might be happend in the future: \"hypothetical\"; if mutual rescission: \"mr\". For timeframe part when \"present\" or \"mr\" status, if it is happened within this natural year: \"current\". If not shown specific time or noticed a time before this natural year: \"history\".";

impl PromptProgram {
    pub fn new(instruction: impl Into<String>, step: Step) -> Self {
        PromptProgram {
            instruction: instruction.into(),
            demos: Vec::new(),
            signature: Signature::for_step(step),
            version: 1,
            max_demos: DEFAULT_MAX_DEMOS,
        }
    }

    pub fn step(&self) -> Step {
        self.signature.step
    }

    /// Zero-demo chain-of-thought program for a step.
    pub fn default_for(step: Step, taxonomy: &Taxonomy) -> Self {
        let instruction = match step {
            Step::Binary => BINARY_INSTRUCTION.to_string(),
            Step::Eviction => EVICTION_INSTRUCTION.to_string(),
            Step::NonEviction => {
                let tokens = Step::NonEviction
                    .legal_tokens()
                    .iter()
                    .map(|t| format!("\"{t}\""))
                    .collect::<Vec<_>>()
                    .join(", ");
                let mut text = format!("Choose the most appropriate label from {tokens}.");
                for label in SdohLabel::NON_EVICTION {
                    if let Ok(def) = taxonomy.definition_of(label) {
                        text.push_str(&format!("\n'{label}': {}", def.definition_text));
                    }
                }
                text
            }
        };
        PromptProgram::new(instruction, step)
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        if self.demos.len() > self.max_demos {
            return Err(ProgramError::TooManyDemos {
                count: self.demos.len(),
                max: self.max_demos,
            });
        }
        for demo in &self.demos {
            if !self.step().accepts(demo.label) {
                return Err(ProgramError::IllegalLabel {
                    label: demo.label.to_string(),
                    step: self.step(),
                });
            }
        }
        Ok(())
    }

    /// Same instruction and signature with a new demo list and bumped version.
    pub fn with_demos(&self, demos: Vec<Demo>) -> Self {
        PromptProgram {
            demos,
            version: self.version + 1,
            ..self.clone()
        }
    }

    fn system_message(&self) -> String {
        let tokens = self.step().legal_tokens().join(", ");
        format!(
            "{instruction}\n\n---\n\nFollow the following format.\n\n\
             Note: {input}\n\
             Reasoning: {REASONING_PREFIX} ${{produce the answer}}. We ...\n\
             Label: {output}, exactly one of: {tokens}",
            instruction = self.instruction,
            input = self.signature.input_field,
            output = self.signature.output_field,
        )
    }

    fn demo_answer(demo: &Demo) -> String {
        match &demo.rationale {
            Some(r) => format!("Reasoning: {r}\nLabel: {}", demo.label),
            None => format!("Label: {}", demo.label),
        }
    }

    /// Chat messages for one note: system format block, demos as
    /// user/assistant turns, then the note.
    pub fn messages(&self, note: &str) -> Vec<Message> {
        let mut messages = vec![Message::system(self.system_message())];
        for demo in &self.demos {
            messages.push(Message::user(format!("Note: {}", demo.note)));
            messages.push(Message::assistant(Self::demo_answer(demo)));
        }
        messages.push(Message::user(format!("Note: {note}")));
        messages
    }

    pub fn request(&self, note: &str, model_tag: &str) -> CompletionRequest {
        CompletionRequest::new(model_tag, self.messages(note))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProgramError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| ProgramError::Io(format!("{}: {e}", path.as_ref().display())))?;
        let file: ProgramFile =
            serde_json::from_str(&text).map_err(|e| ProgramError::Parse(e.to_string()))?;
        file.program.validate()?;
        Ok(file.program)
    }
}

/// On-disk form of an optimized program: the program plus how it was found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramFile {
    pub format_version: u32,
    pub program: PromptProgram,
    #[serde(default)]
    pub optimizer: Option<serde_json::Value>,
}

impl ProgramFile {
    pub const FORMAT_VERSION: u32 = 1;

    pub fn new(program: PromptProgram, optimizer: Option<serde_json::Value>) -> Self {
        ProgramFile {
            format_version: Self::FORMAT_VERSION,
            program,
            optimizer,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ProgramError> {
        let text =
            serde_json::to_string_pretty(self).map_err(|e| ProgramError::Parse(e.to_string()))?;
        std::fs::write(path.as_ref(), text + "\n")
            .map_err(|e| ProgramError::Io(format!("{}: {e}", path.as_ref().display())))
    }
}
