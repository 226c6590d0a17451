//! Raw-note ingestion: social-history extraction, keyword screening, and the
//! raw-note pool that augmentation draws from and quality control returns to.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ndjson;
use crate::taxonomy::{parse_label, SdohLabel, TaxonomyError};

const DEFAULT_KEYWORDS: &str = include_str!("../config/keywords.toml");

/// Phrases this short only match on word boundaries.
const SHORT_PHRASE_CHARS: usize = 5;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("pool has {available} available notes, {requested} requested")]
    PoolExhausted { requested: usize, available: usize },
    #[error("note `{id}` is {actual:?}, expected {expected:?}")]
    InvalidState {
        id: String,
        expected: NoteState,
        actual: NoteState,
    },
    #[error("unknown note `{0}`")]
    UnknownNote(String),
    #[error("duplicate note id `{0}`")]
    DuplicateId(String),
    #[error("keyword table: {0}")]
    KeywordTable(String),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Records(#[from] ndjson::NdjsonError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoteSource {
    MimicLike,
    PmcLike,
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoteState {
    #[default]
    Available,
    InUse,
    Consumed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawNote {
    pub id: String,
    pub full_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub social_history: Option<String>,
    pub source: NoteSource,
    #[serde(default)]
    pub state: NoteState,
}

impl RawNote {
    /// Builds a note and extracts its social-history section.
    pub fn new(id: impl Into<String>, full_text: impl Into<String>, source: NoteSource) -> Self {
        let full_text = full_text.into();
        let social_history = extract_social_history(&full_text).map(str::to_string);
        RawNote {
            id: id.into(),
            full_text,
            social_history,
            source,
            state: NoteState::Available,
        }
    }

    /// The text handed to the augmenter: the social-history section when one
    /// was found, otherwise the whole note.
    pub fn augmentation_text(&self) -> &str {
        match &self.social_history {
            Some(s) if !s.trim().is_empty() => s,
            _ => &self.full_text,
        }
    }
}

/// Input line shape for raw-note files.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct RawNoteInput {
    pub id: String,
    pub text: String,
    pub source: NoteSource,
}

fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?im)^[ \t]*social[ \t]+history[ \t]*(?::|$)").unwrap())
}

fn section_header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[A-Z][A-Za-z ]{2,40}:").unwrap())
}

/// Returns the body of the first "Social History" section, trimmed.
///
/// The section runs until the next line that looks like a header
/// (`Capitalized words:`) or two consecutive blank lines. The result is
/// always a slice of `full_text`.
pub fn extract_social_history(full_text: &str) -> Option<&str> {
    let header = header_re().find(full_text)?;
    let body_start = header.end();
    let body = &full_text[body_start..];

    let mut end = body.len();
    let mut offset = 0usize;
    let mut prev_blank_at: Option<usize> = None;
    for (i, line) in body.split_inclusive('\n').enumerate() {
        let content = line.trim_end_matches(['\n', '\r']);
        if i > 0 {
            if section_header_re().is_match(content) {
                end = offset;
                break;
            }
            if content.trim().is_empty() {
                if let Some(first_blank) = prev_blank_at {
                    end = first_blank;
                    break;
                }
                prev_blank_at = Some(offset);
            } else {
                prev_blank_at = None;
            }
        }
        offset += line.len();
    }
    Some(body[..end].trim())
}

/// Phrase lists per label, matched case-insensitively.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordTable {
    entries: BTreeMap<SdohLabel, Vec<String>>,
}

#[derive(Debug, Deserialize, Serialize)]
struct KeywordFile {
    keywords: BTreeMap<String, Vec<String>>,
}

impl KeywordTable {
    pub fn new(entries: BTreeMap<SdohLabel, Vec<String>>) -> Result<Self, IngestError> {
        for (label, phrases) in &entries {
            if label.is_sentinel() {
                return Err(IngestError::KeywordTable("`Other` cannot carry keywords".into()));
            }
            if phrases.is_empty() {
                return Err(IngestError::KeywordTable(format!("{label} has no phrases")));
            }
            if phrases.iter().any(|p| p.trim().is_empty()) {
                return Err(IngestError::KeywordTable(format!("{label} has an empty phrase")));
            }
        }
        Ok(KeywordTable { entries })
    }

    pub fn builtin() -> Self {
        Self::from_toml_str(DEFAULT_KEYWORDS).expect("bundled keyword table is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, IngestError> {
        let file: KeywordFile =
            toml::from_str(text).map_err(|e| IngestError::KeywordTable(e.to_string()))?;
        let mut entries = BTreeMap::new();
        for (token, phrases) in file.keywords {
            entries.insert(parse_label(&token)?, phrases);
        }
        Self::new(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            IngestError::KeywordTable(format!("{}: {e}", path.as_ref().display()))
        })?;
        Self::from_toml_str(&text)
    }

    pub fn phrases(&self, label: SdohLabel) -> &[String] {
        self.entries.get(&label).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn labels(&self) -> impl Iterator<Item = SdohLabel> + '_ {
        self.entries.keys().copied()
    }
}

fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn phrase_matches(haystack: &str, phrase: &str) -> bool {
    let phrase = normalize(phrase);
    if phrase.chars().count() <= SHORT_PHRASE_CHARS {
        let pattern = format!(r"\b{}\b", regex::escape(&phrase));
        Regex::new(&pattern).is_ok_and(|re| re.is_match(haystack))
    } else {
        haystack.contains(&phrase)
    }
}

/// Labels with at least one matching phrase.
pub fn keyword_scan(text: &str, table: &KeywordTable) -> BTreeSet<SdohLabel> {
    let haystack = normalize(text);
    if haystack.is_empty() {
        return BTreeSet::new();
    }
    table
        .entries
        .iter()
        .filter(|(_, phrases)| phrases.iter().any(|p| phrase_matches(&haystack, p)))
        .map(|(label, _)| *label)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct PoolCounts {
    pub available: usize,
    pub in_use: usize,
    pub consumed: usize,
}

impl PoolCounts {
    pub fn total(&self) -> usize {
        self.available + self.in_use + self.consumed
    }
}

/// Raw notes with an available -> in_use -> (available | consumed) life cycle.
///
/// Not internally synchronized; share it behind a `Mutex` so that all
/// mutations go through one writer.
#[derive(Debug, Clone, Default)]
pub struct NotePool {
    notes: Vec<RawNote>,
    index: HashMap<String, usize>,
}

impl NotePool {
    pub fn new(notes: impl IntoIterator<Item = RawNote>) -> Result<Self, IngestError> {
        let mut pool = NotePool::default();
        for note in notes {
            pool.insert(note)?;
        }
        Ok(pool)
    }

    pub fn insert(&mut self, note: RawNote) -> Result<(), IngestError> {
        if self.index.contains_key(&note.id) {
            return Err(IngestError::DuplicateId(note.id));
        }
        self.index.insert(note.id.clone(), self.notes.len());
        self.notes.push(note);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&RawNote> {
        self.index.get(id).map(|&i| &self.notes[i])
    }

    pub fn notes(&self) -> &[RawNote] {
        &self.notes
    }

    pub fn counts(&self) -> PoolCounts {
        let mut counts = PoolCounts::default();
        for note in &self.notes {
            match note.state {
                NoteState::Available => counts.available += 1,
                NoteState::InUse => counts.in_use += 1,
                NoteState::Consumed => counts.consumed += 1,
            }
        }
        counts
    }

    /// Takes the first `n` available notes in insertion order.
    pub fn draw(&mut self, n: usize) -> Result<Vec<RawNote>, IngestError> {
        let available = self.counts().available;
        if available < n {
            return Err(IngestError::PoolExhausted {
                requested: n,
                available,
            });
        }
        let mut drawn = Vec::with_capacity(n);
        for note in self.notes.iter_mut() {
            if drawn.len() == n {
                break;
            }
            if note.state == NoteState::Available {
                note.state = NoteState::InUse;
                drawn.push(note.clone());
            }
        }
        Ok(drawn)
    }

    fn transition(&mut self, id: &str, to: NoteState) -> Result<(), IngestError> {
        let idx = *self
            .index
            .get(id)
            .ok_or_else(|| IngestError::UnknownNote(id.to_string()))?;
        let note = &mut self.notes[idx];
        if note.state != NoteState::InUse {
            return Err(IngestError::InvalidState {
                id: id.to_string(),
                expected: NoteState::InUse,
                actual: note.state,
            });
        }
        note.state = to;
        Ok(())
    }

    /// in_use -> available
    pub fn return_note(&mut self, id: &str) -> Result<(), IngestError> {
        self.transition(id, NoteState::Available)
    }

    /// in_use -> consumed
    pub fn consume(&mut self, id: &str) -> Result<(), IngestError> {
        self.transition(id, NoteState::Consumed)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        Self::new(ndjson::read::<RawNote>(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IngestError> {
        ndjson::write(path, &self.notes)?;
        Ok(())
    }
}

/// Reads `{id, text, source}` lines into fresh, available notes.
pub fn read_raw_notes(path: impl AsRef<Path>) -> Result<Vec<RawNote>, IngestError> {
    Ok(ndjson::read::<RawNoteInput>(path)?
        .into_iter()
        .map(|r| RawNote::new(r.id, r.text, r.source))
        .collect())
}
