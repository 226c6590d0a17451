//! Labeled records, split planning, synthetic/real mixing and fine-tuning
//! exports.
//!
//! Records live in newline-delimited JSON files, one object per line:
//!
//! ```text
//! {"id": "r-3f2a...", "text": "...", "label": "t3_Eviction_pending",
//!  "rationale": "...", "source": "synth", "split": "test",
//!  "decision_provenance": "accepted_as_required"}
//! ```
//!
//! `rationale` and `decision_provenance` may be absent.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ndjson::{self, NdjsonError};
use crate::quality::Decision;
use crate::taxonomy::SdohLabel;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("negative count {count} for {label}/{split}/{origin}")]
    NegativeCount {
        label: SdohLabel,
        split: Split,
        origin: Source,
        count: i64,
    },
    #[error("need {needed} real records, only {available} available")]
    InsufficientRealRecords { needed: usize, available: usize },
    #[error("need {needed} synthetic records, only {available} available")]
    InsufficientSynthRecords { needed: usize, available: usize },
    #[error("real fraction {0} is outside [0, 1]")]
    InvalidFraction(f64),
    #[error("record `{0}` has no rationale")]
    MissingRationale(String),
    #[error("`{0}` is not a dataset label")]
    SentinelLabel(SdohLabel),
    #[error(transparent)]
    Records(#[from] NdjsonError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Synth,
    Mimic,
    Pmc,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Synth, Source::Mimic, Source::Pmc];

    pub fn is_real(self) -> bool {
        self != Source::Synth
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Synth => "synth",
            Source::Mimic => "mimic",
            Source::Pmc => "pmc",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    DspyTrain,
    DspyEval,
    Sft,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::DspyTrain, Split::DspyEval, Split::Sft, Split::Test];
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.to_string() == s)
            .ok_or_else(|| format!("unknown split `{s}` (dspy_train | dspy_eval | sft | test)"))
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::DspyTrain => "dspy_train",
            Split::DspyEval => "dspy_eval",
            Split::Sft => "sft",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    AcceptedAsRequired,
    AcceptedAsAnnotated,
    Human,
}

impl Provenance {
    pub fn from_decision(d: Decision) -> Option<Self> {
        match d {
            Decision::AcceptedAsRequired => Some(Provenance::AcceptedAsRequired),
            Decision::AcceptedAsAnnotated => Some(Provenance::AcceptedAsAnnotated),
            Decision::Discarded => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub text: String,
    pub label: SdohLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    pub source: Source,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision_provenance: Option<Provenance>,
}

/// Digest of (label, text): the same note with the same label always gets
/// the same id.
pub fn content_id(text: &str, label: SdohLabel) -> String {
    let mut h = Sha256::new();
    h.update(label.canonical_name().as_bytes());
    h.update([0u8]);
    h.update(text.as_bytes());
    format!("r-{}", &hex::encode(h.finalize())[..16])
}

impl Record {
    pub fn new(text: impl Into<String>, label: SdohLabel, source: Source, split: Split) -> Self {
        let text = text.into();
        Record {
            id: content_id(&text, label),
            text,
            label,
            rationale: None,
            source,
            split,
            decision_provenance: None,
        }
    }

    pub fn with_rationale(mut self, rationale: impl Into<String>) -> Self {
        self.rationale = Some(rationale.into());
        self
    }

    pub fn with_provenance(mut self, p: Provenance) -> Self {
        self.decision_provenance = Some(p);
        self
    }
}

pub fn save_records(path: impl AsRef<Path>, records: &[Record]) -> Result<(), DatasetError> {
    Ok(ndjson::write(path, records)?)
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<Record>, DatasetError> {
    let records: Vec<Record> = ndjson::read(path)?;
    if let Some(r) = records.iter().find(|r| r.label.is_sentinel()) {
        return Err(DatasetError::SentinelLabel(r.label));
    }
    Ok(records)
}

pub type CountKey = (SdohLabel, Split, Source);

/// Devset size per label: 12 follows the split table, 48 the text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DevsetPreset {
    Twelve,
    FortyEight,
}

impl DevsetPreset {
    pub fn per_label(self) -> u64 {
        match self {
            DevsetPreset::Twelve => 12,
            DevsetPreset::FortyEight => 48,
        }
    }
}

/// SFT sizes the training-size experiments sweep over.
pub const TRAINING_SIZES: [u64; 5] = [200, 1000, 3000, 5000, 10000];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    #[serde(with = "count_rows")]
    counts: BTreeMap<CountKey, u64>,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self::with_devset(DevsetPreset::Twelve)
    }
}

impl SplitPlan {
    pub fn empty() -> Self {
        SplitPlan {
            counts: BTreeMap::new(),
        }
    }

    pub fn with_devset(preset: DevsetPreset) -> Self {
        let mut plan = Self::empty();
        for label in SdohLabel::CLASSES {
            plan.set(label, Split::DspyTrain, Source::Synth, 8);
            plan.set(label, Split::DspyEval, Source::Synth, preset.per_label());
            let sft = match label {
                SdohLabel::EvictionAbsent => 500,
                SdohLabel::TransportationInsecurity => 300,
                l if l.is_eviction_related() => 750,
                _ => 450,
            };
            plan.set(label, Split::Sft, Source::Synth, sft);
            plan.set(label, Split::Test, Source::Synth, 20);
            // these two classes have no real-note test examples
            if !matches!(label, SdohLabel::EvictionAbsent | SdohLabel::Homelessness) {
                plan.set(label, Split::Test, Source::Mimic, 20);
                plan.set(label, Split::Test, Source::Pmc, 8);
            }
        }
        plan
    }

    fn set(&mut self, label: SdohLabel, split: Split, source: Source, count: u64) {
        if count == 0 {
            self.counts.remove(&(label, split, source));
        } else {
            self.counts.insert((label, split, source), count);
        }
    }

    pub fn apply_overrides(
        mut self,
        overrides: &[(SdohLabel, Split, Source, i64)],
    ) -> Result<Self, DatasetError> {
        for &(label, split, source, count) in overrides {
            if count < 0 {
                return Err(DatasetError::NegativeCount {
                    label,
                    split,
                    origin: source,
                    count,
                });
            }
            if label.is_sentinel() {
                return Err(DatasetError::SentinelLabel(label));
            }
            self.set(label, split, source, count as u64);
        }
        Ok(self)
    }

    pub fn get(&self, label: SdohLabel, split: Split, source: Source) -> u64 {
        self.counts.get(&(label, split, source)).copied().unwrap_or(0)
    }

    /// (synth, mimic, pmc) counts for one label and split.
    pub fn row(&self, label: SdohLabel, split: Split) -> (u64, u64, u64) {
        (
            self.get(label, split, Source::Synth),
            self.get(label, split, Source::Mimic),
            self.get(label, split, Source::Pmc),
        )
    }

    pub fn total(&self, labels: &[SdohLabel], split: Split) -> u64 {
        self.counts
            .iter()
            .filter(|((l, s, _), _)| *s == split && labels.contains(l))
            .map(|(_, c)| c)
            .sum()
    }

    /// Non-zero entries only.
    pub fn table(&self) -> &BTreeMap<CountKey, u64> {
        &self.counts
    }

    /// SFT counts rescaled to `total` in proportion to the current plan,
    /// rounding by largest remainder so the sum is exact.
    pub fn scaled_sft(&self, total: u64) -> SplitPlan {
        let keys: Vec<CountKey> = self
            .counts
            .keys()
            .filter(|(_, s, _)| *s == Split::Sft)
            .copied()
            .collect();
        let current: u64 = keys.iter().map(|k| self.counts[k]).sum();
        let mut plan = self.clone();
        if current == 0 {
            return plan;
        }
        let mut floors: Vec<(CountKey, u64, u64)> = keys
            .iter()
            .map(|k| {
                let exact = self.counts[k] as u128 * total as u128;
                let floor = (exact / current as u128) as u64;
                let rem = (exact % current as u128) as u64;
                (*k, floor, rem)
            })
            .collect();
        let assigned: u64 = floors.iter().map(|f| f.1).sum();
        let mut order: Vec<usize> = (0..floors.len()).collect();
        order.sort_by(|&a, &b| floors[b].2.cmp(&floors[a].2).then(a.cmp(&b)));
        for &i in order.iter().take((total - assigned) as usize) {
            floors[i].1 += 1;
        }
        for (k, c, _) in floors {
            plan.set(k.0, k.1, k.2, c);
        }
        plan
    }

    /// Stable digest of the plan contents.
    pub fn digest(&self) -> String {
        let rows: Vec<_> = self.counts.iter().collect();
        let text = serde_json::to_string(&rows).expect("plan serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Seeded draw of `target` records, `ceil(real_fraction * target)` of them
/// real, the rest synthetic. The output is shuffled with the same seed.
pub fn mix_composition(
    synth: &[Record],
    real: &[Record],
    target: usize,
    real_fraction: f64,
    seed: u64,
) -> Result<Vec<Record>, DatasetError> {
    if !(0.0..=1.0).contains(&real_fraction) {
        return Err(DatasetError::InvalidFraction(real_fraction));
    }
    // the epsilon keeps 0.3 * 1000 from rounding up to 301
    let n_real = ((real_fraction * target as f64) - 1e-9).ceil().max(0.0) as usize;
    let n_synth = target - n_real;
    if n_real > real.len() {
        return Err(DatasetError::InsufficientRealRecords {
            needed: n_real,
            available: real.len(),
        });
    }
    if n_synth > synth.len() {
        return Err(DatasetError::InsufficientSynthRecords {
            needed: n_synth,
            available: synth.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Record> = index::sample(&mut rng, real.len(), n_real)
        .into_iter()
        .map(|i| real[i].clone())
        .collect();
    out.extend(
        index::sample(&mut rng, synth.len(), n_synth)
            .into_iter()
            .map(|i| synth[i].clone()),
    );
    out.shuffle(&mut rng);
    Ok(out)
}

pub const SFT_SYSTEM_PROMPT: &str = "You are asked to act as a healthcare annotator. Read the patient's social history note and assign the single most appropriate social determinants of health label.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftExample {
    pub id: String,
    pub messages: Vec<ChatTurn>,
}

impl SftExample {
    /// (id, note, label) as carried by the messages.
    pub fn projection(&self) -> (String, String, String) {
        let note = self.messages[1].content.clone();
        let answer = &self.messages[2].content;
        let label = answer
            .rsplit_once("Label: ")
            .map(|(_, l)| l)
            .unwrap_or(answer)
            .to_string();
        (self.id.clone(), note, label)
    }
}

fn turn(role: &str, content: impl Into<String>) -> ChatTurn {
    ChatTurn {
        role: role.into(),
        content: content.into(),
    }
}

/// Chat-format fine-tuning examples. With reasoning, the assistant turn is
/// `Reasoning: ...` then `Label: ...`; without, just the label token.
pub fn export_sft(records: &[Record], with_reasoning: bool) -> Result<Vec<SftExample>, DatasetError> {
    records
        .iter()
        .map(|r| {
            let answer = if with_reasoning {
                let rationale = r
                    .rationale
                    .as_deref()
                    .filter(|t| !t.trim().is_empty())
                    .ok_or_else(|| DatasetError::MissingRationale(r.id.clone()))?;
                format!("Reasoning: {rationale}\nLabel: {}", r.label)
            } else {
                r.label.to_string()
            };
            Ok(SftExample {
                id: r.id.clone(),
                messages: vec![
                    turn("system", SFT_SYSTEM_PROMPT),
                    turn("user", r.text.clone()),
                    turn("assistant", answer),
                ],
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Stats {
    #[serde(with = "count_rows")]
    pub counts: BTreeMap<CountKey, u64>,
    pub duplicates: Vec<String>,
}

impl Stats {
    pub fn get(&self, label: SdohLabel, split: Split, source: Source) -> u64 {
        self.counts.get(&(label, split, source)).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn render_table(&self) -> String {
        let mut out = format!("{:<30} {:<10} {:<6} {:>6}\n", "label", "split", "source", "count");
        for ((l, s, src), c) in &self.counts {
            out.push_str(&format!("{:<30} {:<10} {:<6} {:>6}\n", l.canonical_name(), s, src, c));
        }
        out.push_str(&format!("total {}", self.total()));
        if !self.duplicates.is_empty() {
            out.push_str(&format!(", {} duplicate ids skipped", self.duplicates.len()));
        }
        out.push('\n');
        out
    }
}

/// Per-(label, split, source) counts; a repeated id is counted once and
/// listed in `duplicates`.
pub fn stats(records: &[Record]) -> Stats {
    let mut seen = BTreeSet::new();
    let mut out = Stats::default();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            out.duplicates.push(r.id.clone());
            continue;
        }
        *out.counts.entry((r.label, r.split, r.source)).or_default() += 1;
    }
    out
}

mod count_rows {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Row {
        label: SdohLabel,
        split: Split,
        source: Source,
        count: u64,
    }

    pub fn serialize<S: Serializer>(m: &BTreeMap<CountKey, u64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Row> = m
            .iter()
            .map(|(&(label, split, source), &count)| Row { label, split, source, count })
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<CountKey, u64>, D::Error> {
        Ok(Vec::<Row>::deserialize(d)?
            .into_iter()
            .map(|r| ((r.label, r.split, r.source), r.count))
            .collect())
    }
}

/// Written next to every export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub n_records: usize,
    pub with_reasoning: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Record count per source.
    pub composition: BTreeMap<Source, usize>,
    pub stats: Stats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_digest: Option<String>,
}

impl Manifest {
    pub fn build(records: &[Record], with_reasoning: bool, seed: Option<u64>, plan: Option<&SplitPlan>) -> Self {
        let mut composition = BTreeMap::new();
        for r in records {
            *composition.entry(r.source).or_default() += 1;
        }
        Manifest {
            n_records: records.len(),
            with_reasoning,
            seed,
            composition,
            stats: stats(records),
            plan_digest: plan.map(SplitPlan::digest),
        }
    }
}
