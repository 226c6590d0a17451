//! The SDoH label set: three Z59 headline classes, four Z59.8x classes and
//! seven eviction statuses, plus the `Other` sentinel an annotator may emit.
//!
//! Canonical tokens (`t1_Homelessness`, `t3_Eviction_pending`, ...) are the
//! exact strings annotators emit and parse. Definitions live in a
//! [`Taxonomy`] registry that can be loaded from TOML so the wording can be
//! edited without a rebuild.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEFAULT_TAXONOMY: &str = include_str!("../config/taxonomy.toml");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("invalid label token `{0}`")]
    InvalidLabel(String),
    #[error("no definition registered for `{0}`")]
    MissingDefinition(String),
    #[error("definition for `{0}` is empty")]
    EmptyDefinition(String),
    #[error("label `{label}` declared with tier {declared:?}, expected {expected:?}")]
    TierMismatch {
        label: String,
        declared: Tier,
        expected: Tier,
    },
    #[error("duplicate taxonomy entry for `{0}`")]
    DuplicateEntry(String),
    #[error("failed to read taxonomy config: {0}")]
    Io(String),
    #[error("failed to parse taxonomy config: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tier {
    Tier1,
    Tier2,
    Tier3Eviction,
}

/// One of the 14 SDoH classes, or the `Other` sentinel.
///
/// `Other` is only ever an annotator output. It has no tier, no definition
/// and is never a gold augmentation target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SdohLabel {
    Homelessness,
    InadequateHousing,
    LackOfAdequateFood,
    FinancialInsecurity,
    HousingInstability,
    MaterialHardship,
    TransportationInsecurity,
    EvictionAbsent,
    EvictionPresentHistory,
    EvictionPresentCurrent,
    EvictionPending,
    EvictionHypothetical,
    EvictionMrHistory,
    EvictionMrCurrent,
    Other,
}

impl SdohLabel {
    /// The 14 real classes in a fixed order (tier 1, tier 2, eviction).
    pub const CLASSES: [SdohLabel; 14] = [
        SdohLabel::Homelessness,
        SdohLabel::InadequateHousing,
        SdohLabel::LackOfAdequateFood,
        SdohLabel::FinancialInsecurity,
        SdohLabel::HousingInstability,
        SdohLabel::MaterialHardship,
        SdohLabel::TransportationInsecurity,
        SdohLabel::EvictionAbsent,
        SdohLabel::EvictionPresentHistory,
        SdohLabel::EvictionPresentCurrent,
        SdohLabel::EvictionPending,
        SdohLabel::EvictionHypothetical,
        SdohLabel::EvictionMrHistory,
        SdohLabel::EvictionMrCurrent,
    ];

    pub const EVICTION: [SdohLabel; 7] = [
        SdohLabel::EvictionAbsent,
        SdohLabel::EvictionPresentHistory,
        SdohLabel::EvictionPresentCurrent,
        SdohLabel::EvictionPending,
        SdohLabel::EvictionHypothetical,
        SdohLabel::EvictionMrHistory,
        SdohLabel::EvictionMrCurrent,
    ];

    pub const NON_EVICTION: [SdohLabel; 7] = [
        SdohLabel::Homelessness,
        SdohLabel::InadequateHousing,
        SdohLabel::LackOfAdequateFood,
        SdohLabel::FinancialInsecurity,
        SdohLabel::HousingInstability,
        SdohLabel::MaterialHardship,
        SdohLabel::TransportationInsecurity,
    ];

    pub fn canonical_name(self) -> &'static str {
        match self {
            SdohLabel::Homelessness => "t1_Homelessness",
            SdohLabel::InadequateHousing => "t1_InadequateHousing",
            SdohLabel::LackOfAdequateFood => "t1_LackOfAdequateFood",
            SdohLabel::FinancialInsecurity => "t2_FinancialInsecurity",
            SdohLabel::HousingInstability => "t2_HousingInstability",
            SdohLabel::MaterialHardship => "t2_MaterialHardship",
            SdohLabel::TransportationInsecurity => "t2_TransportationInsecurity",
            SdohLabel::EvictionAbsent => "t3_Eviction_absent",
            SdohLabel::EvictionPresentHistory => "t3_Eviction_present_history",
            SdohLabel::EvictionPresentCurrent => "t3_Eviction_present_current",
            SdohLabel::EvictionPending => "t3_Eviction_pending",
            SdohLabel::EvictionHypothetical => "t3_Eviction_hypothetical",
            SdohLabel::EvictionMrHistory => "t3_Eviction_mr_history",
            SdohLabel::EvictionMrCurrent => "t3_Eviction_mr_current",
            SdohLabel::Other => "Other",
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            SdohLabel::Homelessness => "Homelessness",
            SdohLabel::InadequateHousing => "Inadequate housing",
            SdohLabel::LackOfAdequateFood => "Lack of adequate food",
            SdohLabel::FinancialInsecurity => "Financial insecurity",
            SdohLabel::HousingInstability => "Housing instability",
            SdohLabel::MaterialHardship => "Material hardship",
            SdohLabel::TransportationInsecurity => "Transportation insecurity",
            SdohLabel::EvictionAbsent => "Eviction absent",
            SdohLabel::EvictionPresentHistory => "Eviction present (history)",
            SdohLabel::EvictionPresentCurrent => "Eviction present (current)",
            SdohLabel::EvictionPending => "Eviction pending",
            SdohLabel::EvictionHypothetical => "Eviction hypothetical",
            SdohLabel::EvictionMrHistory => "Eviction mutual rescission (history)",
            SdohLabel::EvictionMrCurrent => "Eviction mutual rescission (current)",
            SdohLabel::Other => "Other",
        }
    }

    /// `None` for the sentinel.
    pub fn tier(self) -> Option<Tier> {
        use SdohLabel::*;
        match self {
            Homelessness | InadequateHousing | LackOfAdequateFood => Some(Tier::Tier1),
            FinancialInsecurity | HousingInstability | MaterialHardship
            | TransportationInsecurity => Some(Tier::Tier2),
            EvictionAbsent | EvictionPresentHistory | EvictionPresentCurrent | EvictionPending
            | EvictionHypothetical | EvictionMrHistory | EvictionMrCurrent => {
                Some(Tier::Tier3Eviction)
            }
            Other => None,
        }
    }

    /// ICD-10-CM association recorded as metadata only.
    pub fn icd10(self) -> Option<&'static str> {
        use SdohLabel::*;
        match self {
            Homelessness => Some("Z59.0"),
            InadequateHousing => Some("Z59.1"),
            LackOfAdequateFood => Some("Z59.4"),
            HousingInstability => Some("Z59.81"),
            TransportationInsecurity => Some("Z59.82"),
            FinancialInsecurity => Some("Z59.86"),
            MaterialHardship => Some("Z59.87"),
            Other => None,
            _ => Some("Z59.89"),
        }
    }

    pub fn is_sentinel(self) -> bool {
        self == SdohLabel::Other
    }

    pub fn is_eviction_related(self) -> bool {
        self.tier() == Some(Tier::Tier3Eviction)
    }
}

/// Exact, case-sensitive token lookup. `"Other"` yields the sentinel.
pub fn parse_label(text: &str) -> Result<SdohLabel, TaxonomyError> {
    SdohLabel::CLASSES
        .iter()
        .copied()
        .chain(std::iter::once(SdohLabel::Other))
        .find(|l| l.canonical_name() == text)
        .ok_or_else(|| TaxonomyError::InvalidLabel(text.to_string()))
}

pub fn is_eviction_related(label: SdohLabel) -> bool {
    label.is_eviction_related()
}

impl fmt::Display for SdohLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.canonical_name())
    }
}

impl FromStr for SdohLabel {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_label(s)
    }
}

impl Serialize for SdohLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.canonical_name())
    }
}

impl<'de> Deserialize<'de> for SdohLabel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_label(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDefinition {
    pub label: SdohLabel,
    pub definition_text: String,
    #[serde(default)]
    pub few_shot_snippets: Vec<String>,
}

#[derive(Debug, Deserialize, Serialize)]
struct TaxonomyFile {
    label: Vec<TaxonomyEntry>,
}

#[derive(Debug, Deserialize, Serialize)]
struct TaxonomyEntry {
    canonical_name: String,
    tier: Tier,
    definition_text: String,
    #[serde(default)]
    few_shot_snippets: Vec<String>,
}

/// Validated definition registry. Immutable once built.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    definitions: BTreeMap<SdohLabel, LabelDefinition>,
}

impl Taxonomy {
    /// The bundled definitions.
    pub fn builtin() -> Self {
        Self::from_toml_str(DEFAULT_TAXONOMY).expect("bundled taxonomy is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaxonomyError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| TaxonomyError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, TaxonomyError> {
        let file: TaxonomyFile =
            toml::from_str(text).map_err(|e| TaxonomyError::Parse(e.to_string()))?;
        let mut definitions = BTreeMap::new();
        for entry in file.label {
            let label = parse_label(&entry.canonical_name)?;
            if label.is_sentinel() {
                return Err(TaxonomyError::InvalidLabel(entry.canonical_name));
            }
            let expected = label.tier().expect("non-sentinel has a tier");
            if entry.tier != expected {
                return Err(TaxonomyError::TierMismatch {
                    label: entry.canonical_name,
                    declared: entry.tier,
                    expected,
                });
            }
            let def = LabelDefinition {
                label,
                definition_text: entry.definition_text,
                few_shot_snippets: entry.few_shot_snippets,
            };
            if definitions.insert(label, def).is_some() {
                return Err(TaxonomyError::DuplicateEntry(label.to_string()));
            }
        }
        let taxonomy = Taxonomy { definitions };
        taxonomy.validate()?;
        Ok(taxonomy)
    }

    /// All 14 classes present, every definition non-empty.
    pub fn validate(&self) -> Result<(), TaxonomyError> {
        for label in SdohLabel::CLASSES {
            let def = self
                .definitions
                .get(&label)
                .ok_or_else(|| TaxonomyError::MissingDefinition(label.to_string()))?;
            if def.definition_text.trim().is_empty() {
                return Err(TaxonomyError::EmptyDefinition(label.to_string()));
            }
        }
        Ok(())
    }

    pub fn definition_of(&self, label: SdohLabel) -> Result<&LabelDefinition, TaxonomyError> {
        self.definitions
            .get(&label)
            .ok_or_else(|| TaxonomyError::MissingDefinition(label.to_string()))
    }

    pub fn definitions(&self) -> impl Iterator<Item = &LabelDefinition> {
        self.definitions.values()
    }

    pub fn to_toml_string(&self) -> String {
        let file = TaxonomyFile {
            label: self
                .definitions
                .values()
                .map(|d| TaxonomyEntry {
                    canonical_name: d.label.canonical_name().to_string(),
                    tier: d.label.tier().expect("registry holds real classes"),
                    definition_text: d.definition_text.clone(),
                    few_shot_snippets: d.few_shot_snippets.clone(),
                })
                .collect(),
        };
        toml::to_string_pretty(&file).expect("taxonomy serializes")
    }
}

impl Default for Taxonomy {
    fn default() -> Self {
        Self::builtin()
    }
}
