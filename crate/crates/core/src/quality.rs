//! Triple-pass consistency check for augmented notes.
//!
//! Pass 1 agreeing with the label the note was generated for accepts it
//! outright. Otherwise two more passes run; three identical labels accept
//! the note under the annotated label, anything else discards it and hands
//! the source raw note back to the pool.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotator::{annotate_step, AnnotateError, AnnotateSettings, AnnotationResult, CascadePrograms};
use crate::gateway::Gateway;
use crate::ingest::{IngestError, NotePool};
use crate::program::{AnnotationLabel, Step};
use crate::taxonomy::SdohLabel;

#[derive(Debug, Error)]
pub enum QualityError {
    #[error("`{0}` cannot be a required label")]
    SentinelRequired(SdohLabel),
    #[error(transparent)]
    Pool(#[from] IngestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    AcceptedAsRequired,
    AcceptedAsAnnotated,
    Discarded,
}

/// One annotation pass. A failed pass never matches anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Pass {
    Annotated(AnnotationResult),
    Failed { error: String },
}

impl Pass {
    pub fn label(&self) -> Option<AnnotationLabel> {
        match self {
            Pass::Annotated(r) => Some(r.label),
            Pass::Failed { .. } => None,
        }
    }
}

impl From<Result<AnnotationResult, AnnotateError>> for Pass {
    fn from(r: Result<AnnotationResult, AnnotateError>) -> Self {
        match r {
            Ok(result) => Pass::Annotated(result),
            Err(e) => Pass::Failed { error: e.to_string() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub decision: Decision,
    pub final_label: Option<SdohLabel>,
    pub passes: Vec<Pass>,
}

impl ValidationOutcome {
    pub fn is_accepted(&self) -> bool {
        self.decision != Decision::Discarded
    }
}

/// The decision rule alone. `pass(i)` runs annotation pass `i` (0-based);
/// it is called once or three times, never twice.
pub fn run_protocol<F>(required: SdohLabel, mut pass: F) -> ValidationOutcome
where
    F: FnMut(usize) -> Pass,
{
    let required = AnnotationLabel::Sdoh(required);
    let first = pass(0);
    if first.label() == Some(required) {
        return ValidationOutcome {
            decision: Decision::AcceptedAsRequired,
            final_label: required.sdoh(),
            passes: vec![first],
        };
    }
    let passes = vec![first, pass(1), pass(2)];
    let agreed = match passes[0].label() {
        Some(l) if passes.iter().all(|p| p.label() == Some(l)) => l.sdoh(),
        _ => None,
    };
    match agreed {
        Some(label) => ValidationOutcome {
            decision: Decision::AcceptedAsAnnotated,
            final_label: Some(label),
            passes,
        },
        None => ValidationOutcome {
            decision: Decision::Discarded,
            final_label: None,
            passes,
        },
    }
}

/// Seed for pass `i`: pass 0 uses the configured seed, later passes step
/// away from it so each pass samples independently.
pub fn pass_seed(base: Option<u64>, pass: usize) -> Option<u64> {
    match (base, pass) {
        (base, 0) => base,
        (base, i) => Some(base.unwrap_or(0).wrapping_add(i as u64)),
    }
}

/// Annotates only; pool bookkeeping is left to [`settle`].
pub fn check_note(
    note: &str,
    required: SdohLabel,
    programs: &CascadePrograms,
    gateway: &Gateway,
    settings: &AnnotateSettings,
) -> Result<ValidationOutcome, QualityError> {
    if required.is_sentinel() {
        return Err(QualityError::SentinelRequired(required));
    }
    let step = Step::for_label(required);
    let program = programs.for_step(step);
    Ok(run_protocol(required, |i| {
        let settings = AnnotateSettings {
            seed: pass_seed(settings.seed, i),
            ..settings.clone()
        };
        annotate_step(note, program, step, gateway, &settings).into()
    }))
}

/// Accepted notes consume their source raw note; discarded ones return it.
pub fn settle(
    outcome: &ValidationOutcome,
    source_note_id: &str,
    pool: &mut NotePool,
) -> Result<(), IngestError> {
    if outcome.is_accepted() {
        pool.consume(source_note_id)
    } else {
        pool.return_note(source_note_id)
    }
}

pub fn validate_example(
    note: &str,
    source_note_id: &str,
    required: SdohLabel,
    programs: &CascadePrograms,
    gateway: &Gateway,
    settings: &AnnotateSettings,
    pool: &mut NotePool,
) -> Result<ValidationOutcome, QualityError> {
    let outcome = check_note(note, required, programs, gateway, settings)?;
    settle(&outcome, source_note_id, pool)?;
    Ok(outcome)
}

/// A generated note waiting for validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub item_id: String,
    pub source_note_id: String,
    pub text: String,
    pub required: SdohLabel,
}

/// Annotates candidates concurrently, then settles the pool in input order.
pub fn validate_batch(
    candidates: &[Candidate],
    programs: &CascadePrograms,
    gateway: &Gateway,
    settings: &AnnotateSettings,
    pool: &mut NotePool,
) -> Result<Vec<ValidationOutcome>, QualityError> {
    let outcomes = crate::parallel::map(candidates, gateway.max_in_flight(), |c| {
        check_note(&c.text, c.required, programs, gateway, settings)
    });
    let mut out = Vec::with_capacity(outcomes.len());
    for (c, o) in candidates.iter().zip(outcomes) {
        let o = o?;
        settle(&o, &c.source_note_id, pool)?;
        out.push(o);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{NoteSource, RawNote};
    use crate::taxonomy::Taxonomy;
    use SdohLabel::*;

    fn annotated(label: SdohLabel) -> Pass {
        Pass::Annotated(AnnotationResult {
            step: Step::Eviction,
            label: AnnotationLabel::Sdoh(label),
            rationale: "r".into(),
            raw_output: "r".into(),
            run_index: 0,
        })
    }

    fn scripted(labels: &[Option<SdohLabel>]) -> (ValidationOutcome, usize) {
        let mut calls = 0;
        let out = run_protocol(EvictionPending, |i| {
            calls += 1;
            match labels[i] {
                Some(l) => annotated(l),
                None => Pass::Failed { error: "unparseable".into() },
            }
        });
        (out, calls)
    }

    #[test]
    fn the_three_outcomes() {
        let (o, calls) = scripted(&[Some(EvictionPending)]);
        assert_eq!((o.decision, o.final_label, calls), (Decision::AcceptedAsRequired, Some(EvictionPending), 1));

        let x = Some(EvictionPresentCurrent);
        let (o, calls) = scripted(&[x, x, x]);
        assert_eq!((o.decision, o.final_label, calls), (Decision::AcceptedAsAnnotated, x, 3));

        let (o, calls) = scripted(&[x, Some(EvictionAbsent), x]);
        assert_eq!((o.decision, o.final_label, calls), (Decision::Discarded, None, 3));
    }

    #[test]
    fn failed_passes_never_agree() {
        let (o, _) = scripted(&[None, None, None]);
        assert_eq!(o.decision, Decision::Discarded);
        let (o, _) = scripted(&[Some(Other), Some(Other), Some(Other)]);
        assert_eq!((o.decision, o.final_label), (Decision::AcceptedAsAnnotated, Some(Other)));
        let x = Some(EvictionAbsent);
        let (o, _) = scripted(&[x, None, x]);
        assert_eq!(o.decision, Decision::Discarded);
    }

    #[test]
    fn seeds_differ_per_pass() {
        assert_eq!(pass_seed(Some(10), 0), Some(10));
        assert_eq!(pass_seed(Some(10), 1), Some(11));
        assert_eq!(pass_seed(None, 0), None);
        assert_eq!(pass_seed(None, 2), Some(2));
    }

    #[test]
    fn pool_is_settled_once() {
        use crate::gateway::ScriptedBackend;
        let mut pool = NotePool::new([
            RawNote::new("a", "lives alone", NoteSource::MimicLike),
            RawNote::new("b", "lives with son", NoteSource::MimicLike),
        ])
        .unwrap();
        pool.draw(2).unwrap();
        let gw = Gateway::new(ScriptedBackend::new().fallback(|r| {
            let seed = r.seed.unwrap_or(0);
            if r.full_text().contains("keeper") {
                Ok("Label: t3_Eviction_pending".into())
            } else {
                Ok(format!("Label: {}", if seed % 2 == 0 { "t3_Eviction_absent" } else { "Other" }))
            }
        }));
        let programs = CascadePrograms::defaults(&Taxonomy::builtin());
        let settings = AnnotateSettings { seed: Some(0), ..Default::default() };
        let keep = validate_example("keeper", "a", EvictionPending, &programs, &gw, &settings, &mut pool).unwrap();
        assert_eq!(keep.decision, Decision::AcceptedAsRequired);
        let drop = validate_example("drifter", "b", EvictionPending, &programs, &gw, &settings, &mut pool).unwrap();
        assert_eq!(drop.decision, Decision::Discarded);
        let counts = pool.counts();
        assert_eq!((counts.available, counts.in_use, counts.consumed), (1, 0, 1));
        assert_eq!(pool.get("b").unwrap().state, crate::ingest::NoteState::Available);
        assert!(check_note("x", Other, &programs, &gw, &settings).is_err());
    }
}
