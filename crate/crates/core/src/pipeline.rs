//! File-level commands. Each takes explicit paths and writes its outputs
//! deterministically, so rerunning on the same inputs, seeds and cassette
//! reproduces identical bytes.
//!
//! Work-directory layout used by augment / review / validate:
//!
//! ```text
//! pool.ndjson            raw-note pool with per-note state
//! review_state.json      augmentation sessions, reports, idempotency keys
//! batches/<id>.ndjson    generated items of every batch
//! validation.ndjson      one quality-control outcome per accepted item
//! records.ndjson         validated synthetic records
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotator::{annotate_cascade, AnnotateSettings, CascadePrograms, TraceRecord};
use crate::augmenter::{AugmentError, AugmentSession, AugmenterState, SessionStatus};
use crate::config::{ConfigError, PipelineConfig};
use crate::dataset::{self, DatasetError, Manifest, Provenance, Record, Source, Split};
use crate::gateway::{Gateway, FIVE_RUN_SCHEDULE};
use crate::ingest::{keyword_scan, read_raw_notes, IngestError, KeywordTable, NotePool};
use crate::metrics::{self, MetricReport, MetricsError};
use crate::ndjson::{self, NdjsonError};
use crate::optimizer::{self, LabeledExample, OptimizeError, OptimizerConfig};
use crate::program::{AnnotationLabel, ProgramError, ProgramFile, PromptProgram, Step};
use crate::quality::{self, Candidate, Decision, Pass, QualityError, ValidationOutcome};
use crate::review::{ApiError, ReviewService, ReviewState, VerdictRequest};
use crate::taxonomy::{SdohLabel, Taxonomy, TaxonomyError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Quality(#[from] QualityError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error(transparent)]
    Ndjson(#[from] NdjsonError),
    #[error("review: {message}")]
    Review { code: &'static str, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Input(String),
}

impl PipelineError {
    /// Stable machine-readable kind for structured error output.
    pub fn kind(&self) -> String {
        match self {
            PipelineError::Config(_) => "ConfigError".into(),
            PipelineError::Taxonomy(_) => "TaxonomyError".into(),
            PipelineError::Ingest(_) => "IngestError".into(),
            PipelineError::Augment(e) => format!("{e:?}").split(['(', ' ', '{']).next().unwrap_or("AugmentError").to_string(),
            PipelineError::Quality(_) => "QualityError".into(),
            PipelineError::Dataset(e) => format!("{e:?}").split(['(', ' ', '{']).next().unwrap_or("DatasetError").to_string(),
            PipelineError::Metrics(e) => format!("{e:?}").split(['(', ' ', '{']).next().unwrap_or("MetricsError").to_string(),
            PipelineError::Optimize(_) => "OptimizeError".into(),
            PipelineError::Program(_) => "ProgramError".into(),
            PipelineError::Ndjson(_) => "InputError".into(),
            PipelineError::Review { code, .. } => code.to_string(),
            PipelineError::Io { .. } => "IoError".into(),
            PipelineError::Input(_) => "InputError".into(),
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, PipelineError::Config(_))
    }
}

impl From<ApiError> for PipelineError {
    fn from(e: ApiError) -> Self {
        PipelineError::Review {
            code: e.code(),
            message: e.to_string(),
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn load_taxonomy(config: &PipelineConfig) -> Result<Taxonomy> {
    Ok(match &config.paths.taxonomy {
        Some(p) => Taxonomy::load(p)?,
        None => Taxonomy::builtin(),
    })
}

fn load_keywords(config: &PipelineConfig) -> Result<KeywordTable> {
    Ok(match &config.paths.keywords {
        Some(p) => KeywordTable::load(p)?,
        None => KeywordTable::builtin(),
    })
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub n_notes: usize,
    pub with_social_history: usize,
    /// Note ids whose social history mentions a keyword of the label.
    pub keyword_candidates: BTreeMap<SdohLabel, Vec<String>>,
}

/// Reads raw notes, extracts social history, keyword-filters, and writes
/// `pool.ndjson` plus `ingest_report.json` into `work`.
pub fn ingest(config: &PipelineConfig, input: &Path, work: &Path) -> Result<IngestReport> {
    let keywords = load_keywords(config)?;
    let notes = read_raw_notes(input)?;
    let pool = NotePool::new(notes)?;
    let mut report = IngestReport {
        n_notes: pool.len(),
        with_social_history: 0,
        keyword_candidates: BTreeMap::new(),
    };
    for note in pool.notes() {
        if note.social_history.is_some() {
            report.with_social_history += 1;
        }
        for label in keyword_scan(note.augmentation_text(), &keywords) {
            report.keyword_candidates.entry(label).or_default().push(note.id.clone());
        }
    }
    std::fs::create_dir_all(work).map_err(|e| io_err(work, e))?;
    pool.save(work.join("pool.ndjson"))?;
    write_json(&work.join("ingest_report.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------- augment

fn state_path(work: &Path) -> PathBuf {
    work.join("review_state.json")
}

pub fn load_review_state(work: &Path) -> Result<ReviewState> {
    let path = state_path(work);
    if path.exists() {
        read_json(&path)
    } else {
        Ok(ReviewState::new([]))
    }
}

fn write_batch_files(work: &Path, state: &ReviewState) -> Result<()> {
    for session in state.sessions.values() {
        for batch in session.batches.iter().chain(std::iter::once(&session.batch)) {
            ndjson::write(work.join("batches").join(format!("{}.ndjson", batch.batch_id)), &batch.items)?;
        }
    }
    Ok(())
}

fn save_work(work: &Path, state: &ReviewState, pool: &NotePool) -> Result<()> {
    write_json(&state_path(work), state)?;
    pool.save(work.join("pool.ndjson"))?;
    write_batch_files(work, state)
}

/// Opens an augmentation session for `label` and generates its first
/// batch. A label that already has a session is left as it is.
pub fn augment(
    config: &PipelineConfig,
    work: &Path,
    label: SdohLabel,
    batch_size: Option<usize>,
    gateway: &Gateway,
) -> Result<String> {
    let mut aug = config.augmenter_config()?;
    if let Some(n) = batch_size {
        if n == 0 {
            return Err(ConfigError::Invalid("--batch must be positive".into()).into());
        }
        aug.batch_size = n;
    }
    let taxonomy = load_taxonomy(config)?;
    let mut state = load_review_state(work)?;
    if let Some(existing) = state.sessions.get(&label) {
        return Ok(existing.batch.batch_id.clone());
    }
    let mut pool = NotePool::load(work.join("pool.ndjson"))?;
    let session = AugmentSession::start(AugmenterState::new(label), &taxonomy, aug, &mut pool, gateway)?;
    let batch_id = session.batch.batch_id.clone();
    state.sessions.insert(label, session);
    save_work(work, &state, &pool)?;
    Ok(batch_id)
}

// ---------------------------------------------------------------- review

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictLine {
    pub item_id: String,
    pub passed: bool,
    #[serde(default)]
    pub feedback: Option<String>,
    #[serde(default)]
    pub idempotency_key: Option<String>,
}

pub fn review_service(work: &Path, gateway: Arc<Gateway>) -> Result<ReviewService> {
    let state = load_review_state(work)?;
    let pool = NotePool::load(work.join("pool.ndjson"))?;
    Ok(ReviewService::new(state, pool, gateway).with_persistence(work))
}

/// Applies verdicts through the review service, then advances every open
/// batch whose items all carry a verdict. Returns the advanced batch ids.
pub fn apply_verdicts(service: &ReviewService, work: &Path, verdicts: &[VerdictLine]) -> Result<Vec<String>> {
    for v in verdicts {
        service.submit_verdict(
            &v.item_id,
            VerdictRequest {
                passed: v.passed,
                feedback: v.feedback.clone(),
                idempotency_key: v.idempotency_key.clone(),
            },
        )?;
    }
    let mut advanced = Vec::new();
    for progress in service.current_batches() {
        if progress.open && progress.verdicted == progress.total {
            service.advance_round(&progress.batch_id)?;
            advanced.push(progress.batch_id);
        }
    }
    sync_batch_files(service, work)?;
    Ok(advanced)
}

/// Rewrites the batch files from the service's current state.
pub fn sync_batch_files(service: &ReviewService, work: &Path) -> Result<()> {
    let (state, _) = service.snapshot();
    write_batch_files(work, &state)
}

// ---------------------------------------------------------------- validate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationLine {
    pub item_id: String,
    pub source_note_id: String,
    pub required: SdohLabel,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_label: Option<SdohLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_id: Option<String>,
    pub passes: Vec<Pass>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidateSummary {
    pub checked: usize,
    pub accepted_as_required: usize,
    pub accepted_as_annotated: usize,
    pub discarded: usize,
}

/// Rationale kept on a validated record: the pass that decided it.
fn decisive_rationale(outcome: &ValidationOutcome) -> Option<String> {
    match &outcome.passes.last()? {
        Pass::Annotated(r) => Some(r.rationale.clone()),
        Pass::Failed { .. } => None,
    }
}

/// Runs quality control over every human-accepted note not yet checked and
/// appends to `validation.ndjson` and `records.ndjson`.
pub fn validate(
    config: &PipelineConfig,
    work: &Path,
    programs: &CascadePrograms,
    split: Split,
    gateway: &Gateway,
) -> Result<ValidateSummary> {
    let state = load_review_state(work)?;
    let mut pool = NotePool::load(work.join("pool.ndjson"))?;
    let log_path = work.join("validation.ndjson");
    let records_path = work.join("records.ndjson");
    let mut log: Vec<ValidationLine> = if log_path.exists() { ndjson::read(&log_path)? } else { Vec::new() };
    let mut records: Vec<Record> = if records_path.exists() {
        dataset::load_records(&records_path)?
    } else {
        Vec::new()
    };
    let done: BTreeSet<String> = log.iter().map(|l| l.item_id.clone()).collect();
    let candidates: Vec<Candidate> = state
        .sessions
        .values()
        .flat_map(|s| s.state.accepted.iter())
        .filter(|a| !done.contains(&a.item_id))
        .map(|a| Candidate {
            item_id: a.item_id.clone(),
            source_note_id: a.source_raw_note_id.clone(),
            text: a.text.clone(),
            required: a.label,
        })
        .collect();
    let settings = config.annotator.settings();
    let outcomes = quality::validate_batch(&candidates, programs, gateway, &settings, &mut pool)?;
    let mut summary = ValidateSummary::default();
    for (c, o) in candidates.iter().zip(outcomes) {
        summary.checked += 1;
        let mut record_id = None;
        match (o.decision, o.final_label) {
            (Decision::Discarded, _) => summary.discarded += 1,
            (decision, Some(label)) => {
                if decision == Decision::AcceptedAsRequired {
                    summary.accepted_as_required += 1;
                } else {
                    summary.accepted_as_annotated += 1;
                }
                let mut record = Record::new(c.text.clone(), label, Source::Synth, split)
                    .with_provenance(Provenance::from_decision(decision).expect("accepted"));
                if let Some(r) = decisive_rationale(&o) {
                    record = record.with_rationale(r);
                }
                record_id = Some(record.id.clone());
                records.push(record);
            }
            (_, None) => unreachable!("accepted outcomes carry a label"),
        }
        log.push(ValidationLine {
            item_id: c.item_id.clone(),
            source_note_id: c.source_note_id.clone(),
            required: c.required,
            decision: o.decision,
            final_label: o.final_label,
            record_id,
            passes: o.passes,
        });
    }
    ndjson::write(&log_path, &log)?;
    dataset::save_records(&records_path, &records)?;
    pool.save(work.join("pool.ndjson"))?;
    Ok(summary)
}

// ---------------------------------------------------------------- annotate

/// Loads `binary.json`, `eviction.json` and `non_eviction.json` from `dir`
/// where present, falling back to the default program for each step.
pub fn load_programs(taxonomy: &Taxonomy, dir: Option<&Path>) -> Result<CascadePrograms> {
    let mut programs = CascadePrograms::defaults(taxonomy);
    if let Some(dir) = dir {
        for (name, slot) in [
            ("binary.json", &mut programs.binary),
            ("eviction.json", &mut programs.eviction),
            ("non_eviction.json", &mut programs.non_eviction),
        ] {
            let path = dir.join(name);
            if path.exists() {
                let program = PromptProgram::load(&path)?;
                if program.step() != slot.step() {
                    return Err(PipelineError::Input(format!("{} holds a {:?} program", path.display(), program.step())));
                }
                *slot = program;
            }
        }
    }
    Ok(programs)
}

/// Runs the cascade over every record, `runs` times (1 or 5). Run 0 is
/// deterministic; further runs follow the sampled five-run schedule.
pub fn annotate(
    config: &PipelineConfig,
    records: &[Record],
    programs: &CascadePrograms,
    runs: usize,
    gateway: &Gateway,
) -> Result<Vec<TraceRecord>> {
    if runs == 0 || runs > FIVE_RUN_SCHEDULE.len() {
        return Err(PipelineError::Input(format!("runs must be between 1 and {}", FIVE_RUN_SCHEDULE.len())));
    }
    let base = config.annotator.settings();
    let mut out = Vec::with_capacity(records.len() * runs);
    for (run, &temperature) in FIVE_RUN_SCHEDULE.iter().enumerate().take(runs) {
        let settings = AnnotateSettings {
            temperature,
            seed: Some(base.seed.unwrap_or(0) + run as u64),
            run_index: run,
            ..base.clone()
        };
        let results = crate::parallel::map(records, gateway.max_in_flight(), |r| {
            annotate_cascade(&r.id, &r.text, programs, gateway, &settings)
        });
        out.extend(results.iter().map(|r| TraceRecord::from_result(r, run, programs)));
    }
    Ok(out)
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSet {
    Eviction,
    NonEviction,
    All,
}

impl LabelSet {
    pub fn labels(self) -> Vec<SdohLabel> {
        match self {
            LabelSet::Eviction => SdohLabel::EVICTION.to_vec(),
            LabelSet::NonEviction => SdohLabel::NON_EVICTION.to_vec(),
            LabelSet::All => SdohLabel::CLASSES.to_vec(),
        }
    }
}

impl std::str::FromStr for LabelSet {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "eviction" => Ok(LabelSet::Eviction),
            "non-eviction" => Ok(LabelSet::NonEviction),
            "all" => Ok(LabelSet::All),
            other => Err(format!("unknown label set `{other}` (eviction | non-eviction | all)")),
        }
    }
}

/// Prediction string for a trace under cascade scoring: a note misrouted by
/// Step 1, or with no final label, lands in the out-of-set column.
fn cascaded_prediction(trace: &TraceRecord, gold: SdohLabel) -> String {
    let step1 = match trace.step1_label {
        Some(AnnotationLabel::Yes) => Some(true),
        Some(AnnotationLabel::No) => Some(false),
        _ => None,
    };
    match (step1, trace.final_label) {
        (Some(routed), Some(pred)) if routed == gold.is_eviction_related() => pred.to_string(),
        _ => metrics::RESERVED_COLUMN.to_string(),
    }
}

/// Scores cascade traces against gold records restricted to `labelset`.
/// Every run index present in the traces contributes one confusion matrix;
/// with several runs the report carries 95% intervals.
pub fn evaluate(traces: &[TraceRecord], golds: &[Record], labelset: LabelSet) -> Result<MetricReport> {
    let wanted: BTreeSet<SdohLabel> = labelset.labels().into_iter().collect();
    let gold_by_id: BTreeMap<&str, SdohLabel> = golds
        .iter()
        .filter(|r| wanted.contains(&r.label))
        .map(|r| (r.id.as_str(), r.label))
        .collect();
    let mut by_run: BTreeMap<usize, BTreeMap<&str, &TraceRecord>> = BTreeMap::new();
    for t in traces {
        by_run.entry(t.run_index).or_default().insert(t.note_id.as_str(), t);
    }
    if by_run.is_empty() {
        return Err(PipelineError::Input("no predictions".into()));
    }
    let labels: Vec<String> = labelset.labels().iter().map(|l| l.to_string()).collect();
    let mut matrices = Vec::new();
    for (run, preds) in &by_run {
        let mut g = Vec::new();
        let mut p = Vec::new();
        for (id, gold) in &gold_by_id {
            let trace = preds
                .get(id)
                .ok_or_else(|| PipelineError::Input(format!("run {run} has no prediction for `{id}`")))?;
            g.push(gold.to_string());
            p.push(cascaded_prediction(trace, *gold));
        }
        matrices.push(metrics::confusion_matrix(&g, &p, &labels)?);
    }
    Ok(MetricReport::from_runs(&matrices)?)
}

pub fn write_report(report: &MetricReport, out: &Path) -> Result<()> {
    write_json(out, report)?;
    write_text(&out.with_extension("txt"), &report.render_table())
}

// ---------------------------------------------------------------- optimize

fn examples_for(records: &[Record], step: Step) -> Vec<LabeledExample> {
    records
        .iter()
        .filter_map(|r| {
            let label = match step {
                Step::Binary => {
                    if r.label.is_eviction_related() {
                        AnnotationLabel::Yes
                    } else {
                        AnnotationLabel::No
                    }
                }
                _ => AnnotationLabel::Sdoh(r.label),
            };
            step.accepts(label).then(|| LabeledExample {
                note: r.text.clone(),
                label,
                rationale: r.rationale.clone(),
            })
        })
        .collect()
}

/// Optimizes one step's program on the `dspy_train` / `dspy_eval` records
/// and writes a program file.
pub fn optimize(
    config: &PipelineConfig,
    records: &[Record],
    step: Step,
    opt: &OptimizerConfig,
    out: &Path,
    gateway: &Gateway,
) -> Result<serde_json::Value> {
    let taxonomy = load_taxonomy(config)?;
    let train: Vec<Record> = records.iter().filter(|r| r.split == Split::DspyTrain).cloned().collect();
    let dev: Vec<Record> = records.iter().filter(|r| r.split == Split::DspyEval).cloned().collect();
    let base = PromptProgram::default_for(step, &taxonomy);
    let outcome = optimizer::optimize(
        &base,
        &examples_for(&train, step),
        &examples_for(&dev, step),
        opt,
        gateway,
        &config.annotator.settings(),
    )?;
    let summary = outcome.summary();
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    ProgramFile::new(outcome.best, Some(summary.clone())).save(out)?;
    Ok(summary)
}

// ---------------------------------------------------------------- export

/// Writes chat-format examples to `out` and a manifest next to it.
pub fn export(records: &[Record], with_reasoning: bool, seed: Option<u64>, out: &Path) -> Result<Manifest> {
    let examples = dataset::export_sft(records, with_reasoning)?;
    ndjson::write(out, &examples)?;
    let manifest = Manifest::build(records, with_reasoning, seed, None);
    write_json(&out.with_extension("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Status of every session, for command output.
pub fn session_summary(state: &ReviewState) -> serde_json::Value {
    let sessions: Vec<serde_json::Value> = state
        .sessions
        .values()
        .map(|s| {
            serde_json::json!({
                "label": s.state.label,
                "status": s.status,
                "round_index": s.state.round_index,
                "open_batch": (s.status == SessionStatus::Reviewing).then(|| s.batch.batch_id.clone()),
                "accepted": s.state.accepted.len(),
                "optimizations": s.state.optimizations,
            })
        })
        .collect();
    serde_json::json!({ "sessions": sessions })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(id: &str, step1: Option<AnnotationLabel>, label: Option<SdohLabel>, run: usize) -> TraceRecord {
        TraceRecord {
            note_id: id.into(),
            step1_label: step1,
            step1_rationale: None,
            final_label: label,
            final_rationale: None,
            run_index: run,
            program_version: "v".into(),
            error: None,
        }
    }

    #[test]
    fn misrouted_notes_count_as_wrong() {
        use SdohLabel::*;
        let golds = vec![
            Record::new("a", EvictionPending, Source::Synth, Split::Test),
            Record::new("b", EvictionAbsent, Source::Synth, Split::Test),
            Record::new("c", Homelessness, Source::Synth, Split::Test),
        ];
        let ids: Vec<String> = golds.iter().map(|r| r.id.clone()).collect();
        let traces = vec![
            trace(&ids[0], Some(AnnotationLabel::Yes), Some(EvictionPending), 0),
            // right label, wrong route
            trace(&ids[1], Some(AnnotationLabel::No), Some(EvictionAbsent), 0),
            trace(&ids[2], Some(AnnotationLabel::No), Some(Homelessness), 0),
        ];
        let r = evaluate(&traces, &golds, LabelSet::Eviction).unwrap();
        assert_eq!(r.n_examples, 2);
        assert!((r.micro_f1 - 0.5).abs() < 1e-12);
        assert_eq!(r.invalid_predictions, 1);
        let all = evaluate(&traces, &golds, LabelSet::All).unwrap();
        assert!((all.micro_f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn missing_prediction_is_an_error() {
        let golds = vec![Record::new("a", SdohLabel::EvictionPending, Source::Synth, Split::Test)];
        let traces = vec![trace("other", None, None, 0)];
        assert!(matches!(evaluate(&traces, &golds, LabelSet::Eviction), Err(PipelineError::Input(_))));
    }

    #[test]
    fn label_set_parsing() {
        assert_eq!("non-eviction".parse::<LabelSet>().unwrap(), LabelSet::NonEviction);
        assert!("evictions".parse::<LabelSet>().is_err());
    }

    #[test]
    fn error_kinds_name_the_variant() {
        let e = PipelineError::from(DatasetError::MissingRationale("r-1".into()));
        assert_eq!(e.kind(), "MissingRationale");
    }

    #[test]
    fn binary_examples_follow_routing() {
        let rs = vec![
            Record::new("a", SdohLabel::EvictionPending, Source::Synth, Split::DspyTrain),
            Record::new("b", SdohLabel::Homelessness, Source::Synth, Split::DspyTrain),
        ];
        let ex = examples_for(&rs, Step::Binary);
        assert_eq!(ex[0].label, AnnotationLabel::Yes);
        assert_eq!(ex[1].label, AnnotationLabel::No);
        assert_eq!(examples_for(&rs, Step::Eviction).len(), 1);
    }
}
