//! Bootstrap few-shot prompt search.
//!
//! The base program labels the trainset; the examples it gets right become
//! demos carrying its own reasoning. Candidate programs are seeded random
//! subsets drawn from those demos plus the raw gold train examples, scored by
//! exact match on a devset. Candidate 0 is always the zero-demo base program.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotator::{annotate_step, AnnotateError, AnnotateSettings};
use crate::gateway::{Gateway, GatewayError};
use crate::program::{AnnotationLabel, Demo, ProgramError, PromptProgram, DEFAULT_MAX_DEMOS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error("no demos were bootstrapped and the trainset is empty")]
    EmptyCandidatePool,
    #[error("devset is empty")]
    EmptyDevset,
    #[error("num_candidates must be at least 1")]
    NoCandidates,
    #[error("example label {label} is not legal for the program's step")]
    IllegalExample { label: String },
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub note: String,
    pub label: AnnotationLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

impl LabeledExample {
    pub fn new(note: impl Into<String>, label: AnnotationLabel) -> Self {
        LabeledExample {
            note: note.into(),
            label,
            rationale: None,
        }
    }

    fn as_demo(&self) -> Demo {
        Demo {
            note: self.note.clone(),
            rationale: self.rationale.clone(),
            label: self.label,
        }
    }
}

pub fn exact_match(predicted: AnnotationLabel, gold: AnnotationLabel) -> u8 {
    u8::from(predicted == gold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub num_candidates: usize,
    pub max_demos: usize,
    pub seed: u64,
}

impl OptimizerConfig {
    /// Defaults for everything but the seed, which callers must pick.
    pub fn with_seed(seed: u64) -> Self {
        OptimizerConfig {
            num_candidates: 16,
            max_demos: DEFAULT_MAX_DEMOS,
            seed,
        }
    }
}

fn check_labels(program: &PromptProgram, examples: &[LabeledExample]) -> Result<(), OptimizeError> {
    match examples.iter().find(|e| !program.step().accepts(e.label)) {
        Some(e) => Err(OptimizeError::IllegalExample {
            label: e.label.to_string(),
        }),
        None => Ok(()),
    }
}

/// 1 for a correct label, 0 for a wrong or unparseable one. Transport
/// failures are returned as errors rather than scored.
fn score_one(
    program: &PromptProgram,
    example: &LabeledExample,
    gateway: &Gateway,
    settings: &AnnotateSettings,
) -> Result<(u8, Option<Demo>), OptimizeError> {
    match annotate_step(&example.note, program, program.step(), gateway, settings) {
        Ok(result) => {
            let hit = exact_match(result.label, example.label);
            let demo = (hit == 1).then(|| Demo {
                note: example.note.clone(),
                rationale: Some(result.rationale),
                label: result.label,
            });
            Ok((hit, demo))
        }
        Err(AnnotateError::UnparseableOutput { .. }) => Ok((0, None)),
        Err(AnnotateError::Gateway(e)) => Err(e.into()),
        Err(AnnotateError::ProgramMismatch { .. }) => unreachable!("step taken from the program"),
    }
}

/// Runs `teacher` over the trainset and keeps the examples it labels
/// correctly, with the teacher's reasoning as the demo rationale.
pub fn bootstrap_demos(
    teacher: &PromptProgram,
    trainset: &[LabeledExample],
    gateway: &Gateway,
    settings: &AnnotateSettings,
) -> Result<Vec<Demo>, OptimizeError> {
    check_labels(teacher, trainset)?;
    let scored = crate::parallel::map(trainset, gateway.max_in_flight(), |ex| {
        score_one(teacher, ex, gateway, settings)
    });
    let mut demos = Vec::new();
    for s in scored {
        if let (_, Some(d)) = s? {
            demos.push(d);
        }
    }
    Ok(demos)
}

/// Mean exact match over `dataset`.
pub fn evaluate_program(
    program: &PromptProgram,
    dataset: &[LabeledExample],
    gateway: &Gateway,
    settings: &AnnotateSettings,
) -> Result<f64, OptimizeError> {
    if dataset.is_empty() {
        return Err(OptimizeError::EmptyDevset);
    }
    check_labels(program, dataset)?;
    let scored = crate::parallel::map(dataset, gateway.max_in_flight(), |ex| {
        score_one(program, ex, gateway, settings).map(|(hit, _)| hit as u64)
    });
    let hits: u64 = scored.into_iter().sum::<Result<u64, _>>()?;
    Ok(hits as f64 / dataset.len() as f64)
}

/// Pool indices for each candidate. Entry 0 is always empty (the base
/// program); the rest are seeded, non-empty subsets in pool order.
pub fn candidate_subsets(
    pool_len: usize,
    num_candidates: usize,
    max_demos: usize,
    seed: u64,
) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = max_demos.min(pool_len);
    let mut out = vec![Vec::new()];
    for _ in 1..num_candidates {
        if cap == 0 {
            out.push(Vec::new());
            continue;
        }
        let size = rng.gen_range(1..=cap);
        let mut picked = index::sample(&mut rng, pool_len, size).into_vec();
        picked.sort_unstable();
        out.push(picked);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub index: usize,
    pub demo_indices: Vec<usize>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOutcome {
    pub best: PromptProgram,
    pub best_index: usize,
    pub scores: Vec<CandidateScore>,
    pub bootstrapped: usize,
    pub pool: Vec<Demo>,
    pub config: OptimizerConfig,
}

impl OptimizeOutcome {
    pub fn best_score(&self) -> f64 {
        self.scores[self.best_index].score
    }

    /// Summary stored next to the program on disk.
    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "config": self.config,
            "best_index": self.best_index,
            "bootstrapped": self.bootstrapped,
            "pool_size": self.pool.len(),
            "scores": self.scores,
        })
    }
}

pub fn optimize(
    base: &PromptProgram,
    trainset: &[LabeledExample],
    devset: &[LabeledExample],
    config: &OptimizerConfig,
    gateway: &Gateway,
    settings: &AnnotateSettings,
) -> Result<OptimizeOutcome, OptimizeError> {
    if config.num_candidates == 0 {
        return Err(OptimizeError::NoCandidates);
    }
    if devset.is_empty() {
        return Err(OptimizeError::EmptyDevset);
    }
    base.validate()?;
    check_labels(base, devset)?;
    let bootstrapped = bootstrap_demos(base, trainset, gateway, settings)?;
    if bootstrapped.is_empty() && trainset.is_empty() {
        return Err(OptimizeError::EmptyCandidatePool);
    }
    // bootstrapped demos first; raw gold examples fill in the notes the teacher missed
    let mut pool = bootstrapped.clone();
    for ex in trainset {
        if !pool.iter().any(|d| d.note == ex.note) {
            pool.push(ex.as_demo());
        }
    }
    let max_demos = config.max_demos.min(base.max_demos);
    let subsets = candidate_subsets(pool.len(), config.num_candidates, max_demos, config.seed);
    let mut scores = Vec::with_capacity(subsets.len());
    let mut best_index = 0;
    for (i, subset) in subsets.into_iter().enumerate() {
        let program = if i == 0 {
            base.clone()
        } else {
            base.with_demos(subset.iter().map(|&j| pool[j].clone()).collect())
        };
        let score = evaluate_program(&program, devset, gateway, settings)?;
        tracing::debug!(candidate = i, score, "evaluated candidate");
        if score > scores.get(best_index).map_or(f64::NEG_INFINITY, |c: &CandidateScore| c.score) {
            best_index = i;
        }
        scores.push(CandidateScore {
            index: i,
            demo_indices: subset,
            score,
        });
    }
    let best = if best_index == 0 {
        base.clone()
    } else {
        base.with_demos(
            scores[best_index]
                .demo_indices
                .iter()
                .map(|&j| pool[j].clone())
                .collect(),
        )
    };
    Ok(OptimizeOutcome {
        best,
        best_index,
        scores,
        bootstrapped: bootstrapped.len(),
        pool,
        config: config.clone(),
    })
}
