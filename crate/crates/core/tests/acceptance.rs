//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Runs without the test harness so the lines always
//! reach the console.

mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdoh_pipeline::annotator::{annotate_cascade, AnnotateSettings, CascadePrograms};
use sdoh_pipeline::augmenter::{
    run_until_threshold, AugmentError, AugmentSession, AugmenterConfig, AugmenterState, SessionStatus,
    ScriptedVerifier, Verifier,
};
use sdoh_pipeline::config::build_gateway;
use sdoh_pipeline::dataset::{
    export_sft, mix_composition, Record, Source, Split, SplitPlan,
};
use sdoh_pipeline::gateway::{CompletionRequest, Gateway, GatewayError, Role, ScriptedBackend};
use sdoh_pipeline::ingest::{NotePool, NoteSource, NoteState, RawNote};
use sdoh_pipeline::metrics::{self, cascaded_correct, ci95};
use sdoh_pipeline::optimizer::{candidate_subsets, optimize, LabeledExample, OptimizerConfig};
use sdoh_pipeline::program::{AnnotationLabel, PromptProgram, Step};
use sdoh_pipeline::quality::{validate_example, Decision};
use sdoh_pipeline::taxonomy::{SdohLabel, Taxonomy};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {{
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    }};
}

// ------------------------------------------------------------ metrics oracle

struct Instance {
    labels: Vec<String>,
    golds: Vec<String>,
    preds: Vec<String>,
}

fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(1..=14);
    let n = rng.gen_range(1..=200);
    let labels: Vec<String> = (0..k).map(|i| format!("L{i}")).collect();
    let mut golds = Vec::with_capacity(n);
    let mut preds = Vec::with_capacity(n);
    for _ in 0..n {
        let g = labels[rng.gen_range(0..k)].clone();
        let roll: f64 = rng.gen();
        let p = if roll < 0.1 {
            "junk".to_string()
        } else if roll < 0.55 {
            g.clone()
        } else {
            labels[rng.gen_range(0..k)].clone()
        };
        golds.push(g);
        preds.push(p);
    }
    Instance { labels, golds, preds }
}

/// Counts straight from the (gold, pred) pairs. `class` may be the
/// out-of-set pseudo-class, matched by any prediction outside the labels.
fn pair_counts(inst: &Instance, class: Option<&str>) -> (f64, f64, f64, f64) {
    let in_set = |p: &str| inst.labels.iter().any(|l| l == p);
    let is = |x: &str, gold_side: bool| match class {
        Some(c) => x == c,
        None => !gold_side && !in_set(x),
    };
    let (mut tp, mut fp, mut fn_, mut tn) = (0.0, 0.0, 0.0, 0.0);
    for (g, p) in inst.golds.iter().zip(&inst.preds) {
        match (is(g, true), is(p, false)) {
            (true, true) => tp += 1.0,
            (false, true) => fp += 1.0,
            (true, false) => fn_ += 1.0,
            (false, false) => tn += 1.0,
        }
    }
    (tp, fp, fn_, tn)
}

fn oracle_f1(tp: f64, fp: f64, fn_: f64) -> f64 {
    if 2.0 * tp + fp + fn_ == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

fn oracle_mcc(tp: f64, fp: f64, fn_: f64, tn: f64) -> f64 {
    let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    if den == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / den
    }
}

/// Multiclass MCC as the correlation of one-hot gold and prediction
/// vectors, the out-of-set prediction being its own coordinate.
fn oracle_mcc_multiclass(inst: &Instance) -> f64 {
    let k = inst.labels.len();
    let coord = |x: &str| inst.labels.iter().position(|l| l == x).unwrap_or(k);
    let n = inst.golds.len() as f64;
    let onehot = |i: usize| -> Vec<f64> { (0..=k).map(|j| if j == i { 1.0 } else { 0.0 }).collect() };
    let xs: Vec<Vec<f64>> = inst.golds.iter().map(|g| onehot(coord(g))).collect();
    let ys: Vec<Vec<f64>> = inst.preds.iter().map(|p| onehot(coord(p))).collect();
    let mean = |v: &[Vec<f64>], j: usize| v.iter().map(|r| r[j]).sum::<f64>() / n;
    let cov = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
        (0..=k)
            .map(|j| {
                let (ma, mb) = (mean(a, j), mean(b, j));
                a.iter().zip(b).map(|(ra, rb)| (ra[j] - ma) * (rb[j] - mb)).sum::<f64>()
            })
            .sum()
    };
    let den = (cov(&xs, &xs) * cov(&ys, &ys)).sqrt();
    if den == 0.0 {
        0.0
    } else {
        cov(&xs, &ys) / den
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn metrics_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..1000u64 {
        let inst = random_instance(seed);
        let m = metrics::confusion_matrix(&inst.golds, &inst.preds, &inst.labels).map_err(|e| e.to_string())?;
        let mut check = |what: &str, got: f64, want: f64| -> Result<(), String> {
            worst = worst.max((got - want).abs());
            ensure!(close(got, want, 1e-12), "seed {seed}: {what} {got} vs oracle {want}");
            Ok(())
        };
        let mut f1_sum = 0.0;
        for l in &inst.labels {
            let (tp, fp, fn_, tn) = pair_counts(&inst, Some(l));
            let f1 = oracle_f1(tp, fp, fn_);
            f1_sum += f1;
            check(&format!("f1[{l}]"), metrics::f1_for(&m, l).unwrap(), f1)?;
            check(&format!("mcc[{l}]"), metrics::mcc_binary(&m, l).unwrap(), oracle_mcc(tp, fp, fn_, tn))?;
        }
        check("macro", metrics::macro_f1(&m).unwrap(), f1_sum / inst.labels.len() as f64)?;
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for class in inst.labels.iter().map(|l| Some(l.as_str())).chain([None]) {
            let (a, b, c, _) = pair_counts(&inst, class);
            tp += a;
            fp += b;
            fn_ += c;
        }
        check("micro", metrics::micro_f1(&m).unwrap(), oracle_f1(tp, fp, fn_))?;
        check("mcc_multiclass", metrics::mcc_multiclass(&m).unwrap(), oracle_mcc_multiclass(&inst))?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.2}s");
    Ok(format!("1000 instances, max |diff| {worst:.1e}, {secs:.2}s"))
}

fn micro_equals_accuracy() -> Outcome {
    for seed in 0..1000u64 {
        let inst = random_instance(seed);
        let m = metrics::confusion_matrix(&inst.golds, &inst.preds, &inst.labels).unwrap();
        let correct = inst.golds.iter().zip(&inst.preds).filter(|(g, p)| g == p).count();
        let acc = correct as f64 / inst.golds.len() as f64;
        let micro = metrics::micro_f1(&m).unwrap();
        ensure!(micro == acc, "seed {seed}: micro {micro} != accuracy {acc}");
        ensure!(micro == m.accuracy().unwrap(), "seed {seed}: matrix accuracy differs");
    }
    Ok("exact on 1000 instances".into())
}

fn hand_fixture() -> Outcome {
    let m = metrics::confusion_matrix(&["A", "A", "B"], &["A", "B", "B"], &["A", "B"]).unwrap();
    let (macro_, micro) = (metrics::macro_f1(&m).unwrap(), metrics::micro_f1(&m).unwrap());
    // F1(A) = 2/3, F1(B) = 2/3, accuracy 2/3
    ensure!(macro_ == 2.0 / 3.0, "macro {macro_}");
    ensure!(micro == 2.0 / 3.0, "micro {micro}");
    Ok("macro = micro = 2/3".into())
}

fn ci_protocol() -> Outcome {
    let flat = ci95(&[0.7; 5]).unwrap();
    ensure!(flat.lower == flat.upper && flat.mean == 0.7, "flat interval {flat:?}");
    let ci = ci95(&[0.8, 1.0]).unwrap();
    // t(0.975, df=1) = tan(0.475 pi); s = sqrt(0.02); half = t * s / sqrt(2)
    let half = (0.475 * std::f64::consts::PI).tan() * 0.02f64.sqrt() / 2f64.sqrt();
    ensure!(close(ci.mean, 0.9, 1e-12), "mean {}", ci.mean);
    ensure!(close(ci.lower, 0.9 - half, 1e-9), "lower {} vs {}", ci.lower, 0.9 - half);
    ensure!(close(ci.upper, 0.9 + half, 1e-9), "upper {} vs {}", ci.upper, 0.9 + half);
    Ok(format!("zero width on equal runs; df=1 half width {half:.9}"))
}

// ------------------------------------------------------------ quality control

fn quality_exhaustive() -> Outcome {
    use SdohLabel::*;
    let required = EvictionPending;
    let alphabet = [EvictionPending, EvictionAbsent, EvictionHypothetical];
    let programs = CascadePrograms::defaults(&Taxonomy::builtin());
    let settings = AnnotateSettings {
        seed: Some(0),
        ..Default::default()
    };
    let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
    for a in alphabet {
        for b in alphabet {
            for c in alphabet {
                let triple = [a, b, c];
                let backend = Arc::new(ScriptedBackend::new().fallback(move |r| {
                    let pass = r.seed.unwrap_or(0) as usize;
                    Ok(format!("Reasoning: scripted pass {pass}.\nLabel: {}", triple[pass]))
                }));
                let gw = Gateway::from_arc(backend.clone());
                let mut pool = NotePool::new([
                    RawNote::new("src", "Lives with spouse.", NoteSource::MimicLike),
                    RawNote::new("spare", "Lives alone.", NoteSource::MimicLike),
                ])
                .unwrap();
                pool.draw(1).unwrap();
                let before = pool.counts();
                let out = validate_example("generated", "src", required, &programs, &gw, &settings, &mut pool)
                    .map_err(|e| e.to_string())?;
                let after = pool.counts();
                let (want, calls, label) = if a == required {
                    (Decision::AcceptedAsRequired, 1, Some(required))
                } else if a == b && b == c {
                    (Decision::AcceptedAsAnnotated, 3, Some(a))
                } else {
                    (Decision::Discarded, 3, None)
                };
                let case = format!("{a}/{b}/{c}");
                ensure!(out.decision == want, "{case}: {:?} != {want:?}", out.decision);
                ensure!(out.final_label == label, "{case}: label {:?}", out.final_label);
                ensure!(backend.calls() == calls, "{case}: {} passes run", backend.calls());
                let returned = after.available - before.available;
                let state = pool.get("src").unwrap().state;
                if want == Decision::Discarded {
                    ensure!(returned == 1 && state == NoteState::Available, "{case}: {returned} pool returns");
                } else {
                    ensure!(returned == 0 && state == NoteState::Consumed, "{case}: source note {state:?}");
                }
                *tally.entry(match want {
                    Decision::AcceptedAsRequired => "required",
                    Decision::AcceptedAsAnnotated => "annotated",
                    Decision::Discarded => "discarded",
                }).or_default() += 1;
            }
        }
    }
    let total: usize = tally.values().sum();
    ensure!(total == 27, "{total} cases");
    Ok(format!("27/27 triples, {tally:?}"))
}

// ------------------------------------------------------------ augmenter loop

fn revision_backend() -> Gateway {
    Gateway::new(
        ScriptedBackend::new()
            .on_contains("You maintain a prompt template", |r| {
                let text = r.last_user_content();
                let start = text.find("<<<\n").unwrap() + 4;
                let end = text.find("\n>>>").unwrap();
                Ok(format!("{}\nName the court date explicitly.", &text[start..end]))
            })
            .fallback(|r| Ok(format!("Synthetic note {}", &r.fingerprint()[..12]))),
    )
}

fn big_pool() -> NotePool {
    NotePool::new((0..400).map(|i| {
        RawNote::new(format!("raw-{i:03}"), format!("Social History:\nLives with family, case {i}."), NoteSource::MimicLike)
    }))
    .unwrap()
}

fn loop_config() -> AugmenterConfig {
    AugmenterConfig {
        batch_size: 100,
        ..AugmenterConfig::default()
    }
}

/// Steps the session by hand, asserting the accepted set never shrinks.
fn stepped(fractions: &[f64]) -> Result<(usize, usize, SessionStatus), String> {
    let gw = revision_backend();
    let mut pool = big_pool();
    let taxonomy = Taxonomy::builtin();
    let mut verifier = ScriptedVerifier {
        fractions: fractions.to_vec(),
    };
    let mut session = AugmentSession::start(
        AugmenterState::new(SdohLabel::EvictionPending),
        &taxonomy,
        loop_config(),
        &mut pool,
        &gw,
    )
    .map_err(|e| e.to_string())?;
    let mut previous: BTreeSet<String> = BTreeSet::new();
    loop {
        for (id, passed, feedback) in verifier.verify(&session.batch) {
            session.record_verdict(&id, passed, feedback).map_err(|e| e.to_string())?;
        }
        session.advance(&mut pool, &gw).map_err(|e| e.to_string())?;
        let now: BTreeSet<String> = session.state.accepted.iter().map(|a| a.item_id.clone()).collect();
        ensure!(previous.is_subset(&now), "accepted set shrank in round {}", session.state.round_index);
        previous = now;
        if session.status != SessionStatus::Reviewing {
            return Ok((session.state.history.len(), session.state.optimizations, session.status));
        }
    }
}

fn augmenter_loop() -> Outcome {
    let cases: [(&[f64], usize, usize, SessionStatus); 3] = [
        (&[0.95], 1, 0, SessionStatus::Completed),
        (&[0.80, 0.92], 2, 1, SessionStatus::Completed),
        (&[0.5, 0.5, 0.5], 3, 2, SessionStatus::Exhausted),
    ];
    for (fractions, rounds, opts, status) in cases {
        let got = stepped(fractions)?;
        ensure!(got == (rounds, opts, status), "{fractions:?}: {got:?}");
        let mut pool = big_pool();
        let result = run_until_threshold(
            AugmenterState::new(SdohLabel::EvictionPending),
            &Taxonomy::builtin(),
            loop_config(),
            &mut pool,
            &revision_backend(),
            &mut ScriptedVerifier {
                fractions: fractions.to_vec(),
            },
        )
        .map_err(|e| e.to_string())?;
        ensure!(result.rounds_run() == rounds, "{fractions:?}: loop ran {} rounds", result.rounds_run());
        match status {
            SessionStatus::Exhausted => ensure!(
                matches!(result.outcome, Err(AugmentError::ThresholdNotReached { max_rounds: 3 })),
                "{fractions:?}: {:?}",
                result.outcome
            ),
            _ => ensure!(result.outcome.is_ok(), "{fractions:?}: {:?}", result.outcome),
        }
    }
    Ok("(0.95)->1 round/0 opt; (0.80,0.92)->2/1; (0.5x3)->ThresholdNotReached".into())
}

// ------------------------------------------------------------ optimizer

const PENDING: AnnotationLabel = AnnotationLabel::Sdoh(SdohLabel::EvictionPending);
const CURRENT: AnnotationLabel = AnnotationLabel::Sdoh(SdohLabel::EvictionPresentCurrent);

fn answer(label: AnnotationLabel) -> Result<String, GatewayError> {
    Ok(format!("Reasoning: Let's think step by step in order to decide.\nLabel: {label}"))
}

fn demo_notes(r: &CompletionRequest) -> Vec<String> {
    let users: Vec<&str> = r
        .messages
        .iter()
        .filter(|m| m.role == Role::User)
        .map(|m| m.content.trim_start_matches("Note: "))
        .collect();
    users[..users.len() - 1].iter().map(|s| s.to_string()).collect()
}

fn optimizer_argmax() -> Outcome {
    let train: Vec<LabeledExample> = (0..6).map(|j| LabeledExample::new(format!("train {j}"), PENDING)).collect();
    let dev: Vec<LabeledExample> = (0..3).map(|j| LabeledExample::new(format!("dev {j}"), PENDING)).collect();
    let base = PromptProgram::new("Label the eviction status.", Step::Eviction);
    let config = OptimizerConfig::with_seed(11);
    let subsets = candidate_subsets(train.len(), config.num_candidates, config.max_demos, config.seed);
    let golden_index = (1..subsets.len())
        .find(|&i| subsets.iter().filter(|s| **s == subsets[i]).count() == 1)
        .ok_or("no unique candidate subset")?;
    let golden: Vec<String> = subsets[golden_index].iter().map(|j| format!("train {j}")).collect();
    let run = || {
        let golden = golden.clone();
        let gw = Gateway::new(ScriptedBackend::new().fallback(move |r| {
            answer(if demo_notes(r) == golden { PENDING } else { CURRENT })
        }));
        optimize(&base, &train, &dev, &config, &gw, &AnnotateSettings::default())
    };
    let first = run().map_err(|e| e.to_string())?;
    let second = run().map_err(|e| e.to_string())?;
    let perfect: Vec<usize> = first.scores.iter().filter(|c| c.score == 1.0).map(|c| c.index).collect();
    ensure!(perfect == vec![golden_index], "perfect candidates {perfect:?}, expected [{golden_index}]");
    ensure!(first.best_index == golden_index, "picked {}", first.best_index);
    ensure!(first.best.demos.len() == subsets[golden_index].len(), "best program demos differ");
    ensure!(first.scores == second.scores, "score tables differ between runs");

    let tie = Gateway::new(ScriptedBackend::new().fallback(|_| answer(PENDING)));
    let tied = optimize(&base, &train, &dev, &config, &tie, &AnnotateSettings::default()).map_err(|e| e.to_string())?;
    ensure!(tied.scores.iter().all(|c| c.score == 1.0), "tie fixture not tied");
    ensure!(tied.best_index == 0 && tied.best == base, "tie picked {}", tied.best_index);
    Ok(format!("unique winner {golden_index} of {}, identical tables, tie -> 0", subsets.len()))
}

// ------------------------------------------------------------ cascade

fn cascade_routing() -> Outcome {
    let programs = CascadePrograms::defaults(&Taxonomy::builtin());
    let step_of = |r: &CompletionRequest| -> Step {
        let system = &r.messages[0].content;
        if system.contains("exactly one of: Yes, No") {
            Step::Binary
        } else if system.contains("t3_Eviction_absent") {
            Step::Eviction
        } else {
            Step::NonEviction
        }
    };
    // (step-1 reply, second reply, expected route, expect error)
    let fixtures = [
        ("Label: Yes", "Label: t3_Eviction_pending", Some(Step::Eviction), false),
        ("Label: No", "Label: t1_Homelessness", Some(Step::NonEviction), false),
        ("no idea", "Label: t1_Homelessness", None, true),
        ("Label: Yes", "still no idea", Some(Step::Eviction), true),
    ];
    for (i, (first, second, route, fails)) in fixtures.into_iter().enumerate() {
        let backend = Arc::new(ScriptedBackend::new().fallback(move |r| {
            Ok(if step_of(r) == Step::Binary { first } else { second }.to_string())
        }));
        let gw = Gateway::from_arc(backend.clone());
        let result = annotate_cascade("n", "note text", &programs, &gw, &AnnotateSettings::default());
        let steps: Vec<Step> = backend.requests().iter().map(step_of).collect();
        let ran_eviction = steps.contains(&Step::Eviction);
        let ran_non = steps.contains(&Step::NonEviction);
        ensure!(!(ran_eviction && ran_non), "fixture {i}: both second steps ran");
        ensure!(ran_eviction == (route == Some(Step::Eviction)), "fixture {i}: eviction step ran = {ran_eviction}");
        ensure!(ran_non == (route == Some(Step::NonEviction)), "fixture {i}: non-eviction step ran = {ran_non}");
        match (result, fails) {
            (Ok(trace), false) => {
                ensure!(trace.step2().is_some() != trace.step3().is_some(), "fixture {i}: trace second step");
            }
            (Err(e), true) => {
                ensure!(e.trace.note_id == "n", "fixture {i}: error lost its trace");
                ensure!(e.trace.second.is_none(), "fixture {i}: failed step recorded as result");
            }
            (r, _) => return Err(format!("fixture {i}: unexpected {r:?}")),
        }
    }
    let g = SdohLabel::EvictionPending;
    ensure!(cascaded_correct(true, Some(g), true, g), "correct route and label");
    ensure!(!cascaded_correct(false, Some(g), true, g), "right label after wrong route counted");
    ensure!(!cascaded_correct(true, None::<SdohLabel>, true, g), "missing second step counted");
    ensure!(!cascaded_correct(true, Some(SdohLabel::EvictionAbsent), true, g), "wrong label counted");
    Ok("Yes/No/unparseable fixtures route to exactly one step; Step 1 gates correctness".into())
}

// ------------------------------------------------------------ dataset

fn split_plan_fidelity() -> Outcome {
    use SdohLabel::*;
    // (label, sft, has real test notes)
    let rows = [
        (EvictionAbsent, 500, false),
        (EvictionHypothetical, 750, true),
        (EvictionMrCurrent, 750, true),
        (EvictionMrHistory, 750, true),
        (EvictionPending, 750, true),
        (EvictionPresentCurrent, 750, true),
        (EvictionPresentHistory, 750, true),
        (Homelessness, 450, false),
        (InadequateHousing, 450, true),
        (LackOfAdequateFood, 450, true),
        (FinancialInsecurity, 450, true),
        (HousingInstability, 450, true),
        (MaterialHardship, 450, true),
        (TransportationInsecurity, 300, true),
    ];
    let mut expected = BTreeMap::new();
    for (label, sft, real) in rows {
        expected.insert((label, Split::DspyTrain, Source::Synth), 8);
        expected.insert((label, Split::DspyEval, Source::Synth), 12);
        expected.insert((label, Split::Sft, Source::Synth), sft);
        expected.insert((label, Split::Test, Source::Synth), 20);
        if real {
            expected.insert((label, Split::Test, Source::Mimic), 20);
            expected.insert((label, Split::Test, Source::Pmc), 8);
        }
    }
    let plan = SplitPlan::default();
    ensure!(plan.table() == &expected, "default plan differs from the reference table");
    ensure!(plan.total(&SdohLabel::EVICTION, Split::Sft) == 5000, "eviction SFT total");
    ensure!(plan.total(&SdohLabel::NON_EVICTION, Split::Sft) == 3000, "non-eviction SFT total");
    ensure!(plan.row(EvictionAbsent, Split::Test) == (20, 0, 0), "absent test row");
    ensure!(plan.row(EvictionPending, Split::Test) == (20, 20, 8), "pending test row");
    Ok(format!("{} cells match; SFT totals 5000/3000", expected.len()))
}

fn records(n: usize, source: Source, with_rationale: bool) -> Vec<Record> {
    (0..n)
        .map(|i| {
            let label = SdohLabel::CLASSES[i % 14];
            let r = Record::new(format!("{source} note {i}"), label, source, Split::Sft);
            if with_rationale {
                r.with_rationale(format!("The note describes case {i}."))
            } else {
                r
            }
        })
        .collect()
}

fn composition_mixing() -> Outcome {
    let synth = records(1200, Source::Synth, false);
    let mut real = records(250, Source::Pmc, false);
    real.extend(records(250, Source::Mimic, false));
    let mixed = mix_composition(&synth, &real, 1000, 0.3, 42).map_err(|e| e.to_string())?;
    let n_real = mixed.iter().filter(|r| r.source.is_real()).count();
    let n_synth = mixed.iter().filter(|r| r.source == Source::Synth).count();
    ensure!((n_real, n_synth) == (300, 700), "{n_real} real + {n_synth} synth");
    let ids: BTreeSet<&str> = mixed.iter().map(|r| r.id.as_str()).collect();
    ensure!(ids.len() == 1000, "{} distinct ids", ids.len());
    let again = mix_composition(&synth, &real, 1000, 0.3, 42).unwrap();
    ensure!(again == mixed, "same seed, different draw");
    let other = mix_composition(&synth, &real, 1000, 0.3, 43).unwrap();
    ensure!(other != mixed, "seed has no effect");
    Ok("300 real + 700 synth, disjoint, seed-deterministic".into())
}

fn export_parity() -> Outcome {
    let rs = records(200, Source::Synth, true);
    let with = export_sft(&rs, true).map_err(|e| e.to_string())?;
    let without = export_sft(&rs, false).map_err(|e| e.to_string())?;
    let a: BTreeSet<_> = with.iter().map(|e| e.projection()).collect();
    let b: BTreeSet<_> = without.iter().map(|e| e.projection()).collect();
    ensure!(a == b, "projections differ");
    let gold: BTreeSet<_> = rs.iter().map(|r| (r.id.clone(), r.text.clone(), r.label.to_string())).collect();
    ensure!(a == gold, "projection differs from the records");
    let bare = records(3, Source::Synth, false);
    ensure!(export_sft(&bare, true).is_err(), "missing rationale accepted");
    Ok(format!("{} examples project identically", a.len()))
}

// ------------------------------------------------------------ replay

fn replay_determinism() -> Outcome {
    let start = Instant::now();
    let config = support::toy_flow::toy_config();
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let built = build_gateway(&config.gateway).map_err(|e| e.to_string())?;
        let cassette = built.cassette.clone().ok_or("no cassette layer")?;
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        support::toy_flow::run(dir.path(), &config, built.gateway);
        ensure!(cassette.inner_calls() == 0, "{} live calls", cassette.inner_calls());
        snapshots.push(support::toy_flow::snapshot(dir.path()));
    }
    let (a, b) = (&snapshots[0], &snapshots[1]);
    let names = |s: &Vec<(String, Vec<u8>)>| s.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    ensure!(names(a) == names(b), "file sets differ: {:?} vs {:?}", names(a), names(b));
    for ((name, x), (_, y)) in a.iter().zip(b) {
        ensure!(x == y, "{name} differs between runs");
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1}s");
    let bytes: usize = a.iter().map(|(_, x)| x.len()).sum();
    Ok(format!("{} files ({bytes} bytes) identical, 0 live calls, {secs:.1}s", a.len()))
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("metrics oracle equivalence", metrics_oracle),
        ("micro-F1 equals accuracy", micro_equals_accuracy),
        ("hand-worked fixture", hand_fixture),
        ("CI protocol", ci_protocol),
        ("quality-control exhaustiveness", quality_exhaustive),
        ("augmenter loop state machine", augmenter_loop),
        ("optimizer determinism and argmax", optimizer_argmax),
        ("cascade routing totality", cascade_routing),
        ("split-plan fidelity", split_plan_fidelity),
        ("composition mixing", composition_mixing),
        ("export parity", export_parity),
        ("replay determinism", replay_determinism),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name:<36} {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<36} {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
