//! Rule-based stand-in for the LLM, used only to record the toy cassette.
//! It recognizes the three request shapes the pipeline sends: augmentation
//! prompts, prompt-revision meta prompts, and cascade annotation prompts.

use sha2::{Digest, Sha256};

use sdoh_pipeline::gateway::{CompletionRequest, GatewayError, Role};
use sdoh_pipeline::ingest::{keyword_scan, KeywordTable};
use sdoh_pipeline::program::REASONING_PREFIX;
use sdoh_pipeline::taxonomy::SdohLabel;

/// Line the revised template gains; generations under it are always clean.
pub const REVISION_RULE: &str =
    "6. State the concrete housing event and when it happened in plain words.";

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let to = text[from..].find(end)? + from;
    Some(&text[from..to])
}

fn bucket(text: &str, n: u8) -> u8 {
    Sha256::digest(text.as_bytes())[0] % n
}

pub fn respond(request: &CompletionRequest) -> Result<String, GatewayError> {
    let system = request
        .messages
        .iter()
        .find(|m| m.role == Role::System)
        .map(|m| m.content.as_str());
    if let Some(system) = system.filter(|s| s.contains("Follow the following format.")) {
        let note = request.last_user_content().trim_start_matches("Note: ");
        return Ok(annotate(system, note, request.seed.unwrap_or(0)));
    }
    let text = request.last_user_content();
    if let Some(current) = between(text, "<<<\n", "\n>>>") {
        return Ok(revise(current));
    }
    if let (Some(raw), Some(label)) = (
        between(text, "Here is the raw note: ", "\nAnd the specific label: "),
        between(text, "And the specific label: ", "\n"),
    ) {
        let clean = text.contains(REVISION_RULE);
        return Ok(augment(raw.trim(), label.trim(), clean));
    }
    Err(GatewayError::InvalidRequest("toy model: unrecognized request".into()))
}

fn revise(current: &str) -> String {
    match current.rfind("Augmented Notes:") {
        Some(at) => format!("{}{REVISION_RULE}\n{}", &current[..at], &current[at..]),
        None => format!("{current}\n{REVISION_RULE}"),
    }
}

fn augment(raw: &str, label: &str, clean: bool) -> String {
    let variant = if clean { 0 } else { bucket(raw, 4) };
    let cue = match (label, variant) {
        ("t3_Eviction_pending", 2) => {
            "He was evicted last month once the notice to quit expired and now stays with his brother."
        }
        ("t3_Eviction_pending", 3) => {
            "His landlord talked about eviction and a notice may or may not have been served; the situation is unclear."
        }
        ("t3_Eviction_pending", _) => {
            "He received a notice to quit from his landlord and has a hearing in housing court next week."
        }
        ("t1_Homelessness", 3) => {
            "She has been couch surfing with friends since her lease ended and keeps her belongings in a storage unit."
        }
        ("t1_Homelessness", _) => {
            "She currently sleeps at a shelter downtown after losing her apartment two months ago."
        }
        ("t2_FinancialInsecurity", _) => {
            "He cannot afford his medications this month and has medical debt from a prior admission."
        }
        _ => "Social circumstances are otherwise unremarkable.",
    };
    format!("{raw} {cue}")
}

fn answer(reason: &str, label: &str) -> String {
    format!("Reasoning: {REASONING_PREFIX} label the note. {reason}\nLabel: {label}")
}

fn annotate(system: &str, note: &str, seed: u64) -> String {
    let lower = note.to_lowercase();
    let has = |words: &[&'static str]| -> Option<&'static str> { words.iter().find(|w| lower.contains(**w)).copied() };
    let tokens = system.rsplit("exactly one of: ").next().unwrap_or("");
    if tokens.trim() == "Yes, No" {
        return match has(&["evict", "notice to quit", "housing court"]) {
            Some(w) => answer(&format!("The note mentions \"{w}\", which concerns eviction."), "Yes"),
            None => answer("Nothing in the note concerns eviction.", "No"),
        };
    }
    if tokens.contains("t3_Eviction_absent") {
        let recent = has(&["last month", "this month", "this year", "last week", "next week"]).is_some();
        let (label, reason) = if let Some(w) = has(&["rescind", "mutual agreement"]) {
            let l = if recent { "t3_Eviction_mr_current" } else { "t3_Eviction_mr_history" };
            (l, format!("\"{w}\" points to a mutual rescission."))
        } else if let Some(w) = has(&["denies any eviction", "no history of eviction"]) {
            ("t3_Eviction_absent", format!("\"{w}\" rules eviction out."))
        } else if lower.contains("unclear") {
            let l = if seed.is_multiple_of(2) { "t3_Eviction_hypothetical" } else { "t3_Eviction_pending" };
            (l, "The status of the eviction is unclear.".to_string())
        } else if let Some(w) = has(&["was evicted", "were evicted", "been evicted"]) {
            let l = if recent { "t3_Eviction_present_current" } else { "t3_Eviction_present_history" };
            (l, format!("\"{w}\" shows a completed eviction."))
        } else if let Some(w) = has(&["notice to quit", "housing court", "hearing"]) {
            ("t3_Eviction_pending", format!("\"{w}\" shows an eviction in progress."))
        } else if let Some(w) = has(&["might", "worried", "at risk"]) {
            ("t3_Eviction_hypothetical", format!("\"{w}\" describes a possible future eviction."))
        } else {
            ("Other", "No eviction status can be read from the note.".to_string())
        };
        return answer(&reason, label);
    }
    let hits = keyword_scan(note, &KeywordTable::builtin());
    match SdohLabel::NON_EVICTION.iter().find(|l| hits.contains(l)) {
        Some(l) => answer(&format!("The note describes {}.", l.short_name().to_lowercase()), l.canonical_name()),
        None => answer("No listed social need is described.", "Other"),
    }
}
