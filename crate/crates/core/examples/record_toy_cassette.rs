//! Re-records `data/toy/cassette.ndjson` by running the toy pipeline against
//! the rule-based toy model. Run after changing any prompt text:
//!
//! ```text
//! cargo run -p sdoh-pipeline --example record_toy_cassette
//! ```

#[path = "../tests/support/mod.rs"]
mod support;

use std::sync::Arc;

use sdoh_pipeline::gateway::{Cassette, CassetteBackend, CassetteMode, Gateway, ScriptedBackend};

fn main() {
    let config = support::toy_flow::toy_config();
    let toy = Arc::new(ScriptedBackend::new().fallback(support::toy_model::respond));
    let backend = Arc::new(CassetteBackend::new(CassetteMode::Record, Cassette::new(), Some(toy)));
    let gateway = Arc::new(Gateway::from_arc(backend.clone()).with_max_in_flight(config.gateway.max_in_flight));
    let work = tempfile::tempdir().expect("tempdir");
    support::toy_flow::run(work.path(), &config, gateway);

    let mut entries = backend.snapshot().entries().to_vec();
    entries.sort_by(|a, b| a.fingerprint.cmp(&b.fingerprint));
    let path = config.gateway.cassette.expect("toy config names a cassette");
    Cassette::from_entries(entries.clone()).save(&path).expect("save cassette");
    println!("{} entries -> {}", entries.len(), path.display());
}
